#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""复杂度常数基准测试"""

import numpy as np
import pytest

from core.errors import InvalidInput
from workflows.benchmark import (
    CSV_FIELDS,
    BenchmarkWorkflow,
    BenchSpec,
    fit_loglog_slope,
    generate_instance,
)


def test_generated_instance_is_valid(rng):
    prob = generate_instance(50, "uniform", 0.8, rng)

    dense = prob.a.toarray()
    assert dense.shape == (50, 100)
    assert np.all(dense.sum(axis=1) > 0) and np.all(dense.sum(axis=0) > 0)
    assert np.mean(dense == 0) == pytest.approx(0.8, abs=0.03)
    assert prob.q.sum() == pytest.approx(prob.p.sum(), rel=1e-12)
    assert dense.max() < 1.0


def test_folded_gaussian_entries_are_nonnegative(rng):
    prob = generate_instance(20, "folded_gaussian", 0.5, rng, m=30)

    assert prob.a.shape == (20, 30)
    assert prob.a.toarray().min() >= 0.0


def test_unknown_distribution_is_rejected(rng):
    with pytest.raises(InvalidInput):
        generate_instance(5, "cauchy", 0.5, rng)


def test_bench_spec_validation():
    with pytest.raises(InvalidInput):
        BenchSpec(sparsity=1.0)
    with pytest.raises(InvalidInput):
        BenchSpec(distributions=("cauchy",))
    with pytest.raises(InvalidInput):
        BenchSpec(seeds=0)


def test_bench_spec_from_config(config_manager):
    spec = BenchSpec.from_config(config_manager, sizes=[10, 20], seeds=None)

    assert spec.sizes == (10, 20)
    assert spec.seeds == 100
    assert spec.sparsity == 0.8


def test_loglog_slope_of_quadratic():
    ns = [50, 100, 150, 200]

    assert fit_loglog_slope(ns, [3.0 * n ** 2 for n in ns]) == pytest.approx(2.0, abs=1e-10)
    with pytest.raises(InvalidInput):
        fit_loglog_slope([50], [1.0])


def test_seed_results_are_deterministic():
    spec = BenchSpec(sizes=(8,), distributions=("uniform",), sparsity=0.5, seeds=1)
    workflow = BenchmarkWorkflow()

    first = workflow._run_seed(spec, 8, "uniform", 3)
    second = workflow._run_seed(spec, 8, "uniform", 3)

    assert first == second


def test_dense_instances_are_never_discarded(config_manager):
    spec = BenchSpec(sizes=(6, 12), distributions=("folded_gaussian", "uniform"),
                     sparsity=0.0, seeds=4)

    report = BenchmarkWorkflow(config_manager).run(spec)

    assert [(row.n, row.distribution) for row in report.rows] == [
        (6, "folded_gaussian"), (12, "folded_gaussian"), (6, "uniform"), (12, "uniform")]
    assert report.to_dict()["total_discarded"] == 0
    assert all(row.median_xi > 0 for row in report.rows)
    assert set(report.slopes) == {"folded_gaussian", "uniform"}


def test_report_csv_is_reproducible():
    spec = BenchSpec(sizes=(5, 10), distributions=("uniform",), sparsity=0.3, seeds=3)

    first = BenchmarkWorkflow().process_bench(spec)
    second = BenchmarkWorkflow().process_bench(spec)

    assert first["csv"] == second["csv"]
    lines = first["csv"].splitlines()
    assert lines[0] == ",".join(CSV_FIELDS)
    assert len(lines) == 3
    assert lines[1].startswith("5,uniform,")


@pytest.mark.slow
def test_median_xi_grows_about_quadratically():
    spec = BenchSpec(sizes=(50, 100, 150, 200), distributions=("folded_gaussian",), seeds=20)

    report = BenchmarkWorkflow().run(spec)

    assert 1.5 <= report.slopes["folded_gaussian"] <= 2.5
