#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Sinkhorn 迭代与势函数测试"""

import numpy as np
import pytest

from conftest import random_positive_problem, scale
from core.errors import InsufficientHistory, InvalidInput, NotApplicable, NumericOverflow
from core.model import ScalingState, build_problem, initial_state, marginals, scaled_matrix
from workflows.balancing import (
    BalancingWorkflow,
    SinkhornConfig,
    attach_reference,
    normalize_gauge,
    normalize_prior_scale,
    optimality_gap_identity_check,
    potential,
    prior_scale,
    regularized_potential,
    regularized_step,
    run,
    sinkhorn_half_step_col,
    sinkhorn_half_step_row,
    solve,
)
from workflows.feasibility import check_feasibility


def test_row_half_step_matches_row_targets(positive_problem):
    state = sinkhorn_half_step_row(positive_problem, initial_state(positive_problem))

    np.testing.assert_allclose(marginals(positive_problem, state).row_sums, positive_problem.p,
                               rtol=1e-13)


def test_col_half_step_matches_col_targets(positive_problem):
    state = sinkhorn_half_step_col(positive_problem, initial_state(positive_problem))

    np.testing.assert_allclose(marginals(positive_problem, state).col_sums, positive_problem.q,
                               rtol=1e-13)


def test_row_half_step_raises_on_overflow():
    prob = build_problem([[1e-6]], [1.0], [1.0])

    with pytest.raises(NumericOverflow):
        sinkhorn_half_step_row(prob, initial_state(prob), overflow_threshold=1e3)


def test_rank_one_potential_values(rank_one):
    g0 = potential(rank_one, initial_state(rank_one))

    _, report = run(rank_one, SinkhornConfig(tol=1e-12))

    assert g0.g_dual == pytest.approx(4.0, abs=1e-15)
    assert report.iterations == 1
    assert report.converged
    record = report.history[0]
    assert record.g_prev == pytest.approx(4.0, abs=1e-14)
    assert record.g == pytest.approx(2.0 + 2.0 * np.log(2.0), abs=1e-14)
    assert record.kl_row == pytest.approx(2.0 - 2.0 * np.log(2.0), abs=1e-14)
    assert record.kl_col == pytest.approx(0.0, abs=1e-15)
    assert optimality_gap_identity_check(rank_one, report) <= 1e-14


def test_dual_and_reparametrized_potentials_agree(positive_problem, rng):
    state = ScalingState(d0=rng.uniform(0.5, 2.0, size=8), d1=rng.uniform(0.5, 2.0, size=5))

    value = potential(positive_problem, state)

    assert value.g_dual == pytest.approx(value.g_reparam, rel=1e-12)


def test_optimality_gap_identity_on_random_instances(request, rng):
    count = scale(request, 20, 100)
    for _ in range(count):
        n, m = rng.integers(2, 21, size=2)
        prob = random_positive_problem(rng, int(n), int(m))
        _, report = run(prob, SinkhornConfig(tol=1e-12 * prob.total_mass, max_iterations=500))

        residual = optimality_gap_identity_check(prob, report)

        assert residual <= 1e-9 * abs(report.g_initial)


def test_potential_is_nonincreasing(positive_problem):
    _, report = run(positive_problem, SinkhornConfig(tol=1e-14, max_iterations=200))

    values = report.potentials()

    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_identity_check_requires_history():
    with pytest.raises(InsufficientHistory):
        optimality_gap_identity_check(None, [])


def test_identity_check_rejects_regularized_runs(positive_problem):
    config = SinkhornConfig(variant="regularized", alpha=2.0, beta=1.0, max_iterations=5)
    _, report = run(positive_problem, config)

    with pytest.raises(NotApplicable):
        optimality_gap_identity_check(positive_problem, report)


def test_normalize_gauge_example():
    state = ScalingState(d0=np.array([4.0, 1.0]), d1=np.array([1.0]))

    gauged = normalize_gauge(state)

    c = 4.0 ** (1.0 / 3.0)
    np.testing.assert_allclose(gauged.d0, [4.0 / c, 1.0 / c], rtol=1e-14)
    np.testing.assert_allclose(gauged.d1, [c], rtol=1e-14)
    assert np.log(gauged.d0).sum() == pytest.approx(np.log(gauged.d1).sum(), abs=1e-14)


def test_normalize_gauge_keeps_scaled_matrix(positive_problem, rng):
    state = ScalingState(d0=rng.uniform(0.1, 10.0, size=8), d1=rng.uniform(0.1, 10.0, size=5))

    before = scaled_matrix(positive_problem, state).toarray()
    after = scaled_matrix(positive_problem, normalize_gauge(state)).toarray()

    np.testing.assert_allclose(after, before, rtol=1e-13)


def test_normalized_variant_matches_plain(positive_problem):
    plain_state, plain = run(positive_problem, SinkhornConfig(tol=1e-12))
    norm_state, normalized = run(positive_problem, SinkhornConfig(variant="normalized", tol=1e-12))

    assert plain.converged and normalized.converged
    np.testing.assert_allclose(scaled_matrix(positive_problem, norm_state).toarray(),
                               scaled_matrix(positive_problem, plain_state).toarray(), atol=1e-10)
    assert np.log(norm_state.d0).sum() == pytest.approx(np.log(norm_state.d1).sum(), abs=1e-9)


def test_normalized_variant_has_same_potential_sequence(positive_problem):
    _, plain = run(positive_problem, SinkhornConfig(tol=1e-300, max_iterations=40))
    _, normalized = run(positive_problem, SinkhornConfig(variant="normalized", tol=1e-300,
                                                         max_iterations=40))

    np.testing.assert_allclose(normalized.potentials(), plain.potentials(), rtol=1e-9)


def test_weak_prior_approaches_plain_fixed_point(positive_problem):
    plain_state, _ = solve(positive_problem)
    config = SinkhornConfig(variant="regularized", alpha=1.0 + 1e-6, beta=1e-6, tol=1e-12)

    state, report = run(positive_problem, config)

    assert report.converged
    assert report.iterations <= 2000
    assert state.d0.sum() == pytest.approx(prior_scale(positive_problem, 1.0 + 1e-6, 1e-6), rel=1e-9)
    np.testing.assert_allclose(scaled_matrix(positive_problem, state).toarray(),
                               scaled_matrix(positive_problem, plain_state).toarray(), atol=1e-3)


def test_counter_example_decays_sublinearly(counter_example):
    for iterations in (1000, 10000, 100000):
        state, report = run(counter_example, SinkhornConfig(tol=1e-15, max_iterations=iterations,
                                                            record_history=False))
        entry = scaled_matrix(counter_example, state).toarray()[0, 1]

        assert report.termination == "max_iter"
        assert entry == pytest.approx(3.0 / (2 * iterations + 3), rel=1e-6)
        assert 0.5 <= iterations * entry <= 10.0

    assert check_feasibility(counter_example).regime == "limit_scaling"


def test_counter_example_first_iteration(counter_example):
    state, _ = run(counter_example, SinkhornConfig(tol=1e-15, max_iterations=1))

    np.testing.assert_allclose(state.d1, [0.75, 1.5])
    np.testing.assert_allclose(state.d0, [4.0 / 3.0, 0.8])


def test_restored_strong_existence_converges_geometrically():
    prob = build_problem([[3.0, 1.0], [0.0, 2.0]], [3.5, 2.5], [3.0, 3.0])
    assert check_feasibility(prob).regime == "direct_scaling"

    reference_state, reference = solve(prob, tol=1e-14)
    prob = attach_reference(prob, reference_state)
    _, report = run(prob, SinkhornConfig(tol=1e-15, max_iterations=30, record_scalings=True))

    gaps = [potential(prob, ScalingState(rec.d0, rec.d1)).gap_to_reference
            for rec in report.history]
    ratios = [b / a for a, b in zip(gaps[:10], gaps[1:11]) if a > 1e-12]
    assert reference.converged
    assert ratios and max(ratios) < 1.0


def test_gap_to_reference_vanishes_at_reference(positive_problem):
    state, _ = solve(positive_problem)
    prob = attach_reference(positive_problem, state)

    assert potential(prob, state).gap_to_reference == 0.0
    assert potential(prob, initial_state(prob)).gap_to_reference > 0.0


def test_overflow_terminates_and_returns_last_good_state():
    prob = build_problem([[1e-6]], [1.0], [1.0])

    state, report = run(prob, SinkhornConfig(overflow_threshold=1e3))

    assert report.termination == "overflow"
    assert report.iterations == 0
    assert state.d0.tolist() == [1.0]
    assert state.d1.tolist() == [1.0]


def test_max_iter_termination(positive_problem):
    _, report = run(positive_problem, SinkhornConfig(tol=1e-300, max_iterations=3))

    assert report.termination == "max_iter"
    assert report.iterations == 3
    assert len(report.history) == 3


def test_max_scaling_update_stop_metric(positive_problem):
    _, report = run(positive_problem, SinkhornConfig(stop_metric="max_scaling_update", tol=1e-12))

    assert report.converged
    assert report.history[-1].max_update < 1e-12


def test_regularized_run_descends_regularized_potential(positive_problem):
    config = SinkhornConfig(variant="regularized", alpha=2.0, beta=1.0, tol=1e-12)

    state, report = run(positive_problem, config)

    values = report.potentials()
    assert report.converged
    assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(regularized_potential(positive_problem, state, 2.0, 1.0),
                                       rel=1e-12)
    fixed = regularized_step(positive_problem, state, 2.0, 1.0)
    np.testing.assert_allclose(fixed.d0, state.d0, rtol=1e-9)


def test_regularized_requires_valid_prior(positive_problem):
    with pytest.raises(InvalidInput):
        SinkhornConfig(variant="regularized", alpha=1.0, beta=1.0)
    with pytest.raises(InvalidInput):
        regularized_step(positive_problem, initial_state(positive_problem), 2.0, 0.0)


def test_config_validation():
    with pytest.raises(InvalidInput):
        SinkhornConfig(variant="fast")
    with pytest.raises(InvalidInput):
        SinkhornConfig(stop_metric="gap")
    with pytest.raises(InvalidInput):
        SinkhornConfig(tol=0.0)


def test_config_from_file_with_overrides(config_manager):
    config = SinkhornConfig.from_config(config_manager, tol=1e-6, variant=None)

    assert config.tol == 1e-6
    assert config.variant == "plain"
    assert config.max_iterations == 100000
    assert config.alpha is None


def test_process_balance_reports_limit_scaling(counter_example):
    workflow = BalancingWorkflow()

    result = workflow.process_balance(counter_example, SinkhornConfig(tol=1e-15, max_iterations=500))

    assert not result["success"]
    assert result["status"] == "limit_scaling"
    assert result["regime_hint"] == "limit_scaling"


def test_process_balance_converged(positive_problem):
    progress = []
    workflow = BalancingWorkflow(progress_callback=lambda value, message: progress.append(value))

    result = workflow.process_balance(positive_problem, SinkhornConfig(tol=1e-10),
                                      include_history=True)

    assert result["success"]
    assert result["status"] == "converged"
    assert result["report"]["history"][0]["t"] == 1
    assert progress[-1] == 1.0


def _unit_mass_problem(rng, n, m):
    """p, q 总和都为 1 的严格正问题"""
    a = rng.uniform(0.1, 2.0, size=(n, m))
    p = rng.dirichlet(np.ones(n))
    q = rng.dirichlet(np.ones(m))
    return build_problem(a, p, q)


def test_row_error_bounded_by_potential_decrease(request, rng):
    count = scale(request, 20, 100)
    for _ in range(count):
        n, m = rng.integers(2, 16, size=2)
        prob = _unit_mass_problem(rng, int(n), int(m))
        _, report = run(prob, SinkhornConfig(tol=1e-300, max_iterations=30))

        # 第 t 步的 kl_row 是第 t - 1 步结束时的行误差
        for prev, rec in zip(report.history, report.history[1:]):
            assert prev.l1_row_err ** 2 <= 2.0 * (rec.g_prev - rec.g) + 1e-12


def test_snapshot_l1_error_bounded_by_kl(request, rng):
    count = scale(request, 10, 50)
    for _ in range(count):
        n, m = rng.integers(2, 16, size=2)
        prob = _unit_mass_problem(rng, int(n), int(m))
        _, report = run(prob, SinkhornConfig(tol=1e-300, max_iterations=10, record_scalings=True))

        for rec in report.history:
            snapshot = marginals(prob, ScalingState(rec.d0, rec.d1))
            assert snapshot.l1_row_err ** 2 <= 2.0 * snapshot.kl_row + 1e-14
            assert snapshot.l1_col_err ** 2 <= 2.0 * snapshot.kl_col + 1e-14


def test_marginals_unchanged_by_gauge(positive_problem, rng):
    state = ScalingState(d0=rng.uniform(0.1, 10.0, size=8), d1=rng.uniform(0.1, 10.0, size=5))
    before = marginals(positive_problem, state)

    for c in (0.25, 2.0, 1024.0):
        after = marginals(positive_problem, ScalingState(state.d0 * c, state.d1 / c))
        np.testing.assert_array_max_ulp(after.row_sums, before.row_sums, maxulp=4)
        np.testing.assert_array_max_ulp(after.col_sums, before.col_sums, maxulp=4)

    c = rng.uniform(0.01, 100.0)
    after = marginals(positive_problem, ScalingState(state.d0 * c, state.d1 / c))
    np.testing.assert_allclose(after.row_sums, before.row_sums, rtol=1e-13)
    np.testing.assert_allclose(after.col_sums, before.col_sums, rtol=1e-13)


def test_normalize_gauge_keeps_potential(positive_problem, rng):
    state = ScalingState(d0=rng.uniform(0.1, 10.0, size=8), d1=rng.uniform(0.1, 10.0, size=5))

    before = potential(positive_problem, state)
    after = potential(positive_problem, normalize_gauge(state))

    assert after.g_dual == pytest.approx(before.g_dual, rel=1e-10)
    assert after.g_reparam == pytest.approx(before.g_reparam, rel=1e-10)


def test_prior_scale_step_lowers_regularized_potential(positive_problem, rng):
    alpha, beta = 2.0, 0.5
    for _ in range(20):
        state = ScalingState(d0=rng.uniform(0.1, 10.0, size=8), d1=rng.uniform(0.1, 10.0, size=5))

        scaled = normalize_prior_scale(positive_problem, state, alpha, beta)

        assert scaled.d0.sum() == pytest.approx(prior_scale(positive_problem, alpha, beta), rel=1e-12)
        assert (regularized_potential(positive_problem, scaled, alpha, beta)
                <= regularized_potential(positive_problem, state, alpha, beta) + 1e-12)
        np.testing.assert_allclose(scaled_matrix(positive_problem, scaled).toarray(),
                                   scaled_matrix(positive_problem, state).toarray(), rtol=1e-12)


def test_prior_scale_value(positive_problem):
    # sum(q) = sum(p)，超出量为 m (alpha - 1)
    assert prior_scale(positive_problem, 3.0, 2.0) == pytest.approx(8.0 * 2.0 / 2.0, rel=1e-12)

    with pytest.raises(InvalidInput):
        prior_scale(positive_problem, 1.0, 2.0)


def test_history_records_gap_to_reference(positive_problem):
    reference_state, _ = solve(positive_problem, tol=1e-14)
    prob = attach_reference(positive_problem, reference_state)
    g_star = potential(prob, reference_state).g_dual

    _, report = run(prob, SinkhornConfig(tol=1e-300, max_iterations=25))

    gaps = [rec.gap for rec in report.history]
    assert all(gap is not None and gap >= -1e-12 for gap in gaps)
    assert all(b <= a + 1e-12 for a, b in zip(gaps, gaps[1:]))
    assert gaps[0] == pytest.approx(report.history[0].g - g_star, abs=1e-14)
    assert report.history[0].to_dict()["gap"] == gaps[0]


def test_history_has_no_gap_without_reference(positive_problem):
    _, report = run(positive_problem, SinkhornConfig(tol=1e-300, max_iterations=3))

    assert all(rec.gap is None for rec in report.history)
    assert "gap" not in report.history[0].to_dict()
