#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""存在性、唯一性与连通性判定测试"""

import numpy as np
import pytest

from conftest import random_choice_dataset, scale
from core.errors import EmptyDataset
from core.model import NonnegMatrix, build_problem
from workflows.choice import ChoiceDataset
from workflows.feasibility import (
    FeasibilityWorkflow,
    check_choice_connectivity,
    check_existence,
    check_feasibility,
    check_uniqueness,
    cross_check_equivalence,
)


def test_uniqueness_detects_block_diagonal():
    assert not check_uniqueness(NonnegMatrix(np.eye(2)))
    assert check_uniqueness(NonnegMatrix(np.ones((2, 3))))
    assert check_uniqueness(NonnegMatrix([[3.0, 1.0], [0.0, 2.0]]))


def test_counter_example_has_strong_witness(counter_example):
    result = check_existence(counter_example)

    assert result.weak and not result.strong
    assert result.forced_edges == ((0, 1),)
    witness = result.witness
    assert witness.kind == "strong"
    assert witness.rows == (0,) and witness.cols == (0,)
    assert witness.row_mass == witness.col_mass == 3.0
    assert witness.edge == (0, 1)


def test_infeasible_problem_has_weak_witness():
    prob = build_problem([[1.0, 0.0], [1.0, 1.0]], [3.0, 1.0], [1.0, 3.0])

    verdict = check_feasibility(prob)

    assert verdict.regime == "infeasible"
    witness = verdict.witness
    assert witness.kind == "weak"
    assert witness.row_mass < witness.col_mass
    dense = prob.a.toarray()
    outside_rows = [i for i in range(prob.n_rows) if i not in witness.rows]
    assert all(dense[i, j] == 0 for i in outside_rows for j in witness.cols)


def test_fractional_marginals_restore_strong_existence():
    prob = build_problem([[3.0, 1.0], [0.0, 2.0]], [3.5, 2.5], [3.0, 3.0])

    verdict = check_feasibility(prob)

    assert verdict.strong_existence and verdict.uniqueness
    assert verdict.regime == "direct_scaling"
    assert verdict.witness is None


def test_non_unique_regime():
    prob = build_problem(np.eye(2), [1.0, 2.0], [1.0, 2.0])

    verdict = check_feasibility(prob)

    assert verdict.strong_existence
    assert verdict.regime == "non_unique"


def test_positive_matrix_is_direct_scaling(positive_problem):
    assert check_feasibility(positive_problem).regime == "direct_scaling"


def test_verdict_serializes():
    prob = build_problem([[3.0, 1.0], [0.0, 2.0]], [3.0, 3.0], [3.0, 3.0])

    payload = check_feasibility(prob).to_dict()

    assert payload["regime"] == "limit_scaling"
    assert payload["witness"]["edge"] == [0, 1]
    assert payload["forced_edges"] == [[0, 1]]


def _masks(size: int, proper: bool):
    """枚举 {0..size-1} 的子集，proper=True 时不含全集"""
    stop = 2 ** size - 1 if proper else 2 ** size
    for mask in range(stop):
        yield np.array([(mask >> k) & 1 for k in range(size)], dtype=bool)


def _enumerated_existence(a: np.ndarray, p: np.ndarray, q: np.ndarray):
    """对所有真子集对 (N, M) 直接检验存在性条件"""
    weak = strong = True
    for in_n in _masks(a.shape[0], proper=True):
        for in_m in _masks(a.shape[1], proper=True):
            if a[np.ix_(~in_n, in_m)].any():
                continue
            row_mass, col_mass = p[in_n].sum(), q[in_m].sum()
            if row_mass < col_mass:
                weak = False
            elif row_mass == col_mass and a[np.ix_(in_n, ~in_m)].any():
                strong = False
    return weak, weak and strong


def _enumerated_uniqueness(a: np.ndarray) -> bool:
    """不存在非平凡的 (N, M) 使 A 分块对角"""
    n, m = a.shape
    for in_n in _masks(n, proper=False):
        for in_m in _masks(m, proper=False):
            trivial = (not in_n.any() and not in_m.any()) or (in_n.all() and in_m.all())
            if trivial:
                continue
            if not a[np.ix_(~in_n, in_m)].any() and not a[np.ix_(in_n, ~in_m)].any():
                return False
    return True


def _random_support(rng, n: int, m: int, density: float) -> np.ndarray:
    """随机 0/1 矩阵，补齐全零行和全零列"""
    a = (rng.random((n, m)) < density).astype(float)
    for i in np.flatnonzero(a.sum(axis=1) == 0):
        a[i, rng.integers(m)] = 1.0
    for j in np.flatnonzero(a.sum(axis=0) == 0):
        a[rng.integers(n), j] = 1.0
    return a


def _random_binary_instance(rng, n: int, m: int):
    """边际来自支撑上的整数矩阵，一半实例再移动一个单位的列边际"""
    a = _random_support(rng, n, m, 0.45)
    b = a * rng.integers(0, 3, size=a.shape)
    for i in np.flatnonzero(b.sum(axis=1) == 0):
        b[i, rng.choice(np.flatnonzero(a[i]))] = 1.0
    for j in np.flatnonzero(b.sum(axis=0) == 0):
        b[rng.choice(np.flatnonzero(a[:, j])), j] = 1.0
    p, q = b.sum(axis=1), b.sum(axis=0)
    donors = np.flatnonzero(q > 1)
    if donors.size and rng.random() < 0.5:
        source = rng.choice(donors)
        target = rng.choice(np.delete(np.arange(m), source))
        q[source] -= 1.0
        q[target] += 1.0
    return a, p, q


def test_flow_verdict_matches_subset_enumeration(request, rng):
    count = scale(request, 20, 100)
    for _ in range(count):
        a, p, q = _random_binary_instance(rng, 5, 6)

        result = check_existence(build_problem(a, p, q))

        assert (result.weak, result.strong) == _enumerated_existence(a, p, q), (a, p, q)


def test_uniqueness_matches_block_enumeration(rng):
    for _ in range(40):
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 7))
        a = _random_support(rng, n, m, 0.25)

        assert check_uniqueness(NonnegMatrix(a)) == _enumerated_uniqueness(a), a


def test_one_way_pairs_are_weak_but_not_strong(one_way_pairs):
    connectivity = check_choice_connectivity(one_way_pairs)

    assert connectivity.weak and not connectivity.strong
    assert cross_check_equivalence(one_way_pairs).agree


def test_two_way_pairs_are_strongly_connected():
    dataset = ChoiceDataset.from_pairs([("a", "b"), ("b", "a"), ("b", "c"), ("c", "a")])

    connectivity = check_choice_connectivity(dataset)

    assert connectivity.strong and connectivity.weak


def test_disconnected_items_are_not_weakly_connected():
    dataset = ChoiceDataset.from_pairs([("a", "b"), ("b", "a"), ("c", "d"), ("d", "c")])

    connectivity = check_choice_connectivity(dataset)

    assert not connectivity.weak and not connectivity.strong
    assert cross_check_equivalence(dataset).agree


def test_reduced_dataset_connectivity_matches_observations():
    dataset = ChoiceDataset.from_rankings([["a", "b", "c"], ["c", "a", "b"], ["b", "c", "a"]])

    from_observations = check_choice_connectivity(dataset)
    from_reduced = check_choice_connectivity(dataset.reduced)

    assert from_observations == from_reduced


def test_empty_dataset_is_rejected():
    with pytest.raises(EmptyDataset):
        check_choice_connectivity([])


def test_data_and_matrix_verdicts_agree_on_random_datasets(request, rng):
    count = scale(request, 60, 500)
    for _ in range(count):
        dataset = random_choice_dataset(rng, int(rng.integers(2, 9)), int(rng.integers(1, 12)))

        check = cross_check_equivalence(dataset)

        assert check.agree, check.counterexample


def test_workflow_result_dicts(counter_example, one_way_pairs):
    workflow = FeasibilityWorkflow()

    problem_result = workflow.check_problem(counter_example)
    dataset_result = workflow.check_dataset(one_way_pairs)

    assert problem_result["success"]
    assert problem_result["verdict"]["regime"] == "limit_scaling"
    assert dataset_result["connectivity"] == {"strong": False, "weak": True}
    assert dataset_result["equivalence"]["agree"]


def _assert_valid_witness(prob, verdict):
    """直接在 (A, p, q) 上重新检验证据的定义条件"""
    witness = verdict.witness
    a = prob.a.toarray()
    in_n = np.zeros(prob.n_rows, dtype=bool)
    in_m = np.zeros(prob.n_cols, dtype=bool)
    in_n[list(witness.rows)] = True
    in_m[list(witness.cols)] = True

    assert 1 <= in_n.sum() < prob.n_rows
    assert 1 <= in_m.sum() < prob.n_cols
    assert not a[np.ix_(~in_n, in_m)].any()
    row_mass, col_mass = prob.p[in_n].sum(), prob.q[in_m].sum()
    assert witness.row_mass == pytest.approx(row_mass)
    assert witness.col_mass == pytest.approx(col_mass)
    if witness.kind == "weak":
        assert row_mass < col_mass
    else:
        assert row_mass == pytest.approx(col_mass, rel=1e-9)
        i, j = witness.edge
        assert in_n[i] and not in_m[j] and a[i, j] > 0
        assert witness.edge in verdict.forced_edges


def _check_verdict_consistency(verdict):
    assert verdict.weak_existence or not verdict.strong_existence
    assert (verdict.regime == "limit_scaling") == (verdict.weak_existence
                                                   and not verdict.strong_existence)
    assert (verdict.regime == "direct_scaling") == (verdict.strong_existence
                                                    and verdict.uniqueness)
    if verdict.regime in ("infeasible", "limit_scaling"):
        assert verdict.witness is not None
    else:
        assert verdict.witness is None


def test_tiny_positive_flows_keep_strong_existence():
    prob = build_problem([[1.0, 1.0], [0.0, 1.0]], [1.5, 1e-10], [0.5, 1.0 + 1e-10])

    verdict = check_feasibility(prob)

    assert verdict.strong_existence
    assert verdict.regime == "direct_scaling"
    assert verdict.witness is None
    assert verdict.forced_edges == ()


def test_witnesses_are_valid_on_random_binary_instances(rng):
    seen = set()
    for _ in range(200):
        a, p, q = _random_binary_instance(rng, int(rng.integers(2, 6)), int(rng.integers(2, 7)))
        prob = build_problem(a, p, q)

        verdict = check_feasibility(prob)

        _check_verdict_consistency(verdict)
        if verdict.witness is not None:
            _assert_valid_witness(prob, verdict)
        seen.add(verdict.regime)
    assert {"infeasible", "limit_scaling"} <= seen


def test_positive_flow_on_support_implies_strong_existence(rng):
    for _ in range(100):
        n, m = int(rng.integers(2, 6)), int(rng.integers(2, 7))
        a = _random_support(rng, n, m, 0.4)
        # 支撑上处处为正的可行流，量级跨越多个数量级
        flow = a * 10.0 ** rng.uniform(-8.0, 0.0, size=a.shape)
        prob = build_problem(a, flow.sum(axis=1), flow.sum(axis=0))

        verdict = check_feasibility(prob)

        assert verdict.strong_existence, (a, flow)
        assert verdict.forced_edges == ()
        _check_verdict_consistency(verdict)


def test_adding_an_entry_never_breaks_weak_existence(rng):
    checked = 0
    for _ in range(150):
        a, p, q = _random_binary_instance(rng, 4, 5)
        verdict = check_feasibility(build_problem(a, p, q))
        zeros = np.argwhere(a == 0)
        if not verdict.weak_existence or zeros.size == 0:
            continue
        i, j = zeros[rng.integers(len(zeros))]
        denser = a.copy()
        denser[i, j] = float(rng.uniform(0.1, 3.0))

        after = check_feasibility(build_problem(denser, p, q))

        assert after.weak_existence
        checked += 1
    assert checked >= 30
