#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
可行性判定工作流
判定平衡问题的存在性/唯一性以及选择数据的连通性条件

功能：
1. 唯一性：A 的二部图是否连通
2. 弱存在与强存在：基于最大流与残量图强连通分量
3. 违反条件时给出 (N, M) 证据
4. 选择数据的强/弱连通性
5. 数据侧与矩阵侧判定的等价性交叉校验
"""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order

from core.errors import EmptyDataset
from core.logger_manager import get_logger
from core.model import BalancingProblem, NonnegMatrix

SOURCE = "source"
SINK = "sink"
FLOAT_SLACK = 1e-9

logger = get_logger("Feasibility")


@dataclass(frozen=True)
class Witness:
    """违反存在性条件的 (N, M) 对"""
    kind: str
    rows: Tuple[int, ...]
    cols: Tuple[int, ...]
    row_mass: float
    col_mass: float
    edge: Optional[Tuple[int, int]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "rows": list(self.rows),
            "cols": list(self.cols),
            "row_mass": self.row_mass,
            "col_mass": self.col_mass,
            "edge": list(self.edge) if self.edge is not None else None,
        }


@dataclass(frozen=True)
class ExistenceResult:
    weak: bool
    strong: bool
    witness: Optional[Witness] = None
    forced_edges: Tuple[Tuple[int, int], ...] = ()


@dataclass(frozen=True)
class FeasibilityVerdict:
    """矩阵侧判定结果"""
    uniqueness: bool
    weak_existence: bool
    strong_existence: bool
    witness: Optional[Witness] = None
    forced_edges: Tuple[Tuple[int, int], ...] = ()

    @property
    def regime(self) -> str:
        if not self.weak_existence:
            return "infeasible"
        if not self.strong_existence:
            return "limit_scaling"
        return "direct_scaling" if self.uniqueness else "non_unique"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "uniqueness": self.uniqueness,
            "weak_existence": self.weak_existence,
            "strong_existence": self.strong_existence,
            "regime": self.regime,
            "witness": self.witness.to_dict() if self.witness else None,
            "forced_edges": [list(edge) for edge in self.forced_edges],
        }


@dataclass(frozen=True)
class ConnectivityResult:
    strong: bool
    weak: bool


@dataclass
class EquivalenceCheck:
    agree: bool
    counterexample: Optional[Dict[str, Any]] = field(default=None)


def check_uniqueness(a: NonnegMatrix) -> bool:
    """
    A 的二部图（n 行节点 + m 列节点）是否连通

    等价于 A 不能经行列置换化为分块对角形
    """
    n_rows, n_cols = a.shape
    pattern = sp.csr_matrix((np.ones(a.nnz), a.csr.indices, a.csr.indptr), shape=a.shape)
    bipartite = sp.bmat([[None, pattern], [pattern.T, None]], format="csr")
    reached = breadth_first_order(bipartite, 0, directed=False, return_predecessors=False)
    return reached.size == n_rows + n_cols


def _is_integral(values: np.ndarray) -> bool:
    return bool(np.all(values == np.round(values)))


def _flow_network(prob: BalancingProblem, integral: bool) -> nx.DiGraph:
    """source -> 行 i (容量 p_i)，行 i -> 列 j (A_ij > 0，无容量上限)，列 j -> sink (容量 q_j)"""
    cast = (lambda x: int(round(x))) if integral else float
    graph = nx.DiGraph()
    for i, p_i in enumerate(prob.p):
        graph.add_edge(SOURCE, ("r", i), capacity=cast(p_i))
    rows, cols = prob.a.support()
    for i, j in zip(rows.tolist(), cols.tolist()):
        graph.add_edge(("r", i), ("c", j))
    for j, q_j in enumerate(prob.q):
        graph.add_edge(("c", j), SINK, capacity=cast(q_j))
    return graph


def check_existence(prob: BalancingProblem) -> ExistenceResult:
    """
    判定弱存在与强存在

    弱存在 当且仅当 最大流值等于 sum(p)；整数边际用精确整数流，否则允许 1e-9 * sum(p) 的误差。
    强存在 当且仅当 弱存在且每条边都能在某个可行流上取正值：
    流量为正的边直接满足，零流边在残量图中两端同属一个强连通分量时满足。
    证据 (N, M) 中 N 与 M 都非空。

    Returns:
        ExistenceResult: 判定结果与证据
    """
    integral = _is_integral(prob.p) and _is_integral(prob.q)
    graph = _flow_network(prob, integral)
    total = float(prob.p.sum())
    flow_value, flow_dict = nx.maximum_flow(graph, SOURCE, SINK)
    slack = 0.0 if integral else FLOAT_SLACK * total

    if flow_value < total - slack:
        # 汇点一侧的行/列构成证据: sum_N p < sum_M q 且 A_ij = 0 (i 不在 N, j 在 M)
        _, (_, sink_side) = nx.minimum_cut(graph, SOURCE, SINK)
        rows = tuple(sorted(node[1] for node in sink_side if isinstance(node, tuple) and node[0] == "r"))
        cols = tuple(sorted(node[1] for node in sink_side if isinstance(node, tuple) and node[0] == "c"))
        witness = Witness("weak", rows, cols,
                          float(prob.p[list(rows)].sum()), float(prob.q[list(cols)].sum()))
        return ExistenceResult(weak=False, strong=False, witness=witness)

    # 边是否承载流量只看原始流值；总量的容差不能用在单条边上
    residual = nx.DiGraph()
    residual.add_nodes_from(("r", i) for i in range(prob.n_rows))
    residual.add_nodes_from(("c", j) for j in range(prob.n_cols))
    support = list(zip(*(idx.tolist() for idx in prob.a.support())))
    carrying = set()
    for i, j in support:
        residual.add_edge(("r", i), ("c", j))
        if flow_dict[("r", i)][("c", j)] > 0:
            residual.add_edge(("c", j), ("r", i))
            carrying.add((i, j))

    component = {}
    for index, nodes in enumerate(nx.strongly_connected_components(residual)):
        for node in nodes:
            component[node] = index
    forced = tuple((i, j) for i, j in support
                   if (i, j) not in carrying and component[("r", i)] != component[("c", j)])
    if not forced:
        return ExistenceResult(weak=True, strong=True)

    witness = None
    for edge in forced:
        witness = _forced_edge_witness(prob, residual, edge)
        if witness is not None:
            break
    else:
        logger.warning(f"强制零边 {list(forced)} 没有给出非空的 (N, M) 证据")
    return ExistenceResult(weak=True, strong=False, witness=witness, forced_edges=forced)


def _forced_edge_witness(prob: BalancingProblem, residual: nx.DiGraph,
                         edge: Tuple[int, int]) -> Optional[Witness]:
    """
    从列 j 出发在残量图中可达的节点集合 X；N、M 取 X 之外的行和列，二者质量相等

    N 或 M 为空时返回 None
    """
    i, j = edge
    reachable = nx.descendants(residual, ("c", j)) | {("c", j)}
    rows = tuple(r for r in range(prob.n_rows) if ("r", r) not in reachable)
    cols = tuple(c for c in range(prob.n_cols) if ("c", c) not in reachable)
    if not rows or not cols:
        return None
    return Witness("strong", rows, cols, float(prob.p[list(rows)].sum()),
                   float(prob.q[list(cols)].sum()), edge=(i, j))


def check_feasibility(prob: BalancingProblem) -> FeasibilityVerdict:
    """组合唯一性与存在性判定"""
    existence = check_existence(prob)
    return FeasibilityVerdict(
        uniqueness=check_uniqueness(prob.a),
        weak_existence=existence.weak,
        strong_existence=existence.strong,
        witness=existence.witness,
        forced_edges=existence.forced_edges,
    )


def _observations_of(dataset) -> List:
    observations = getattr(dataset, "observations", dataset)
    return list(observations)


def check_choice_connectivity(dataset) -> ConnectivityResult:
    """
    选择数据的连通性

    强连通：有向比较图（k 在包含 j 的集合中被选中时连边 j -> k）只有一个覆盖全部对象的强连通分量。
    弱连通：无向共现图连通。
    输入为聚合后的 ReducedDataset 时无法还原每个集合内的选择，
    强连通改用矩阵侧等价条件（强存在且唯一）判定。

    Raises:
        EmptyDataset: 没有观测
    """
    from workflows.choice import ReducedDataset, to_balancing_problem

    if isinstance(dataset, ReducedDataset):
        co_occurrence = nx.Graph()
        co_occurrence.add_nodes_from(dataset.items)
        for choice_set in dataset.unique_sets:
            nx.add_path(co_occurrence, choice_set)
        verdict = check_feasibility(to_balancing_problem(dataset))
        return ConnectivityResult(
            strong=verdict.strong_existence and verdict.uniqueness,
            weak=nx.is_connected(co_occurrence),
        )

    observations = _observations_of(dataset)
    if not observations:
        raise EmptyDataset("选择数据集为空")

    items = sorted({item for obs in observations for item in obs.choice_set})
    comparison = nx.DiGraph()
    comparison.add_nodes_from(items)
    co_occurrence = nx.Graph()
    co_occurrence.add_nodes_from(items)
    for obs in observations:
        for item in obs.choice_set:
            if item != obs.chosen:
                comparison.add_edge(item, obs.chosen)
                co_occurrence.add_edge(item, obs.chosen)

    return ConnectivityResult(
        strong=nx.is_strongly_connected(comparison),
        weak=nx.is_connected(co_occurrence),
    )


def cross_check_equivalence(dataset) -> EquivalenceCheck:
    """
    校验数据侧与矩阵侧判定一致：
    强连通 <=> (强存在 且 唯一)，弱连通 <=> 唯一
    """
    from workflows.choice import to_balancing_problem

    connectivity = check_choice_connectivity(dataset)
    verdict = check_feasibility(to_balancing_problem(dataset.reduced))
    strong_matrix = verdict.strong_existence and verdict.uniqueness
    agree = (connectivity.strong == strong_matrix) and (connectivity.weak == verdict.uniqueness)
    if agree:
        return EquivalenceCheck(agree=True)
    return EquivalenceCheck(agree=False, counterexample={
        "strong_connectivity": connectivity.strong,
        "weak_connectivity": connectivity.weak,
        "verdict": verdict.to_dict(),
    })


class FeasibilityWorkflow:
    """可行性判定工作流"""

    def __init__(self, config_manager=None, progress_callback: Optional[Callable] = None):
        self.logger = get_logger("FeasibilityWorkflow")
        self.config_manager = config_manager
        self.progress_callback = progress_callback

    def _update_progress(self, progress: float, message: str):
        """更新进度"""
        if self.progress_callback:
            self.progress_callback(progress, message)

    def check_problem(self, prob: BalancingProblem) -> Dict:
        """
        对平衡问题给出可行性判定

        Returns:
            Dict: {"success", "message", "verdict"}
        """
        self._update_progress(0.1, "计算最大流")
        verdict = check_feasibility(prob)
        self.logger.info(f"可行性判定: {verdict.regime}")
        self._update_progress(1.0, "判定完成")
        return {
            "success": True,
            "message": f"判定结果: {verdict.regime}",
            "verdict": verdict.to_dict(),
        }

    def check_dataset(self, dataset) -> Dict:
        """
        对选择数据给出连通性与矩阵侧判定

        Returns:
            Dict: {"success", "message", "connectivity", "verdict", "equivalence"}
        """
        from workflows.choice import to_balancing_problem

        self._update_progress(0.1, "构建比较图")
        connectivity = check_choice_connectivity(dataset)
        verdict = check_feasibility(to_balancing_problem(dataset.reduced))
        equivalence = cross_check_equivalence(dataset)
        if not equivalence.agree:
            self.logger.error(f"数据侧与矩阵侧判定不一致: {equivalence.counterexample}")
        self.logger.info(f"连通性: strong={connectivity.strong}, weak={connectivity.weak}")
        self._update_progress(1.0, "判定完成")
        return {
            "success": True,
            "message": f"strong={connectivity.strong}, weak={connectivity.weak}",
            "connectivity": {"strong": connectivity.strong, "weak": connectivity.weak},
            "verdict": verdict.to_dict(),
            "equivalence": {"agree": equivalence.agree,
                            "counterexample": equivalence.counterexample},
        }
