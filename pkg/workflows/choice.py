#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Luce 选择模型工作流
把选择/排序数据归约为矩阵平衡问题 (A, p, q)，用 Sinkhorn 求最大似然估计

功能：
1. 观测与排序的读取、分解和聚合
2. 构造参与矩阵 A、行目标 p = R、列目标 q = W
3. 最大似然估计、Gamma 先验正则化估计、数据增广
4. 经典更新式（Zermelo/Dykstra 成对比较、Hunter MM、ChoiceRank），
   用于和 Sinkhorn 单步相互校验
"""

import dataclasses
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from core.errors import (
    BalanceKitError,
    DuplicateItem,
    EmptyDataset,
    InfeasibleDataset,
    InvalidInput,
    InvalidObservation,
    IsolatedNode,
    NotApplicable,
    NotConverged,
)
from core.logger_manager import get_logger
from core.model import BalancingProblem, NonnegMatrix, build_problem
from workflows.balancing import BalancingWorkflow, SinkhornConfig
from workflows.feasibility import check_feasibility

NORMALIZATIONS = ("simplex_sum_1", "sum_m")


@dataclass(frozen=True)
class ChoiceObservation:
    """一次选择：从 choice_set 中选中 chosen"""
    chosen: str
    choice_set: FrozenSet[str]

    def __post_init__(self):
        object.__setattr__(self, "chosen", str(self.chosen))
        object.__setattr__(self, "choice_set", frozenset(str(item) for item in self.choice_set))
        if len(self.choice_set) < 2:
            raise InvalidObservation(f"选择集至少包含两个不同对象: {sorted(self.choice_set)}")
        if self.chosen not in self.choice_set:
            raise InvalidObservation(f"被选对象 {self.chosen} 不在选择集中")


@dataclass(frozen=True, eq=False)
class ReducedDataset:
    """聚合后的数据：唯一选择集、重数 R、胜次 W"""
    unique_sets: Tuple[Tuple[str, ...], ...]
    multiplicities: np.ndarray
    wins: np.ndarray
    items: Tuple[str, ...]

    def __post_init__(self):
        if len(self.unique_sets) != self.multiplicities.size or len(self.items) != self.wins.size:
            raise InvalidInput("聚合数据的维度不一致")
        if np.any(self.multiplicities <= 0) or np.any(self.wins < 0):
            raise InvalidInput("重数必须为正，胜次不能为负")
        total_r, total_w = float(self.multiplicities.sum()), float(self.wins.sum())
        if abs(total_r - total_w) > 1e-9 * max(total_r, 1.0):
            raise InvalidInput(f"重数总和 {total_r} 与胜次总和 {total_w} 不一致")
        covered = {item for choice_set in self.unique_sets for item in choice_set}
        if covered != set(self.items):
            raise InvalidInput("存在未出现在任何选择集中的对象")

    @property
    def item_index(self) -> Dict[str, int]:
        return {item: index for index, item in enumerate(self.items)}

    @property
    def n_sets(self) -> int:
        return len(self.unique_sets)

    @property
    def n_items(self) -> int:
        return len(self.items)

    def participation_matrix(self) -> sp.csr_matrix:
        """A_ij = 1 当且仅当 对象 j 属于集合 S_i"""
        index = self.item_index
        rows, cols = [], []
        for i, choice_set in enumerate(self.unique_sets):
            for item in choice_set:
                rows.append(i)
                cols.append(index[item])
        data = np.ones(len(rows))
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_sets, self.n_items))


class ChoiceDataset:
    """原始观测；若由排序生成则同时保留排序"""

    def __init__(self, observations: Iterable[ChoiceObservation],
                 rankings: Optional[Iterable[Sequence[str]]] = None):
        self.observations: Tuple[ChoiceObservation, ...] = tuple(observations)
        self.rankings: Optional[Tuple[Tuple[str, ...], ...]] = (
            tuple(tuple(str(item) for item in ranking) for ranking in rankings)
            if rankings is not None else None
        )
        self._reduced: Optional[ReducedDataset] = None

    @classmethod
    def from_rankings(cls, rankings: Iterable[Sequence[Any]]) -> "ChoiceDataset":
        """把每个排序分解为逐级选择观测"""
        rankings = [list(ranking) for ranking in rankings]
        observations = [obs for ranking in rankings for obs in decompose_ranking(ranking)]
        return cls(observations, rankings=rankings)

    @classmethod
    def from_pairs(cls, pairs: Iterable[Tuple[Any, Any]]) -> "ChoiceDataset":
        """成对比较 (winner, loser)"""
        return cls(ChoiceObservation(winner, {winner, loser}) for winner, loser in pairs)

    @property
    def reduced(self) -> ReducedDataset:
        if self._reduced is None:
            self._reduced = reduce(self.observations)
        return self._reduced

    @property
    def items(self) -> Tuple[str, ...]:
        return self.reduced.items

    def __len__(self) -> int:
        return len(self.observations)


@dataclass
class LuceEstimate:
    """
    Luce 模型估计结果

    scores 总按 normalization 归一化，便于不同估计之间比较。
    正则化估计的原始尺度由 beta 决定：sum(d0) = m (alpha - 1) / beta，
    记录在 prior_scale 中，prior_scores() 可还原；正则化一阶条件残差在该尺度上计算。
    """
    items: Tuple[str, ...]
    scores: np.ndarray
    normalization: str
    log_likelihood: float
    foc_residual: float
    iterations: int
    converged: bool
    regularized: bool = False
    termination: str = "converged"
    prior_scale: Optional[float] = None

    def score_of(self, item: Any) -> float:
        return float(self.scores[self.items.index(str(item))])

    def prior_scores(self) -> np.ndarray:
        """beta 决定尺度下的得分；未正则化时抛出 NotApplicable"""
        if self.prior_scale is None:
            raise NotApplicable("只有正则化估计带有先验尺度")
        return self.scores / self.scores.sum() * self.prior_scale

    def to_dict(self) -> Dict[str, Any]:
        payload = {
            "scores": {item: float(score) for item, score in zip(self.items, self.scores)},
            "normalization": self.normalization,
            "log_likelihood": self.log_likelihood,
            "foc_residual": self.foc_residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "regularized": self.regularized,
        }
        if self.prior_scale is not None:
            payload["prior_scale"] = self.prior_scale
        return payload


def decompose_ranking(ranking: Sequence[Any]) -> List[ChoiceObservation]:
    """
    把排序 a1 > a2 > ... > al 分解为 l-1 个观测 (a_k, {a_k, ..., a_l})

    Raises:
        DuplicateItem: 排序中有重复对象（不支持并列）
        InvalidObservation: 少于两个对象
    """
    items = [str(item) for item in ranking]
    duplicates = [item for item, count in Counter(items).items() if count > 1]
    if duplicates:
        raise DuplicateItem(f"排序中有重复对象: {duplicates}")
    if len(items) < 2:
        raise InvalidObservation("排序至少需要两个对象")
    return [ChoiceObservation(items[k], frozenset(items[k:])) for k in range(len(items) - 1)]


def reduce(observations: Union[ChoiceDataset, Iterable[ChoiceObservation]]) -> ReducedDataset:
    """
    聚合为唯一选择集；集合按排序后的对象元组排序，对象按 id 排序

    Raises:
        EmptyDataset: 没有观测
        InvalidObservation: 观测类型非法
    """
    if isinstance(observations, ChoiceDataset):
        observations = observations.observations
    set_counts: Counter = Counter()
    win_counts: Counter = Counter()
    for obs in observations:
        if not isinstance(obs, ChoiceObservation):
            raise InvalidObservation(f"无法识别的观测: {obs!r}")
        set_counts[tuple(sorted(obs.choice_set))] += 1
        win_counts[obs.chosen] += 1
    if not set_counts:
        raise EmptyDataset("没有任何观测")

    unique_sets = tuple(sorted(set_counts))
    items = tuple(sorted({item for choice_set in unique_sets for item in choice_set}))
    return ReducedDataset(
        unique_sets=unique_sets,
        multiplicities=np.array([set_counts[s] for s in unique_sets], dtype=np.float64),
        wins=np.array([win_counts[item] for item in items], dtype=np.float64),
        items=items,
    )


def to_balancing_problem(reduced: ReducedDataset) -> BalancingProblem:
    """A 为参与矩阵，p = R，q = W；W 中的零值留给估计阶段处理"""
    return build_problem(NonnegMatrix(reduced.participation_matrix()),
                         reduced.multiplicities, reduced.wins, allow_zero_q=True)


def _set_sums(reduced: ReducedDataset, s: np.ndarray) -> np.ndarray:
    return reduced.participation_matrix() @ s


def log_likelihood(reduced: ReducedDataset, s: np.ndarray) -> float:
    """sum_j W_j log s_j - sum_i R_i log sum_{k in S_i} s_k"""
    s = np.asarray(s, dtype=np.float64)
    winners = reduced.wins > 0
    return float(reduced.wins[winners] @ np.log(s[winners])
                 - reduced.multiplicities @ np.log(_set_sums(reduced, s)))


def expected_wins(reduced: ReducedDataset, s: np.ndarray) -> np.ndarray:
    """sum_{i: j in S_i} R_i s_j / sum_{k in S_i} s_k"""
    a = reduced.participation_matrix()
    return s * (a.T @ (reduced.multiplicities / (a @ s)))


def foc_residual(reduced: ReducedDataset, s: np.ndarray, alpha: Optional[float] = None,
                 beta: Optional[float] = None) -> float:
    """
    最优性条件的最大逐项偏差

    未正则化时先把 s 归一到单纯形；正则化条件
    W_j + alpha - 1 = sum R_i s_j / sum s_k + beta s_j 依赖 s 的尺度，按原值计算
    """
    s = np.asarray(s, dtype=np.float64)
    if alpha is None:
        s = s / s.sum()
        return float(np.abs(reduced.wins - expected_wins(reduced, s)).max())
    lhs = reduced.wins + alpha - 1.0
    return float(np.abs(lhs - expected_wins(reduced, s) - beta * s).max())


def normalize_scores(s: np.ndarray, normalization: str) -> np.ndarray:
    if normalization not in NORMALIZATIONS:
        raise InvalidInput(f"未知的归一化方式: {normalization}")
    scaled = s / s.sum()
    return scaled * s.size if normalization == "sum_m" else scaled


def sinkhorn_score_update(reduced: ReducedDataset, s: np.ndarray) -> np.ndarray:
    """s_j <- W_j / sum_{i: j in S_i} R_i / sum_{k in S_i} s_k"""
    a = reduced.participation_matrix()
    return reduced.wins / (a.T @ (reduced.multiplicities / (a @ s)))


def mm_update(dataset: ChoiceDataset, s: np.ndarray) -> np.ndarray:
    """
    Hunter MM 单步，直接在排序形式上计算

    s_k <- w_k / sum_i sum_{j < l_i} delta_ijk / sum_{j' >= j} s_{a(i, j')}
    其中 w_k 为 k 出现在排序中且不在末位的次数

    Raises:
        NotApplicable: 数据集不是由排序生成的
    """
    if dataset.rankings is None:
        raise NotApplicable("mm_update 需要排序形式的数据")
    index = dataset.reduced.item_index
    s = np.asarray(s, dtype=np.float64)
    wins = np.zeros(s.size)
    denominator = np.zeros(s.size)
    for ranking in dataset.rankings:
        positions = np.array([index[item] for item in ranking])
        # 各级剩余对象的得分之和
        tail_sums = np.cumsum(s[positions][::-1])[::-1]
        wins[positions[:-1]] += 1.0
        stage_weights = np.cumsum(1.0 / tail_sums[:-1])
        # 第 k 位的对象出现在第 1..min(k, l-1) 级
        for rank, item in enumerate(positions):
            denominator[item] += stage_weights[min(rank, len(positions) - 2)]
    return wins / denominator


def pairwise_update(wins_matrix: np.ndarray, s: np.ndarray) -> np.ndarray:
    """
    Zermelo / Ford / Dykstra 成对比较更新

    wins_matrix[j, k] 为 j 胜 k 的次数；s_j <- W_j / sum_{k != j} N_jk / (s_j + s_k)，
    N_jk = wins_matrix[j, k] + wins_matrix[k, j]
    """
    counts = np.asarray(wins_matrix, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    comparisons = counts + counts.T
    np.fill_diagonal(comparisons, 0.0)
    pair_sums = s[:, None] + s[None, :]
    return counts.sum(axis=1) / (comparisons / pair_sums).sum(axis=1)


@dataclass(frozen=True, eq=False)
class TransitionGraph:
    """网络选择模型：边结构与节点的进出转移计数"""
    nodes: Tuple[str, ...]
    out_neighbors: Dict[str, Tuple[str, ...]]
    c_in: np.ndarray
    c_out: np.ndarray

    @classmethod
    def from_transitions(cls, transitions: Iterable[Tuple[Any, Any, float]]) -> "TransitionGraph":
        """
        Args:
            transitions: (source, target, count)，count 可以为 0（只提供边结构）
        """
        neighbors: Dict[str, set] = defaultdict(set)
        inflow: Counter = Counter()
        outflow: Counter = Counter()
        nodes = set()
        for source, target, count in transitions:
            source, target = str(source), str(target)
            if source == target:
                raise InvalidInput(f"不支持自环: {source}")
            if count < 0:
                raise InvalidInput("转移计数不能为负")
            neighbors[source].add(target)
            outflow[source] += count
            inflow[target] += count
            nodes.update((source, target))
        ordered = tuple(sorted(nodes))
        return cls(
            nodes=ordered,
            out_neighbors={node: tuple(sorted(neighbors.get(node, ()))) for node in ordered},
            c_in=np.array([inflow[node] for node in ordered], dtype=np.float64),
            c_out=np.array([outflow[node] for node in ordered], dtype=np.float64),
        )

    @property
    def node_index(self) -> Dict[str, int]:
        return {node: index for index, node in enumerate(self.nodes)}

    def active_sources(self) -> List[str]:
        """有出转移的节点"""
        return [node for node, count in zip(self.nodes, self.c_out) if count > 0]

    def check_reachable(self):
        """每个节点都必须有正的进入计数且能从某个活跃节点到达"""
        targets = {t for node in self.active_sources() for t in self.out_neighbors[node]}
        isolated = [node for node, count in zip(self.nodes, self.c_in)
                    if count <= 0 or node not in targets]
        if isolated:
            raise IsolatedNode(f"节点无法被访问: {isolated}", {"nodes": isolated})


def choicerank_update(graph: TransitionGraph, s: np.ndarray) -> np.ndarray:
    """
    ChoiceRank 单步（不含正则化）

    gamma_j = c_out_j / sum_{k in N_out(j)} s_k
    s_k <- c_in_k / sum_{j: k in N_out(j)} gamma_j

    Raises:
        IsolatedNode: 存在无法被访问的节点
    """
    graph.check_reachable()
    index = graph.node_index
    s = np.asarray(s, dtype=np.float64)
    gamma_sums = np.zeros(len(graph.nodes))
    for node in graph.active_sources():
        out = [index[t] for t in graph.out_neighbors[node]]
        gamma = graph.c_out[index[node]] / s[out].sum()
        gamma_sums[out] += gamma
    return graph.c_in / gamma_sums


def choicerank_problem(graph: TransitionGraph) -> ReducedDataset:
    """
    把转移图映射为选择数据：每条转移是一次观测，
    选择集为出发节点的出邻居，重数为 c_out（相同出邻居集合合并）
    """
    graph.check_reachable()
    set_counts: Dict[Tuple[str, ...], float] = defaultdict(float)
    for node in graph.active_sources():
        set_counts[graph.out_neighbors[node]] += float(graph.c_out[graph.node_index[node]])
    unique_sets = tuple(sorted(set_counts))
    return ReducedDataset(
        unique_sets=unique_sets,
        multiplicities=np.array([set_counts[s] for s in unique_sets]),
        wins=graph.c_in.copy(),
        items=graph.nodes,
    )


def augment_data(reduced: ReducedDataset, eps: float) -> ReducedDataset:
    """
    数据增广：全集 [m] 的重数加 m * eps，每个对象的胜次加 eps

    增广后的数据总满足强连通条件
    """
    if not eps > 0:
        raise InvalidInput(f"eps 必须为正: {eps}")
    full_set = tuple(reduced.items)
    m = len(full_set)
    counts = dict(zip(reduced.unique_sets, reduced.multiplicities.tolist()))
    counts[full_set] = counts.get(full_set, 0.0) + m * eps
    unique_sets = tuple(sorted(counts))
    augmented = ReducedDataset(
        unique_sets=unique_sets,
        multiplicities=np.array([counts[s] for s in unique_sets]),
        wins=reduced.wins + eps,
        items=reduced.items,
    )
    verdict = check_feasibility(to_balancing_problem(augmented))
    if not (verdict.strong_existence and verdict.uniqueness):
        raise BalanceKitError("增广后的数据仍不满足强连通条件", verdict.to_dict())
    return augmented


class ChoiceEstimationWorkflow:
    """Luce 模型估计工作流"""

    def __init__(self, config_manager=None, progress_callback: Optional[Callable] = None):
        """
        初始化估计工作流

        Args:
            config_manager: 配置管理器实例
            progress_callback: 进度回调函数，接收(progress, message)参数
        """
        self.logger = get_logger("ChoiceEstimationWorkflow")
        self.config_manager = config_manager
        self.progress_callback = progress_callback
        self.balancer = BalancingWorkflow(config_manager, progress_callback)

        settings = config_manager.get_choice_config() if config_manager else {}
        self.default_tol = float(settings.get("tol", 1e-10))
        self.foc_tol = float(settings.get("foc_tol", 1e-8))
        self.default_normalization = settings.get("normalization", "simplex_sum_1")

    def _update_progress(self, progress: float, message: str):
        """更新进度"""
        if self.progress_callback:
            self.progress_callback(progress, message)

    def _solver_config(self, config: Optional[SinkhornConfig], **overrides) -> SinkhornConfig:
        if config is None:
            config = SinkhornConfig.from_config(self.config_manager, variant="plain",
                                                tol=self.default_tol, record_history=False)
        return dataclasses.replace(config, **overrides) if overrides else config

    def _finish(self, reduced: ReducedDataset, d0: np.ndarray, report, normalization: str,
                alpha: Optional[float] = None, beta: Optional[float] = None) -> LuceEstimate:
        scores = normalize_scores(d0, normalization)
        residual = foc_residual(reduced, d0, alpha, beta)
        converged = report.converged and residual <= self.foc_tol
        if not report.converged:
            raise NotConverged(
                f"Sinkhorn 未收敛: {report.termination}，迭代 {report.iterations} 次",
                {"termination": report.termination, "foc_residual": residual}
            )
        if not converged:
            self.logger.warning(f"一阶条件残差 {residual:.3e} 超过阈值 {self.foc_tol:g}")
        return LuceEstimate(
            items=reduced.items,
            scores=scores,
            normalization=normalization,
            log_likelihood=log_likelihood(reduced, scores),
            foc_residual=residual,
            iterations=report.iterations,
            converged=converged,
            regularized=alpha is not None,
            termination=report.termination,
            prior_scale=float(d0.sum()) if alpha is not None else None,
        )

    def estimate_mle(self, data: Union[ChoiceDataset, ReducedDataset],
                     config: Optional[SinkhornConfig] = None,
                     normalization: Optional[str] = None) -> LuceEstimate:
        """
        最大似然估计

        Args:
            data: 选择数据（原始或聚合）
            config: 求解参数；variant=regularized 时转为正则化估计
            normalization: simplex_sum_1 或 sum_m

        Returns:
            LuceEstimate: 估计结果

        Raises:
            InfeasibleDataset: 数据不满足强连通条件且未要求正则化
            NotConverged: 迭代未收敛
        """
        reduced = data.reduced if isinstance(data, ChoiceDataset) else data
        normalization = normalization or self.default_normalization
        if config is not None and config.regularized:
            return self.estimate_regularized(reduced, config.alpha, config.beta, config, normalization)

        never_won = [item for item, w in zip(reduced.items, reduced.wins) if w <= 0]
        prob = to_balancing_problem(reduced)
        verdict = check_feasibility(prob)
        if never_won or not (verdict.strong_existence and verdict.uniqueness):
            details = verdict.to_dict()
            details["never_won"] = never_won
            details["hint"] = "使用正则化 (alpha > 1, beta > 0) 或数据增广 (eps > 0)"
            raise InfeasibleDataset("数据不满足强连通条件，最大似然估计不在单纯形内部", details)

        self._update_progress(0.1, "开始 Sinkhorn 迭代")
        state, report = self.balancer.run(prob, self._solver_config(config))
        estimate = self._finish(reduced, state.d0, report, normalization)
        self.logger.info(f"最大似然估计完成: 迭代 {report.iterations} 次，"
                         f"对数似然 {estimate.log_likelihood:.6f}")
        return estimate

    def estimate_regularized(self, data: Union[ChoiceDataset, ReducedDataset], alpha: float,
                             beta: float, config: Optional[SinkhornConfig] = None,
                             normalization: Optional[str] = None) -> LuceEstimate:
        """
        Gamma(alpha, beta) 先验下的 MAP 估计，alpha > 1 且 beta > 0 时总有唯一内部解
        """
        reduced = data.reduced if isinstance(data, ChoiceDataset) else data
        normalization = normalization or self.default_normalization
        solver = self._solver_config(config, variant="regularized", alpha=float(alpha),
                                     beta=float(beta))
        state, report = self.balancer.run(to_balancing_problem(reduced), solver)
        estimate = self._finish(reduced, state.d0, report, normalization, alpha, beta)
        self.logger.info(f"正则化估计完成: alpha={alpha}, beta={beta}, 迭代 {report.iterations} 次")
        return estimate

    def estimate_augmented(self, data: Union[ChoiceDataset, ReducedDataset], eps: float,
                           config: Optional[SinkhornConfig] = None,
                           normalization: Optional[str] = None) -> LuceEstimate:
        """数据增广后再做最大似然估计"""
        reduced = data.reduced if isinstance(data, ChoiceDataset) else data
        return self.estimate_mle(augment_data(reduced, eps), config, normalization)

    def process_estimate(self, data: Union[ChoiceDataset, ReducedDataset], *,
                         normalization: Optional[str] = None, alpha: Optional[float] = None,
                         beta: Optional[float] = None, augment_eps: Optional[float] = None) -> Dict:
        """
        估计并生成结果字典

        Returns:
            Dict: {"success", "message", "status", "estimate"}
        """
        if alpha is not None or beta is not None:
            estimate = self.estimate_regularized(data, alpha, beta, normalization=normalization)
        elif augment_eps is not None:
            estimate = self.estimate_augmented(data, augment_eps, normalization=normalization)
        else:
            estimate = self.estimate_mle(data, normalization=normalization)
        return {
            "success": True,
            "message": f"估计完成，迭代 {estimate.iterations} 次",
            "status": "converged",
            "estimate": estimate.to_dict(),
        }


def estimate_mle(data: Union[ChoiceDataset, ReducedDataset], config: Optional[SinkhornConfig] = None,
                 normalization: str = "simplex_sum_1") -> LuceEstimate:
    """ChoiceEstimationWorkflow.estimate_mle 的便捷函数"""
    return ChoiceEstimationWorkflow().estimate_mle(data, config, normalization)


def estimate_regularized(data: Union[ChoiceDataset, ReducedDataset], alpha: float, beta: float,
                         config: Optional[SinkhornConfig] = None,
                         normalization: str = "simplex_sum_1") -> LuceEstimate:
    """ChoiceEstimationWorkflow.estimate_regularized 的便捷函数"""
    return ChoiceEstimationWorkflow().estimate_regularized(data, alpha, beta, config, normalization)
