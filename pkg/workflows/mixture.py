#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Luce 混合模型工作流
EM 算法：E 步按贝叶斯公式计算成员概率，M 步拆成 r 个独立的矩阵平衡问题

功能：
1. E 步（对数空间）与观测数据对数似然
2. M 步：每个分量一个加权平衡问题，胜次为 0 时改用正则化求解并标记
3. EM 主循环与似然轨迹
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from core.errors import InvalidInput, NotConverged
from core.logger_manager import get_logger
from core.model import build_problem, NonnegMatrix
from workflows.balancing import BalancingWorkflow, SinkhornConfig
from workflows.choice import ChoiceDataset, ChoiceObservation

MIN_SET_MASS = 1e-300
STARVED_ITEM_REL = 1e-12


@dataclass
class MixtureModel:
    """r 个单纯形上的得分向量及其混合权重"""
    components: np.ndarray
    weights: np.ndarray
    items: Tuple[str, ...]
    regularized: Tuple[bool, ...] = ()

    def __post_init__(self):
        self.components = np.atleast_2d(np.asarray(self.components, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.components.shape != (self.weights.size, len(self.items)):
            raise InvalidInput(
                f"混合模型维度不一致: components {self.components.shape}, "
                f"weights {self.weights.size}, items {len(self.items)}"
            )
        if np.any(self.components <= 0) or np.any(self.weights <= 0):
            raise InvalidInput("分量得分与权重必须为正")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise InvalidInput(f"权重之和必须为 1，实际为 {self.weights.sum()}")
        self.components = self.components / self.components.sum(axis=1, keepdims=True)
        if not self.regularized:
            self.regularized = (False,) * self.n_components

    @property
    def n_components(self) -> int:
        return self.weights.size

    def permuted(self, order: Sequence[int]) -> "MixtureModel":
        """按给定顺序重排分量"""
        order = list(order)
        return MixtureModel(self.components[order], self.weights[order], self.items,
                            tuple(self.regularized[k] for k in order))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "components": [
                {item: float(score) for item, score in zip(self.items, component)}
                for component in self.components
            ],
            "regularized": list(self.regularized),
        }


@dataclass
class Responsibilities:
    """n_obs x r 成员概率矩阵，每行和为 1"""
    w: np.ndarray

    @property
    def n_components(self) -> int:
        return self.w.shape[1]


@dataclass
class EMTrace:
    """每轮之后的观测数据对数似然，第一个值对应初始模型"""
    log_likelihoods: List[float] = field(default_factory=list)
    rounds: int = 0
    converged: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {"log_likelihoods": self.log_likelihoods, "rounds": self.rounds,
                "converged": self.converged}


@dataclass(frozen=True, eq=False)
class _Incidence:
    """观测级别的稀疏表示"""
    items: Tuple[str, ...]
    membership: sp.csr_matrix
    chosen: np.ndarray
    set_index: np.ndarray
    participation: sp.csr_matrix


def _incidence(dataset: Union[ChoiceDataset, Sequence[ChoiceObservation]]) -> _Incidence:
    if not isinstance(dataset, ChoiceDataset):
        dataset = ChoiceDataset(dataset)
    reduced = dataset.reduced
    item_index = reduced.item_index
    set_lookup = {choice_set: i for i, choice_set in enumerate(reduced.unique_sets)}

    rows, cols = [], []
    chosen = np.empty(len(dataset), dtype=np.int64)
    set_index = np.empty(len(dataset), dtype=np.int64)
    for o, obs in enumerate(dataset.observations):
        members = sorted(obs.choice_set)
        rows.extend([o] * len(members))
        cols.extend(item_index[item] for item in members)
        chosen[o] = item_index[obs.chosen]
        set_index[o] = set_lookup[tuple(members)]
    membership = sp.csr_matrix((np.ones(len(rows)), (rows, cols)),
                               shape=(len(dataset), reduced.n_items))
    return _Incidence(reduced.items, membership, chosen, set_index,
                      reduced.participation_matrix())


def _component_log_likelihoods(data: _Incidence, model: MixtureModel) -> np.ndarray:
    """n_obs x r 矩阵：log s_j - log sum_{k in S} s_k"""
    if tuple(model.items) != data.items:
        raise InvalidInput("模型的对象集合与数据不一致")
    set_sums = data.membership @ model.components.T
    return np.log(model.components[:, data.chosen].T) - np.log(set_sums)


def e_step(dataset: Union[ChoiceDataset, Sequence[ChoiceObservation]],
           model: MixtureModel) -> Responsibilities:
    """w_il 正比于 p_l s^l_j / sum_{k in S_i} s^l_k，在对数空间归一化"""
    log_joint = np.log(model.weights)[None, :] + _component_log_likelihoods(_incidence(dataset), model)
    log_w = log_joint - logsumexp(log_joint, axis=1, keepdims=True)
    return Responsibilities(w=np.exp(log_w))


def observed_log_likelihood(dataset: Union[ChoiceDataset, Sequence[ChoiceObservation]],
                            model: MixtureModel) -> float:
    """sum_i log sum_l p_l s^l_{j_i} / sum_{k in S_i} s^l_k"""
    log_joint = np.log(model.weights)[None, :] + _component_log_likelihoods(_incidence(dataset), model)
    return float(logsumexp(log_joint, axis=1).sum())


def _solve_component(data: _Incidence, weights: np.ndarray, balancer: BalancingWorkflow,
                     balancing_tol: float, max_iterations: int, alpha_offset: float,
                     beta_per_item: float, label: int) -> Tuple[np.ndarray, bool]:
    n_items = len(data.items)
    row_mass = np.bincount(data.set_index, weights=weights, minlength=data.participation.shape[0])
    col_mass = np.bincount(data.chosen, weights=weights, minlength=n_items)
    row_mass = np.maximum(row_mass, MIN_SET_MASS)
    # 把分量权重下溢造成的总和偏差吸收到列边际里
    col_mass = col_mass * (row_mass.sum() / col_mass.sum())
    prob = build_problem(NonnegMatrix(data.participation), row_mass, col_mass, allow_zero_q=True)

    starved = col_mass <= STARVED_ITEM_REL * col_mass.sum()
    if not starved.any():
        config = SinkhornConfig(tol=balancing_tol * prob.total_mass, max_iterations=max_iterations,
                                record_history=False)
        state, report = balancer.run(prob, config)
        if report.converged:
            return state.d0 / state.d0.sum(), False
        get_logger("MixtureWorkflow").warning(
            f"分量 {label} 的加权问题未收敛（{report.termination}），改用正则化求解"
        )
    else:
        get_logger("MixtureWorkflow").warning(
            f"分量 {label} 中有 {int(starved.sum())} 个对象的加权胜次为 0，改用正则化求解"
        )

    config = SinkhornConfig(variant="regularized", alpha=1.0 + alpha_offset,
                            beta=n_items * beta_per_item, tol=balancing_tol * prob.total_mass,
                            max_iterations=max_iterations, record_history=False)
    state, report = balancer.run(prob, config)
    if not report.converged:
        raise NotConverged(f"分量 {label} 的正则化求解未收敛: {report.termination}",
                           {"component": label, "termination": report.termination})
    return state.d0 / state.d0.sum(), True


def m_step(dataset: Union[ChoiceDataset, Sequence[ChoiceObservation]],
           responsibilities: Responsibilities, *, balancing_tol: float = 1e-12,
           max_iterations: int = 100000, alpha_offset: float = 1e-3,
           beta_per_item: float = 1e-3, max_workers: Optional[int] = None) -> MixtureModel:
    """
    p_l = mean_i w_il；s^l 由加权平衡问题求得：
    p^l 为各唯一集合上 w_il 的和，q^l_j 为选中 j 的观测上 w_il 的和

    Raises:
        NotConverged: 某个分量的正则化求解仍未收敛
    """
    data = _incidence(dataset)
    w = responsibilities.w
    if w.shape[0] != data.chosen.size:
        raise InvalidInput(f"成员概率行数 {w.shape[0]} 与观测数 {data.chosen.size} 不一致")
    balancer = BalancingWorkflow()
    n_components = w.shape[1]

    def solve(label: int) -> Tuple[np.ndarray, bool]:
        return _solve_component(data, w[:, label], balancer, balancing_tol, max_iterations,
                                alpha_offset, beta_per_item, label)

    # 各分量的平衡问题相互独立
    with ThreadPoolExecutor(max_workers=max_workers or n_components) as executor:
        solutions = list(executor.map(solve, range(n_components)))

    weights = np.maximum(w.mean(axis=0), np.finfo(float).tiny)
    return MixtureModel(
        components=np.vstack([scores for scores, _ in solutions]),
        weights=weights / weights.sum(),
        items=data.items,
        regularized=tuple(flag for _, flag in solutions),
    )


def initial_model(items: Sequence[str], r: int, seed: int = 0) -> MixtureModel:
    """对称 Dirichlet(1) 随机分量，均匀权重"""
    if r < 1:
        raise InvalidInput(f"分量个数必须至少为 1: {r}")
    rng = np.random.default_rng(seed)
    components = rng.dirichlet(np.ones(len(items)), size=r)
    # Dirichlet 抽样可能给出 0
    components = np.maximum(components, np.finfo(float).tiny)
    return MixtureModel(components, np.full(r, 1.0 / r), tuple(items))


class MixtureWorkflow:
    """Luce 混合模型 EM 工作流"""

    def __init__(self, config_manager=None, progress_callback: Optional[Callable] = None):
        """
        初始化混合模型工作流

        Args:
            config_manager: 配置管理器实例
            progress_callback: 进度回调函数，接收(progress, message)参数
        """
        self.logger = get_logger("MixtureWorkflow")
        self.config_manager = config_manager
        self.progress_callback = progress_callback

        settings = config_manager.get_mixture_config() if config_manager else {}
        self.max_rounds = int(settings.get("max_rounds", 200))
        self.tol = float(settings.get("tol", 1e-8))
        self.seed = int(settings.get("seed", 0))
        self.balancing_tol = float(settings.get("balancing_tol", 1e-12))
        self.alpha_offset = float(settings.get("fallback_alpha_offset", 1e-3))
        self.beta_per_item = float(settings.get("fallback_beta_per_item", 1e-3))
        self.max_workers = config_manager.get_max_threads() if config_manager else None

    def _update_progress(self, progress: float, message: str):
        """更新进度"""
        if self.progress_callback:
            self.progress_callback(progress, message)

    def run_em(self, dataset: Union[ChoiceDataset, Sequence[ChoiceObservation]], r: int,
               init: Optional[MixtureModel] = None, max_rounds: Optional[int] = None,
               tol: Optional[float] = None, seed: Optional[int] = None
               ) -> Tuple[MixtureModel, EMTrace]:
        """
        交替执行 E 步与 M 步，直到观测数据对数似然的提升小于 tol 或达到 max_rounds

        Args:
            dataset: 观测级别的选择数据
            r: 分量个数
            init: 初始模型，默认用 seed 抽取 Dirichlet(1) 分量
            max_rounds: 最大轮数
            tol: 对数似然提升阈值

        Returns:
            Tuple[MixtureModel, EMTrace]: 最终模型与似然轨迹
        """
        if not isinstance(dataset, ChoiceDataset):
            dataset = ChoiceDataset(dataset)
        max_rounds = self.max_rounds if max_rounds is None else int(max_rounds)
        tol = self.tol if tol is None else float(tol)
        seed = self.seed if seed is None else int(seed)

        model = init if init is not None else initial_model(dataset.items, r, seed)
        if model.n_components != r:
            raise InvalidInput(f"初始模型有 {model.n_components} 个分量，要求 {r} 个")

        trace = EMTrace(log_likelihoods=[observed_log_likelihood(dataset, model)])
        self.logger.info(f"开始 EM: 分量={r}, 观测={len(dataset)}, 初始对数似然={trace.log_likelihoods[0]:.6f}")

        for round_index in range(1, max_rounds + 1):
            responsibilities = e_step(dataset, model)
            model = m_step(dataset, responsibilities, balancing_tol=self.balancing_tol,
                           alpha_offset=self.alpha_offset, beta_per_item=self.beta_per_item,
                           max_workers=self.max_workers)
            value = observed_log_likelihood(dataset, model)
            improvement = value - trace.log_likelihoods[-1]
            trace.log_likelihoods.append(value)
            trace.rounds = round_index
            if improvement < -1e-9:
                self.logger.warning(f"第 {round_index} 轮对数似然下降 {-improvement:.3e}")
            self.logger.debug(f"第 {round_index} 轮: 对数似然={value:.10f}")
            self._update_progress(round_index / max_rounds, f"EM 第 {round_index} 轮")
            if improvement < tol:
                trace.converged = True
                break

        self.logger.info(f"EM 结束: 轮数={trace.rounds}, 对数似然={trace.log_likelihoods[-1]:.6f}")
        return model, trace

    def process_mixture(self, dataset: Union[ChoiceDataset, Sequence[ChoiceObservation]], r: int,
                        seed: Optional[int] = None, max_rounds: Optional[int] = None) -> Dict:
        """
        运行 EM 并生成结果字典

        Returns:
            Dict: {"success", "message", "status", "model", "trace"}
        """
        model, trace = self.run_em(dataset, r, max_rounds=max_rounds, seed=seed)
        return {
            "success": True,
            "message": f"EM 完成，共 {trace.rounds} 轮",
            "status": "converged" if trace.converged else "max_iter",
            "model": model.to_dict(),
            "trace": trace.to_dict(),
        }


def run_em(dataset: Union[ChoiceDataset, Sequence[ChoiceObservation]], r: int,
           init: Optional[MixtureModel] = None, max_rounds: int = 200, tol: float = 1e-8,
           seed: int = 0) -> Tuple[MixtureModel, EMTrace]:
    """MixtureWorkflow.run_em 的便捷函数"""
    return MixtureWorkflow().run_em(dataset, r, init, max_rounds, tol, seed)
