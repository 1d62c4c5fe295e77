#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
矩阵平衡工作流
Sinkhorn 迭代（plain / normalized / regularized）及对偶势函数

功能：
1. 行、列半步更新与规范化
2. 带 Gamma 先验的正则化更新
3. 势函数 g 的两种等价形式
4. 迭代主循环、停止准则与溢出处理
5. 势函数下降恒等式校验
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from core.errors import InsufficientHistory, InvalidInput, NotApplicable, NumericOverflow
from core.logger_manager import get_logger
from core.model import (
    BalancingProblem,
    ScalingState,
    initial_state,
    kl_divergence,
)
from workflows.feasibility import check_feasibility

VARIANTS = ("plain", "normalized", "regularized")
STOP_METRICS = ("l1_marginal", "max_scaling_update")
OVERFLOW_THRESHOLD = 1e300
LOG_SPACE_THRESHOLD = 1e-100


@dataclass(frozen=True)
class SinkhornConfig:
    """Sinkhorn 求解参数"""
    variant: str = "plain"
    alpha: Optional[float] = None
    beta: Optional[float] = None
    max_iterations: int = 100000
    tol: float = 1e-8
    stop_metric: str = "l1_marginal"
    record_history: bool = True
    # 记录每步的 d0, d1 和行和，谱诊断需要
    record_scalings: bool = False
    overflow_threshold: float = OVERFLOW_THRESHOLD
    log_every: int = 1000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInput(f"未知的算法变体: {self.variant}")
        if self.stop_metric not in STOP_METRICS:
            raise InvalidInput(f"未知的停止准则: {self.stop_metric}")
        if not self.tol > 0:
            raise InvalidInput("tol 必须为正")
        if self.max_iterations < 0:
            raise InvalidInput("max_iterations 不能为负")
        if self.variant == "regularized":
            _check_prior(self.alpha, self.beta)

    @property
    def regularized(self) -> bool:
        return self.variant == "regularized"

    @classmethod
    def from_config(cls, config_manager=None, **overrides) -> "SinkhornConfig":
        """
        从配置文件的 balancing 段构造，关键字参数优先

        Args:
            config_manager: ConfigManager 实例，为 None 时只用内置默认值
            **overrides: 覆盖项，值为 None 的项忽略
        """
        settings: Dict[str, Any] = {}
        if config_manager is not None:
            section = config_manager.get_balancing_config()
            names = {f.name for f in dataclasses.fields(cls)}
            settings = {k: v for k, v in section.items() if k in names}
            if settings.get("variant", "plain") != "regularized":
                settings.pop("alpha", None)
                settings.pop("beta", None)
        settings.update({k: v for k, v in overrides.items() if v is not None})
        for key in ("tol", "alpha", "beta", "overflow_threshold"):
            if settings.get(key) is not None:
                settings[key] = float(settings[key])
        for key in ("max_iterations", "log_every"):
            if key in settings:
                settings[key] = int(settings[key])
        return cls(**settings)


@dataclass(frozen=True)
class PotentialValue:
    """势函数取值"""
    g_dual: float
    g_reparam: float
    gap_to_reference: Optional[float] = None


@dataclass
class IterationRecord:
    """一次完整迭代（行半步 + 列半步）的记录"""
    t: int
    g_prev: float
    g: float
    l1_row_err: float
    l1_col_err: float
    kl_row: float
    kl_col: float
    max_update: float
    # g - g*，仅当问题上挂有参考最优解时记录
    gap: Optional[float] = None
    d0: Optional[np.ndarray] = field(default=None, repr=False)
    d1: Optional[np.ndarray] = field(default=None, repr=False)
    row_sums: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, Any]:
        payload = {
            "t": self.t,
            "g": self.g,
            "l1_row_err": self.l1_row_err,
            "kl_row": self.kl_row,
            "kl_col": self.kl_col,
        }
        if self.gap is not None:
            payload["gap"] = self.gap
        return payload


@dataclass
class RunReport:
    """迭代运行报告"""
    variant: str
    iterations: int = 0
    termination: str = "max_iter"
    final_l1_row_err: float = float("nan")
    final_l1_col_err: float = float("nan")
    g_initial: float = float("nan")
    alpha: Optional[float] = None
    beta: Optional[float] = None
    initial_d0: Optional[np.ndarray] = field(default=None, repr=False)
    initial_d1: Optional[np.ndarray] = field(default=None, repr=False)
    initial_row_sums: Optional[np.ndarray] = field(default=None, repr=False)
    history: List[IterationRecord] = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return self.termination == "converged"

    @property
    def has_scalings(self) -> bool:
        return bool(self.history) and self.history[0].d0 is not None

    def potentials(self) -> List[float]:
        """势函数序列 g_0, g_1, ..., g_T"""
        if not self.history:
            return [self.g_initial]
        return [self.history[0].g_prev] + [rec.g for rec in self.history]

    def to_dict(self, include_history: bool = True) -> Dict[str, Any]:
        payload = {
            "variant": self.variant,
            "iterations": self.iterations,
            "termination": self.termination,
            "final_l1_row_err": self.final_l1_row_err,
            "final_l1_col_err": self.final_l1_col_err,
        }
        if include_history and self.history:
            payload["history"] = [rec.to_dict() for rec in self.history]
        return payload


def _check_prior(alpha: Optional[float], beta: Optional[float]):
    if alpha is None or beta is None or not alpha > 1 or not beta > 0:
        raise InvalidInput(f"正则化需要 alpha > 1 且 beta > 0，实际 alpha={alpha}, beta={beta}")


def _guard(values: np.ndarray, name: str, threshold: float) -> np.ndarray:
    """缩放向量必须为有限正数且不超过阈值"""
    if not np.all(np.isfinite(values)) or np.any(values > threshold) or np.any(values <= 0):
        raise NumericOverflow(
            f"{name} 超出数值范围（上限 {threshold:g}），可能处于极限缩放情形",
            {"vector": name, "max": float(np.nanmax(values)), "min": float(np.nanmin(values))}
        )
    return values


def _row_update(prob: BalancingProblem, d0: np.ndarray, threshold: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        d1 = prob.p / prob.a.matvec(d0)
    return _guard(d1, "d1", threshold)


def _col_update(prob: BalancingProblem, at_d1: np.ndarray, alpha: Optional[float],
                beta: Optional[float], threshold: float) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if alpha is None:
            d0 = prob.q / at_d1
        else:
            d0 = (prob.q + alpha - 1.0) / (at_d1 + beta)
    return _guard(d0, "d0", threshold)


def sinkhorn_half_step_row(prob: BalancingProblem, state: ScalingState, *,
                           overflow_threshold: float = OVERFLOW_THRESHOLD) -> ScalingState:
    """
    行半步: d1 = p / (A d0)

    Raises:
        NumericOverflow: d1 分量超过阈值或不再为有限正数
    """
    d1 = _row_update(prob, state.d0, overflow_threshold)
    return state.replace(d0=state.d0.copy(), d1=d1)


def sinkhorn_half_step_col(prob: BalancingProblem, state: ScalingState, *,
                           alpha: Optional[float] = None, beta: Optional[float] = None,
                           overflow_threshold: float = OVERFLOW_THRESHOLD) -> ScalingState:
    """
    列半步: d0 = q / (A^T d1)

    给定 alpha, beta 时使用正则化形式 d0 = (q + alpha - 1) / (A^T d1 + beta)
    """
    if alpha is not None or beta is not None:
        _check_prior(alpha, beta)
    d0 = _col_update(prob, prob.a.rmatvec(state.d1), alpha, beta, overflow_threshold)
    return state.replace(d0=d0, d1=state.d1.copy())


def normalize_gauge(state: ScalingState) -> ScalingState:
    """
    规范化: (d0 / c, c * d1)，使 sum(log d0) = sum(log d1)

    log c 在对数空间计算，取 (sum log d0 - sum log d1) / (m + n)
    """
    log_d0 = np.log(state.d0)
    log_d1 = np.log(state.d1)
    log_c = (log_d0.sum() - log_d1.sum()) / (log_d0.size + log_d1.size)
    return state.replace(d0=np.exp(log_d0 - log_c), d1=np.exp(log_d1 + log_c))


def regularized_step(prob: BalancingProblem, state: ScalingState, alpha: float, beta: float, *,
                     overflow_threshold: float = OVERFLOW_THRESHOLD) -> ScalingState:
    """
    正则化完整一步: d1 = p / (A d0)，随后 d0 = (q + alpha - 1) / (A^T d1 + beta)
    """
    _check_prior(alpha, beta)
    half = sinkhorn_half_step_row(prob, state, overflow_threshold=overflow_threshold)
    return sinkhorn_half_step_col(prob, half, alpha=alpha, beta=beta,
                                  overflow_threshold=overflow_threshold)


def prior_scale(prob: BalancingProblem, alpha: float, beta: float) -> float:
    """正则化不动点处 sum(d0) 的取值: (sum(q + alpha - 1) - sum(p)) / beta"""
    _check_prior(alpha, beta)
    excess = float(_col_target(prob, alpha).sum()) - prob.total_mass
    return excess / beta


def normalize_prior_scale(prob: BalancingProblem, state: ScalingState, alpha: float,
                          beta: float) -> ScalingState:
    """
    沿规范方向 (d0 * c, d1 / c) 精确最小化正则化势函数

    c = prior_scale / sum(d0)，之后 sum(d0) 等于 beta 决定的尺度，Â 不变。
    正则化迭代在每个完整步之后调用，消除收敛极慢的规范方向。
    """
    c = prior_scale(prob, alpha, beta) / float(state.d0.sum())
    return state.replace(d0=state.d0 * c, d1=state.d1 / c)


def _col_target(prob: BalancingProblem, alpha: Optional[float]) -> np.ndarray:
    return prob.q if alpha is None else prob.q + alpha - 1.0


def _bilinear(prob: BalancingProblem, d0: np.ndarray, d1: np.ndarray) -> float:
    """d1^T A d0；缩放过小时在对数空间逐项求和"""
    if min(d0.min(), d1.min()) < LOG_SPACE_THRESHOLD:
        rows, cols = prob.a.support()
        log_terms = np.log(prob.a.csr.data) + np.log(d1[rows]) + np.log(d0[cols])
        return float(np.exp(log_terms).sum())
    return float(d1 @ prob.a.matvec(d0))


def _dual_value(prob: BalancingProblem, d0: np.ndarray, d1: np.ndarray, bilinear: float,
                alpha: Optional[float], beta: Optional[float]) -> float:
    value = bilinear - float(prob.p @ np.log(d1)) - float(_col_target(prob, alpha) @ np.log(d0))
    if beta is not None:
        value += beta * float(d0.sum())
    return value


def potential(prob: BalancingProblem, state: ScalingState, *, alpha: Optional[float] = None,
              beta: Optional[float] = None) -> PotentialValue:
    """
    计算势函数

    g_dual = d1^T A d0 - sum p log d1 - sum q log d0
    g_reparam = sum A_ij exp(u_j - v_i) + p^T v - q^T u, 其中 u = log d0, v = -log d1
    给定 alpha, beta 时计算正则化势函数（q 换为 q + alpha - 1，并加上 beta * sum d0）

    Returns:
        PotentialValue: 若问题上挂有参考最优解，同时给出与其的差值
    """
    d0, d1 = state.d0, state.d1
    g_dual = _dual_value(prob, d0, d1, _bilinear(prob, d0, d1), alpha, beta)

    u = np.log(d0)
    v = -np.log(d1)
    rows, cols = prob.a.support()
    exp_terms = prob.a.csr.data * np.exp(u[cols] - v[rows])
    g_reparam = float(exp_terms.sum() + prob.p @ v - _col_target(prob, alpha) @ u)
    if beta is not None:
        g_reparam += beta * float(np.exp(u).sum())

    gap = None
    if prob.reference is not None:
        ref_d0, ref_d1 = prob.reference
        g_star = _dual_value(prob, ref_d0, ref_d1, _bilinear(prob, ref_d0, ref_d1), alpha, beta)
        gap = g_dual - g_star
    return PotentialValue(g_dual=g_dual, g_reparam=g_reparam, gap_to_reference=gap)


def regularized_potential(prob: BalancingProblem, state: ScalingState, alpha: float,
                          beta: float) -> float:
    """g^R(d0, d1) = (d1^T A + beta 1^T) d0 - sum p log d1 - sum (q + alpha - 1) log d0"""
    _check_prior(alpha, beta)
    return potential(prob, state, alpha=alpha, beta=beta).g_dual


def attach_reference(prob: BalancingProblem, state: ScalingState) -> BalancingProblem:
    """把参考最优缩放缓存到问题上，之后 potential() 会报告 gap_to_reference"""
    return dataclasses.replace(prob, reference=(state.d0.copy(), state.d1.copy()))


class BalancingWorkflow:
    """Sinkhorn 矩阵平衡工作流"""

    def __init__(self, config_manager=None, progress_callback: Optional[Callable] = None):
        """
        初始化矩阵平衡工作流

        Args:
            config_manager: 配置管理器实例
            progress_callback: 进度回调函数，接收(progress, message)参数
        """
        self.logger = get_logger("BalancingWorkflow")
        self.config_manager = config_manager
        self.progress_callback = progress_callback

    def _update_progress(self, progress: float, message: str):
        """更新进度"""
        if self.progress_callback:
            self.progress_callback(progress, message)

    def run(self, prob: BalancingProblem, config: Optional[SinkhornConfig] = None,
            initial: Optional[ScalingState] = None) -> Tuple[ScalingState, RunReport]:
        """
        运行 Sinkhorn 迭代

        每次完整迭代先做行半步再做列半步；normalized 变体在每个半步后规范化，
        regularized 变体在列半步后把 sum(d0) 调整到 beta 决定的尺度。
        数值溢出作为终止原因记录，返回溢出前最后一个合法状态。
        问题上挂有参考最优解时，每条迭代记录带有 g - g*。

        Args:
            prob: 平衡问题
            config: 求解参数，默认读取配置文件
            initial: 初始状态，默认 d0 = 1, d1 = 1

        Returns:
            Tuple[ScalingState, RunReport]: 最终状态与运行报告
        """
        if config is None:
            config = SinkhornConfig.from_config(self.config_manager)
        state = initial.copy() if initial is not None else initial_state(prob)
        alpha = config.alpha if config.regularized else None
        beta = config.beta if config.regularized else None
        threshold = config.overflow_threshold
        normalized = config.variant == "normalized"
        a = prob.a
        g_star = None
        if prob.reference is not None:
            ref_d0, ref_d1 = prob.reference
            g_star = _dual_value(prob, ref_d0, ref_d1, _bilinear(prob, ref_d0, ref_d1), alpha, beta)

        row_sums = state.d1 * a.matvec(state.d0)
        g_prev = _dual_value(prob, state.d0, state.d1, float(row_sums.sum()), alpha, beta)
        report = RunReport(variant=config.variant, alpha=alpha, beta=beta, g_initial=g_prev,
                           initial_d0=state.d0.copy(), initial_d1=state.d1.copy(),
                           initial_row_sums=row_sums.copy())
        col_sums = state.d0 * a.rmatvec(state.d1)
        report.final_l1_row_err = float(np.abs(row_sums - prob.p).sum())
        report.final_l1_col_err = float(np.abs(col_sums - prob.q).sum())

        self.logger.info(
            f"开始 Sinkhorn 迭代: 变体={config.variant}, 规模={a.shape}, "
            f"tol={config.tol:g}, 最大迭代={config.max_iterations}"
        )

        termination = "max_iter"
        for t in range(1, config.max_iterations + 1):
            try:
                d1 = _row_update(prob, state.d0, threshold)
                d0_mid = state.d0
                if normalized:
                    half = normalize_gauge(ScalingState(d0_mid, d1))
                    d0_mid, d1 = half.d0, half.d1
                at_d1 = a.rmatvec(d1)
                mid_col_sums = d0_mid * at_d1
                d0 = _col_update(prob, at_d1, alpha, beta, threshold)
                if normalized:
                    # A^T d1 与 d0 同步缩放，列和不变
                    full = normalize_gauge(ScalingState(d0, d1))
                    d0, d1 = full.d0, full.d1
                elif alpha is not None:
                    full = normalize_prior_scale(prob, ScalingState(d0, d1), alpha, beta)
                    d0 = _guard(full.d0, "d0", threshold)
                    d1 = _guard(full.d1, "d1", threshold)
            except NumericOverflow as e:
                termination = "overflow"
                self.logger.warning(f"第 {t} 次迭代数值溢出，终止迭代: {e.message}")
                break

            new_row_sums = d1 * a.matvec(d0)
            new_col_sums = d0 * a.rmatvec(d1)
            g = _dual_value(prob, d0, d1, float(new_row_sums.sum()), alpha, beta)
            l1_row = float(np.abs(new_row_sums - prob.p).sum())
            l1_col = float(np.abs(new_col_sums - prob.q).sum())
            with np.errstate(divide="ignore", invalid="ignore"):
                max_update = float(max(np.abs(d0 / state.d0 - 1.0).max(),
                                       np.abs(d1 / state.d1 - 1.0).max()))

            if config.record_history:
                record = IterationRecord(
                    t=t, g_prev=g_prev, g=g, l1_row_err=l1_row, l1_col_err=l1_col,
                    kl_row=kl_divergence(prob.p, row_sums),
                    kl_col=kl_divergence(_col_target(prob, alpha), mid_col_sums),
                    max_update=max_update,
                    gap=None if g_star is None else g - g_star,
                )
                if config.record_scalings:
                    record.d0, record.d1, record.row_sums = d0.copy(), d1.copy(), new_row_sums.copy()
                report.history.append(record)

            state = ScalingState(d0=d0, d1=d1, iteration=t)
            row_sums = new_row_sums
            g_prev = g
            report.iterations = t
            report.final_l1_row_err = l1_row
            report.final_l1_col_err = l1_col

            metric = l1_row if config.stop_metric == "l1_marginal" else max_update
            if config.log_every and t % config.log_every == 0:
                self.logger.debug(f"迭代 {t}: g={g:.12g}, l1_row_err={l1_row:.3e}")
                self._update_progress(t / config.max_iterations, f"迭代 {t}")
            if metric < config.tol:
                termination = "converged"
                break

        report.termination = termination
        state.history = report.history if config.record_history else None
        self.logger.info(
            f"Sinkhorn 结束: 终止原因={termination}, 迭代={report.iterations}, "
            f"l1_row_err={report.final_l1_row_err:.3e}"
        )
        self._update_progress(1.0, f"Sinkhorn 结束: {termination}")
        return state, report

    def process_balance(self, prob: BalancingProblem, config: Optional[SinkhornConfig] = None,
                        include_history: bool = False) -> Dict:
        """
        求解并生成结果字典；未收敛时附带可行性判定作为情形提示

        Returns:
            Dict: {"success", "message", "status", "report", "regime_hint"}
        """
        result = {"success": False, "message": "", "status": "", "report": {},
                  "regime_hint": None, "errors": []}
        state, report = self.run(prob, config)
        result["report"] = report.to_dict(include_history=include_history)
        result["status"] = report.termination
        result["success"] = report.converged
        result["scalings"] = {"d0": state.d0.tolist(), "d1": state.d1.tolist()}

        if not report.converged:
            verdict = check_feasibility(prob)
            result["regime_hint"] = verdict.regime
            if verdict.regime == "limit_scaling":
                result["status"] = "limit_scaling"
            self.logger.warning(f"未收敛，可行性判定为 {verdict.regime}")

        result["message"] = f"Sinkhorn {report.termination}，迭代 {report.iterations} 次"
        return result


def run(prob: BalancingProblem, config: Optional[SinkhornConfig] = None,
        initial: Optional[ScalingState] = None) -> Tuple[ScalingState, RunReport]:
    """BalancingWorkflow.run 的便捷函数"""
    return BalancingWorkflow().run(prob, config, initial)


def solve(prob: BalancingProblem, tol: float = 1e-12, max_iterations: int = 100000,
          **kwargs) -> Tuple[ScalingState, RunReport]:
    """以相对于 sum(p) 的精度求解，供诊断和估计使用"""
    config = SinkhornConfig(tol=tol * prob.total_mass, max_iterations=max_iterations, **kwargs)
    return run(prob, config)


def optimality_gap_identity_check(prob: BalancingProblem,
                                  trajectory: Union[RunReport, List[IterationRecord]]) -> float:
    """
    校验 g_t - g_{t+1} = KL(p || r^(t)) + KL(q || c^(t))

    r^(t) 为列半步之后的行和，c^(t) 为随后行半步之后的列和

    Returns:
        float: 所有记录步上的最大残差

    Raises:
        InsufficientHistory: 没有完整迭代记录
        NotApplicable: 正则化轨迹不满足该恒等式
    """
    if isinstance(trajectory, RunReport):
        if trajectory.variant == "regularized":
            raise NotApplicable("正则化迭代不适用该恒等式")
        records = trajectory.history
    else:
        records = list(trajectory)
    if not records:
        raise InsufficientHistory("至少需要一次完整迭代的记录")
    residuals = [abs((rec.g_prev - rec.g) - (rec.kl_row + rec.kl_col)) for rec in records]
    return float(max(residuals))
