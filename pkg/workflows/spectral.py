#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
谱诊断工作流
图拉普拉斯矩阵、代数连通度以及收敛速率/复杂度常数

功能：
1. 二部图拉普拉斯矩阵与比较图拉普拉斯矩阵
2. Fiedler 特征值（稠密求解或移位求逆 Lanczos）
3. 全局线性收敛速率界与渐近速率
4. 迭代复杂度常数 C、xi 以及缩放包络检查
"""

from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from core.errors import (
    EigensolverNoConvergence,
    InsufficientHistory,
    NotApplicable,
    NotConverged,
)
from core.logger_manager import get_logger
from core.model import BalancingProblem, NonnegMatrix, ScalingState, marginals, scaled_matrix
from workflows.balancing import BalancingWorkflow, RunReport, SinkhornConfig

DENSE_EIGEN_LIMIT = 200
SOLVED_TOL = 1e-10
COMPLEXITY_TOL = 1e-8
TOP_EIGEN_TOL = 1e-8
ENVELOPE_RTOL = 1e-9

Matrix = Union[np.ndarray, sp.spmatrix]


@dataclass(frozen=True, eq=False)
class BipartiteLaplacian:
    """[[diag(A1), -A], [-A^T, diag(A^T 1)]]，前 n 个下标为行节点"""
    size: int
    matrix: sp.csr_matrix

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


@dataclass
class RateReport:
    """收敛速率诊断报告；需要收敛解的字段在未收敛时为 None"""
    fiedler: float
    l0: float
    l1: float
    b_empirical: float
    global_rate_bound: float
    asymptotic_rate: Optional[float] = None
    knight_rate: Optional[float] = None
    c_constant: Optional[float] = None
    xi_constant: Optional[float] = None
    top_eigenvalue: Optional[float] = None
    top_alignment: Optional[float] = None
    # 最大特征向量与 sqrt(p)（或 sqrt(q)）单位向量之差的 2 范数
    alignment_residual: Optional[float] = None
    top_aligned: Optional[bool] = None
    envelope_holds: Optional[bool] = None
    iterations: Optional[int] = None
    termination: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class ComplexityConstants:
    c_constant: float
    xi_constant: float
    fiedler: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class EnvelopeVerdict:
    """缩放包络检查结果；first_violation 为第一个越界的迭代序号"""
    holds: bool
    first_violation: Optional[int] = None
    checked: int = 0

    def __bool__(self) -> bool:
        return self.holds


@dataclass(frozen=True)
class _GramSpectrum:
    second: float
    top: float
    alignment: float
    alignment_residual: float


def bipartite_laplacian(a: NonnegMatrix) -> BipartiteLaplacian:
    """按分块公式组装二部图拉普拉斯矩阵"""
    csr = a.csr
    matrix = sp.bmat([
        [sp.diags(a.row_sums()), -csr],
        [-csr.T, sp.diags(a.col_sums())],
    ], format="csr")
    return BipartiteLaplacian(size=a.n_rows + a.n_cols, matrix=matrix)


def comparison_laplacian(a: NonnegMatrix) -> sp.csr_matrix:
    """
    比较图拉普拉斯矩阵 diag(W 1) - W，W 为去掉对角线的 A^T A

    对二值 A，W_jk 即 j 与 k 同时出现的集合个数
    """
    gram = (a.csr.T @ a.csr).tocsr()
    gram.setdiag(0.0)
    gram.eliminate_zeros()
    degrees = np.asarray(gram.sum(axis=1)).ravel()
    return (sp.diags(degrees) - gram).tocsr()


def potential_hessian(a: NonnegMatrix, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """
    g(u, v) = sum A_ij exp(u_j - v_i) + p^T v - q^T u 的 Hessian，变量顺序为 (v, u)

    在原点处等于二部图拉普拉斯矩阵
    """
    n_rows, n_cols = a.shape
    rows, cols = a.support()
    weights = a.csr.data * np.exp(np.asarray(u)[cols] - np.asarray(v)[rows])
    hessian = np.zeros((n_rows + n_cols, n_rows + n_cols))
    np.add.at(hessian, (rows, rows), weights)
    np.add.at(hessian, (n_rows + cols, n_rows + cols), weights)
    np.add.at(hessian, (rows, n_rows + cols), -weights)
    np.add.at(hessian, (n_rows + cols, rows), -weights)
    return hessian


def fiedler_eigenvalue(l: Matrix, dense_limit: int = DENSE_EIGEN_LIMIT) -> float:
    """
    第二小特征值 lambda_{-2}

    先投影到 1 的正交补上消去零特征值方向；规模不超过 dense_limit 时稠密求解，
    否则用移位求逆 Lanczos 求最小的两个特征值并丢弃与 1 对齐的那个

    Raises:
        EigensolverNoConvergence: ARPACK 未收敛
    """
    size = l.shape[0]
    if size < 2:
        return 0.0

    if size <= dense_limit:
        dense = l.toarray() if sp.issparse(l) else np.asarray(l, dtype=np.float64)
        basis = scipy.linalg.null_space(np.ones((1, size)))
        projected = basis.T @ dense @ basis
        value = scipy.linalg.eigvalsh((projected + projected.T) / 2.0)[0]
        return max(float(value), 0.0)

    matrix = sp.csr_matrix(l, dtype=np.float64)
    shift = 1e-6 * max(float(np.abs(matrix.diagonal()).max()), 1.0)
    try:
        values, vectors = eigsh(matrix, k=2, sigma=-shift, which="LM")
    except ArpackNoConvergence as e:
        raise EigensolverNoConvergence(f"ARPACK 未收敛: {e}", {"size": size}) from e

    ones = np.ones(size) / np.sqrt(size)
    alignment = np.abs(ones @ vectors)
    value = values[int(np.argmin(alignment))]
    return max(float(value), 0.0)


def _scaling_points(report: RunReport) -> List[np.ndarray]:
    points = [np.concatenate([np.log(report.initial_d0), -np.log(report.initial_d1)])]
    points.extend(np.concatenate([np.log(rec.d0), -np.log(rec.d1)]) for rec in report.history)
    return points


def empirical_diameter(report: RunReport) -> float:
    """轨迹上 ||(u, v) - mean(u, v) 1||_inf 的最大值，u = log d0, v = -log d1"""
    if not report.has_scalings:
        raise InsufficientHistory("需要记录每步缩放向量（record_scalings=True）")
    return float(max(np.abs(w - w.mean()).max() for w in _scaling_points(report)))


def global_rate_bound(prob: BalancingProblem, trajectory: RunReport,
                      dense_limit: int = DENSE_EIGEN_LIMIT) -> RateReport:
    """
    全局线性收敛速率界 1 - exp(-4 B) lambda_{-2} / min(l0, l1)

    B 取轨迹上的经验值；结果截断到 [0, 1]

    Raises:
        InsufficientHistory: 轨迹没有记录缩放向量
    """
    b_empirical = empirical_diameter(trajectory)
    fiedler = fiedler_eigenvalue(bipartite_laplacian(prob.a).matrix, dense_limit)
    l0 = float(prob.a.col_sums().max())
    l1 = float(prob.a.row_sums().max())
    bound = 1.0 - np.exp(-4.0 * b_empirical) * fiedler / min(l0, l1)
    return RateReport(
        fiedler=fiedler,
        l0=l0,
        l1=l1,
        b_empirical=b_empirical,
        global_rate_bound=float(np.clip(bound, 0.0, 1.0)),
        iterations=trajectory.iterations,
        termination=trajectory.termination,
    )


def _require_solved(prob: BalancingProblem, state: ScalingState, tol: float):
    snapshot = marginals(prob, state)
    limit = tol * prob.total_mass
    if snapshot.l1_row_err > limit or snapshot.l1_col_err > limit:
        raise NotConverged(
            f"状态未达到收敛精度: l1_row_err={snapshot.l1_row_err:.3e}, "
            f"l1_col_err={snapshot.l1_col_err:.3e}, 要求 {limit:.3e}",
            {"l1_row_err": snapshot.l1_row_err, "l1_col_err": snapshot.l1_col_err}
        )


def _gram_spectrum(prob: BalancingProblem, state: ScalingState) -> _GramSpectrum:
    scaled = scaled_matrix(prob, state).toarray()
    sqrt_p, sqrt_q = np.sqrt(prob.p), np.sqrt(prob.q)
    normalized = scaled / sqrt_p[:, None] / sqrt_q[None, :]
    # 两个 Gram 矩阵的非零谱相同，取较小的一侧
    if prob.n_rows <= prob.n_cols:
        gram, top_vector = normalized @ normalized.T, sqrt_p
    else:
        gram, top_vector = normalized.T @ normalized, sqrt_q
    values, vectors = scipy.linalg.eigh(gram)
    unit = top_vector / np.linalg.norm(top_vector)
    top = vectors[:, -1] if vectors[:, -1] @ unit >= 0 else -vectors[:, -1]
    alignment = abs(float(top @ unit))
    second = float(values[-2]) if values.size > 1 else 0.0
    return _GramSpectrum(second=float(np.clip(second, 0.0, 1.0)), top=float(values[-1]),
                         alignment=alignment,
                         alignment_residual=float(np.linalg.norm(top - unit)))


def asymptotic_rate(prob: BalancingProblem, solved_state: ScalingState,
                    tol: float = SOLVED_TOL) -> float:
    """
    渐近线性速率 lambda_2(Ã Ã^T)，Ã = D(1/sqrt(p)) Â D(1/sqrt(q))

    Raises:
        NotConverged: 状态未收敛，或 Ã Ã^T 的最大特征值偏离 1
    """
    _require_solved(prob, solved_state, tol)
    spectrum = _gram_spectrum(prob, solved_state)
    _check_top(spectrum)
    return spectrum.second


def _check_top(spectrum: _GramSpectrum) -> bool:
    """最大特征值必须为 1；返回最大特征向量是否与 sqrt(p) 对齐"""
    if abs(spectrum.top - 1.0) > TOP_EIGEN_TOL:
        raise NotConverged(f"最大特征值 {spectrum.top:.12g} 偏离 1",
                           {"top_eigenvalue": spectrum.top})
    aligned = spectrum.alignment_residual <= TOP_EIGEN_TOL
    if not aligned:
        get_logger("spectral").warning(
            f"最大特征向量与 sqrt(p) 未对齐，残差 {spectrum.alignment_residual:.3e}")
    return aligned


def knight_rate(prob: BalancingProblem, solved_state: ScalingState) -> float:
    """sigma_2(Â)^2；方阵且 p = q = 1 时与渐近速率一致"""
    singular = scipy.linalg.svdvals(scaled_matrix(prob, solved_state).toarray())
    return float(singular[1] ** 2) if singular.size > 1 else 0.0


def complexity_constants(prob: BalancingProblem, solved_state: ScalingState,
                         tol: float = COMPLEXITY_TOL, fiedler: Optional[float] = None,
                         dense_limit: int = DENSE_EIGEN_LIMIT) -> ComplexityConstants:
    """
    C = max{|d0|_max / |d0|_min, 1 / (|d0|_min |d1|_min), |d0|_max |d1|_max}
    xi = C^2 min{max q, max p} / lambda_{-2}

    C 与 xi 在规范变换 (d0 / c, c d1) 下不变

    Raises:
        NotConverged: 状态未收敛
    """
    _require_solved(prob, solved_state, tol)
    d0, d1 = solved_state.d0, solved_state.d1
    d0_max, d0_min = float(d0.max()), float(d0.min())
    d1_max, d1_min = float(d1.max()), float(d1.min())
    c_constant = max(d0_max / d0_min, 1.0 / (d0_min * d1_min), d0_max * d1_max)
    if fiedler is None:
        fiedler = fiedler_eigenvalue(bipartite_laplacian(prob.a).matrix, dense_limit)
    scale = min(float(prob.q.max()), float(prob.p.max()))
    xi = c_constant ** 2 * scale / fiedler if fiedler > 0 else float("inf")
    return ComplexityConstants(c_constant=c_constant, xi_constant=xi, fiedler=fiedler)


def skbnd_envelope_check(prob: BalancingProblem, trajectory: RunReport,
                         solved_state: ScalingState, tol: float = COMPLEXITY_TOL) -> EnvelopeVerdict:
    """
    从 d0 = 1 出发时，每步都应满足
    d0*/|d0*|_max <= d0 <= d0*/|d0*|_min 以及 |d0*|_min d1* <= d1 <= |d0*|_max d1*

    Raises:
        NotApplicable: 初始点不是 d0 = 1 或不是 plain 变体
        NotConverged: 参考解未收敛
        InsufficientHistory: 轨迹没有记录缩放向量
    """
    if trajectory.variant != "plain":
        raise NotApplicable(f"包络检查只适用于 plain 变体，实际为 {trajectory.variant}")
    if trajectory.initial_d0 is None or not np.all(trajectory.initial_d0 == 1.0):
        raise NotApplicable("包络检查要求初始点 d0 = 1")
    _require_solved(prob, solved_state, tol)
    if not trajectory.has_scalings:
        raise InsufficientHistory("需要记录每步缩放向量（record_scalings=True）")

    d0_star, d1_star = solved_state.d0, solved_state.d1
    d0_max, d0_min = float(d0_star.max()), float(d0_star.min())
    lower0, upper0 = d0_star / d0_max, d0_star / d0_min
    lower1, upper1 = d0_min * d1_star, d0_max * d1_star
    low, high = 1.0 - ENVELOPE_RTOL, 1.0 + ENVELOPE_RTOL

    for record in trajectory.history:
        inside = (np.all(record.d0 >= lower0 * low) and np.all(record.d0 <= upper0 * high)
                  and np.all(record.d1 >= lower1 * low) and np.all(record.d1 <= upper1 * high))
        if not inside:
            return EnvelopeVerdict(holds=False, first_violation=record.t,
                                   checked=len(trajectory.history))
    return EnvelopeVerdict(holds=True, checked=len(trajectory.history))


def observed_residual_ratios(prob: BalancingProblem, trajectory: RunReport) -> np.ndarray:
    """
    相邻两步 ||r/sqrt(p) - sqrt(p)||_2 的比值，r 为列半步之后的行和

    残差降为 0 之后不再计算比值
    """
    if not trajectory.has_scalings:
        raise InsufficientHistory("需要记录每步行和（record_scalings=True）")
    sqrt_p = np.sqrt(prob.p)
    residuals = np.array([np.linalg.norm(rec.row_sums / sqrt_p - sqrt_p)
                          for rec in trajectory.history])
    zeros = np.flatnonzero(residuals <= 0)
    if zeros.size:
        residuals = residuals[:zeros[0] + 1]
    return residuals[1:] / residuals[:-1]


class DiagnosticsWorkflow:
    """收敛速率诊断工作流"""

    def __init__(self, config_manager=None, progress_callback: Optional[Callable] = None):
        """
        初始化诊断工作流

        Args:
            config_manager: 配置管理器实例
            progress_callback: 进度回调函数，接收(progress, message)参数
        """
        self.logger = get_logger("DiagnosticsWorkflow")
        self.config_manager = config_manager
        self.progress_callback = progress_callback
        self.balancer = BalancingWorkflow(config_manager)

        settings = config_manager.get_spectral_config() if config_manager else {}
        self.dense_limit = int(settings.get("dense_limit", DENSE_EIGEN_LIMIT))
        self.solved_tol = float(settings.get("solved_tol", SOLVED_TOL))
        self.complexity_tol = float(settings.get("complexity_tol", COMPLEXITY_TOL))
        self.diagnose_tol = float(settings.get("diagnose_tol", 1e-12))
        self.max_iterations = int(settings.get("diagnose_max_iterations", 20000))

    def _update_progress(self, progress: float, message: str):
        """更新进度"""
        if self.progress_callback:
            self.progress_callback(progress, message)

    def diagnose(self, prob: BalancingProblem, config: Optional[SinkhornConfig] = None) -> RateReport:
        """
        运行带完整历史的 plain Sinkhorn 并汇总全部诊断量

        未收敛时只给出与轨迹相关的字段（Fiedler 值、l0、l1、经验直径和全局界）
        """
        if config is None:
            config = SinkhornConfig(tol=self.diagnose_tol * prob.total_mass,
                                    max_iterations=self.max_iterations,
                                    record_history=True, record_scalings=True)
        self._update_progress(0.1, "运行 Sinkhorn 迭代")
        state, trajectory = self.balancer.run(prob, config)

        self._update_progress(0.6, "计算 Fiedler 特征值")
        report = global_rate_bound(prob, trajectory, self.dense_limit)
        if report.fiedler <= 0:
            self.logger.warning("二部图不连通，Fiedler 特征值为 0")

        try:
            _require_solved(prob, state, self.solved_tol)
        except NotConverged as e:
            self.logger.warning(f"未达到收敛精度，跳过渐近速率与复杂度常数: {e.message}")
            self._update_progress(1.0, "诊断完成（部分）")
            return report

        spectrum = _gram_spectrum(prob, state)
        report.top_aligned = _check_top(spectrum)
        constants = complexity_constants(prob, state, self.complexity_tol, report.fiedler)
        report.asymptotic_rate = spectrum.second
        report.top_eigenvalue = spectrum.top
        report.top_alignment = spectrum.alignment
        report.alignment_residual = spectrum.alignment_residual
        report.knight_rate = knight_rate(prob, state)
        report.c_constant = constants.c_constant
        report.xi_constant = constants.xi_constant
        if config.variant == "plain" and np.all(trajectory.initial_d0 == 1.0):
            report.envelope_holds = skbnd_envelope_check(prob, trajectory, state,
                                                         self.complexity_tol).holds

        self.logger.info(
            f"诊断完成: fiedler={report.fiedler:.6g}, 全局界={report.global_rate_bound:.6g}, "
            f"渐近速率={report.asymptotic_rate:.6g}"
        )
        self._update_progress(1.0, "诊断完成")
        return report

    def process_diagnose(self, prob: BalancingProblem) -> Dict:
        """
        诊断并生成结果字典

        Returns:
            Dict: {"success", "message", "status", "rate_report"}
        """
        report = self.diagnose(prob)
        return {
            "success": report.termination == "converged",
            "message": f"诊断完成，迭代 {report.iterations} 次",
            "status": report.termination,
            "rate_report": report.to_dict(),
        }


def diagnose(prob: BalancingProblem, config: Optional[SinkhornConfig] = None) -> RateReport:
    """DiagnosticsWorkflow.diagnose 的便捷函数"""
    return DiagnosticsWorkflow().diagnose(prob, config)
