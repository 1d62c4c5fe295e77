#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
核心数据模型
矩阵平衡问题的基础类型、输入校验以及共享的向量/矩阵工具

功能：
1. NonnegMatrix 非负稀疏矩阵（小规模时使用稠密副本做乘法）
2. BalancingProblem 平衡问题 (A, p, q) 的构造与校验
3. ScalingState 缩放向量 d0 (列) / d1 (行)
4. 缩放后矩阵与边际误差快照
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from core.errors import (
    DimensionMismatch,
    InvalidInput,
    MarginalSumMismatch,
    NonpositiveMarginal,
    ZeroRowOrColumn,
)

DENSE_LIMIT = 10 ** 6
SUM_REL_TOL = 1e-12


class NonnegMatrix:
    """非负矩阵，零元素不存储"""

    def __init__(self, entries: Any):
        """
        Args:
            entries: 稠密数组、嵌套列表或 scipy 稀疏矩阵

        Raises:
            InvalidInput: 存在负值或非有限值
            ZeroRowOrColumn: 存在全零行或全零列
        """
        if sp.issparse(entries):
            csr = sp.csr_matrix(entries, dtype=np.float64, copy=True)
        else:
            dense = np.asarray(entries, dtype=np.float64)
            if dense.ndim != 2:
                raise InvalidInput(f"矩阵必须是二维的，实际维度: {dense.ndim}")
            csr = sp.csr_matrix(dense)

        n_rows, n_cols = csr.shape
        if n_rows < 1 or n_cols < 1:
            raise InvalidInput("矩阵至少需要一行一列")
        if not np.all(np.isfinite(csr.data)):
            raise InvalidInput("矩阵包含 NaN 或 Inf")
        if np.any(csr.data < 0):
            raise InvalidInput("矩阵包含负值")

        csr.eliminate_zeros()
        csr.sort_indices()

        empty_rows = np.flatnonzero(np.diff(csr.indptr) == 0)
        empty_cols = np.flatnonzero(np.bincount(csr.indices, minlength=n_cols) == 0)
        if empty_rows.size or empty_cols.size:
            raise ZeroRowOrColumn(
                f"矩阵存在全零行 {empty_rows.tolist()} 或全零列 {empty_cols.tolist()}",
                {"rows": empty_rows.tolist(), "cols": empty_cols.tolist()}
            )

        self._set_storage(csr)

    @classmethod
    def _trusted(cls, csr: sp.csr_matrix) -> "NonnegMatrix":
        """包装已知满足约束的矩阵（缩放结果），不再重复校验"""
        obj = cls.__new__(cls)
        obj._set_storage(csr)
        return obj

    def _set_storage(self, csr: sp.csr_matrix):
        self._csr = csr
        n_rows, n_cols = csr.shape
        self._op = csr.toarray() if n_rows * n_cols <= DENSE_LIMIT else csr

    @property
    def n_rows(self) -> int:
        return self._csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self._csr.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self._csr.shape

    @property
    def nnz(self) -> int:
        return self._csr.nnz

    @property
    def csr(self) -> sp.csr_matrix:
        """CSR 存储（只读使用）"""
        return self._csr

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """计算 A @ x"""
        return np.asarray(self._op @ x).ravel()

    def rmatvec(self, y: np.ndarray) -> np.ndarray:
        """计算 A^T @ y"""
        return np.asarray(self._op.T @ y).ravel()

    def row_sums(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=1)).ravel()

    def col_sums(self) -> np.ndarray:
        return np.asarray(self._csr.sum(axis=0)).ravel()

    def support(self) -> Tuple[np.ndarray, np.ndarray]:
        """非零元素的 (行, 列) 下标，按行优先排序"""
        coo = self._csr.tocoo()
        return coo.row.copy(), coo.col.copy()

    def toarray(self) -> np.ndarray:
        return self._csr.toarray()

    def __repr__(self) -> str:
        return f"NonnegMatrix(shape={self.shape}, nnz={self.nnz})"


@dataclass(frozen=True, eq=False)
class BalancingProblem:
    """矩阵平衡问题 (A, p, q)"""
    a: NonnegMatrix
    p: np.ndarray
    q: np.ndarray
    # q 为对齐总和所乘的系数
    scale_factor: float = 1.0
    # 可选的参考最优缩放 (d0*, d1*)
    reference: Optional[Tuple[np.ndarray, np.ndarray]] = None

    @property
    def n_rows(self) -> int:
        return self.a.n_rows

    @property
    def n_cols(self) -> int:
        return self.a.n_cols

    @property
    def total_mass(self) -> float:
        return float(self.p.sum())


@dataclass
class ScalingState:
    """缩放状态：d0 为列缩放，d1 为行缩放"""
    d0: np.ndarray
    d1: np.ndarray
    iteration: int = 0
    history: Optional[List[Any]] = field(default=None, repr=False)

    def copy(self) -> "ScalingState":
        return ScalingState(self.d0.copy(), self.d1.copy(), self.iteration, self.history)

    def replace(self, **changes) -> "ScalingState":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class MarginalSnapshot:
    """缩放后矩阵的行/列和及误差指标"""
    row_sums: np.ndarray
    col_sums: np.ndarray
    l1_row_err: float
    l1_col_err: float
    kl_row: float
    kl_col: float


def _as_vector(values: Any, name: str) -> np.ndarray:
    vector = np.array(values, dtype=np.float64)
    if vector.ndim != 1:
        raise DimensionMismatch(f"{name} 必须是一维向量")
    if not np.all(np.isfinite(vector)):
        raise InvalidInput(f"{name} 包含 NaN 或 Inf")
    return vector


def build_problem(a: Any, p: Any, q: Any, *, allow_zero_q: bool = False,
                  rescale: bool = True) -> BalancingProblem:
    """
    构造并校验平衡问题

    Args:
        a: NonnegMatrix 或可转换为矩阵的对象
        p: 目标行和
        q: 目标列和
        allow_zero_q: 允许列目标为0（选择数据中从未被选中的对象，仅正则化求解可用）
        rescale: 总和在相对误差 1e-12 以内时按比例修正 q

    Returns:
        BalancingProblem: 校验后的问题

    Raises:
        DimensionMismatch, NonpositiveMarginal, MarginalSumMismatch, ZeroRowOrColumn
    """
    matrix = a if isinstance(a, NonnegMatrix) else NonnegMatrix(a)
    p_vec = _as_vector(p, "p")
    q_vec = _as_vector(q, "q")

    if p_vec.size != matrix.n_rows or q_vec.size != matrix.n_cols:
        raise DimensionMismatch(
            f"维度不匹配: A 为 {matrix.shape}, p 长度 {p_vec.size}, q 长度 {q_vec.size}"
        )
    if np.any(p_vec <= 0):
        raise NonpositiveMarginal("行边际 p 必须全部为正",
                                  {"rows": np.flatnonzero(p_vec <= 0).tolist()})
    bad_q = q_vec < 0 if allow_zero_q else q_vec <= 0
    if np.any(bad_q):
        raise NonpositiveMarginal("列边际 q 存在非法分量",
                                  {"cols": np.flatnonzero(bad_q).tolist()})

    p_sum, q_sum = float(p_vec.sum()), float(q_vec.sum())
    mismatch = abs(p_sum - q_sum) / max(p_sum, q_sum)
    if mismatch > SUM_REL_TOL:
        raise MarginalSumMismatch(
            f"边际总和不一致: sum(p)={p_sum}, sum(q)={q_sum}",
            {"sum_p": p_sum, "sum_q": q_sum}
        )

    factor = 1.0
    if rescale and p_sum != q_sum:
        factor = p_sum / q_sum
        q_vec = q_vec * factor

    p_vec.flags.writeable = False
    q_vec.flags.writeable = False
    return BalancingProblem(a=matrix, p=p_vec, q=q_vec, scale_factor=factor)


def initial_state(prob: BalancingProblem, d0: Optional[Any] = None,
                  d1: Optional[Any] = None) -> ScalingState:
    """默认初始点 d0 = 1, d1 = 1"""
    d0_vec = np.ones(prob.n_cols) if d0 is None else np.array(d0, dtype=np.float64)
    d1_vec = np.ones(prob.n_rows) if d1 is None else np.array(d1, dtype=np.float64)
    _check_state_dims(prob, d0_vec, d1_vec)
    if np.any(d0_vec <= 0) or np.any(d1_vec <= 0) or not (
            np.all(np.isfinite(d0_vec)) and np.all(np.isfinite(d1_vec))):
        raise InvalidInput("初始缩放必须为有限正数")
    return ScalingState(d0=d0_vec, d1=d1_vec)


def _check_state_dims(prob: BalancingProblem, d0: np.ndarray, d1: np.ndarray):
    if d0.shape != (prob.n_cols,) or d1.shape != (prob.n_rows,):
        raise DimensionMismatch(
            f"缩放向量维度不匹配: d0 {d0.shape}, d1 {d1.shape}, A {prob.a.shape}"
        )


def scaled_matrix(prob: BalancingProblem, s: ScalingState) -> NonnegMatrix:
    """
    计算 Â = D1 A D0，零元素模式与 A 相同

    Raises:
        DimensionMismatch: 缩放向量长度与 A 不一致
    """
    _check_state_dims(prob, s.d0, s.d1)
    scaled = sp.diags(s.d1) @ prob.a.csr @ sp.diags(s.d0)
    return NonnegMatrix._trusted(sp.csr_matrix(scaled))


def kl_divergence(target: np.ndarray, actual: np.ndarray) -> float:
    """
    广义相对熵 sum(t log(t/a)) - sum(t) + sum(a)

    两个向量总和相同时即为普通 KL 散度；约定 0 log 0 = 0，
    当某个 a_i = 0 而 t_i > 0 时返回 +inf
    """
    target = np.asarray(target, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    mask = target > 0
    if np.any(actual[mask] <= 0):
        return float("inf")
    terms = target[mask] * np.log(target[mask] / actual[mask])
    value = float(terms.sum() - target.sum() + actual.sum())
    return max(value, 0.0)


def marginals_from(prob: BalancingProblem, row_sums: np.ndarray,
                   col_sums: np.ndarray) -> MarginalSnapshot:
    """由已算好的行/列和组装快照"""
    return MarginalSnapshot(
        row_sums=row_sums,
        col_sums=col_sums,
        l1_row_err=float(np.abs(row_sums - prob.p).sum()),
        l1_col_err=float(np.abs(col_sums - prob.q).sum()),
        kl_row=kl_divergence(prob.p, row_sums),
        kl_col=kl_divergence(prob.q, col_sums),
    )


def marginals(prob: BalancingProblem, s: ScalingState) -> MarginalSnapshot:
    """计算 r = Â1, c = Â^T 1 以及四项误差"""
    _check_state_dims(prob, s.d0, s.d1)
    row_sums = s.d1 * prob.a.matvec(s.d0)
    col_sums = s.d0 * prob.a.rmatvec(s.d1)
    return marginals_from(prob, row_sums, col_sums)
