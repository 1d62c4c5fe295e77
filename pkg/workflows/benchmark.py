#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
复杂度常数基准工作流
随机生成稀疏平衡问题，统计复杂度常数 xi 随规模 n 的增长

功能：
1. 随机实例生成（折叠高斯或均匀分布，伯努利稀疏掩码）
2. 多线程按种子求解并计算 xi，未收敛的抽样丢弃重抽并计数
3. 各规模的 xi 中位数、对数-对数斜率拟合以及 CSV 输出
"""

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from core.errors import InvalidInput, NotConverged
from core.logger_manager import get_logger
from core.model import BalancingProblem, build_problem
from workflows.balancing import BalancingWorkflow, SinkhornConfig
from workflows.spectral import complexity_constants

DISTRIBUTIONS = ("folded_gaussian", "uniform")
CSV_FIELDS = ("n", "distribution", "median_xi", "seeds", "discarded")


@dataclass(frozen=True)
class BenchSpec:
    """基准参数；每个 n 对应 m = 2n 的实例"""
    sizes: Tuple[int, ...] = (50, 100, 150, 200, 250, 300)
    distributions: Tuple[str, ...] = DISTRIBUTIONS
    sparsity: float = 0.8
    seeds: int = 100
    max_redraws: int = 50
    tol: float = 1e-8
    max_iterations: int = 100000

    def __post_init__(self):
        if not 0.0 <= self.sparsity < 1.0:
            raise InvalidInput(f"sparsity 必须在 [0, 1) 内: {self.sparsity}")
        unknown = [d for d in self.distributions if d not in DISTRIBUTIONS]
        if unknown:
            raise InvalidInput(f"未知的分布: {unknown}")
        if self.seeds < 1 or any(n < 1 for n in self.sizes):
            raise InvalidInput("seeds 与 sizes 必须为正整数")

    @classmethod
    def from_config(cls, config_manager=None, **overrides) -> "BenchSpec":
        """从配置文件的 bench 段构造，关键字参数优先（None 忽略）"""
        settings: Dict[str, Any] = dict(config_manager.get_bench_config()) if config_manager else {}
        settings.update({k: v for k, v in overrides.items() if v is not None})
        return cls(
            sizes=tuple(int(n) for n in settings.get("sizes", cls.sizes)),
            distributions=tuple(settings.get("distributions", cls.distributions)),
            sparsity=float(settings.get("sparsity", cls.sparsity)),
            seeds=int(settings.get("seeds", cls.seeds)),
            max_redraws=int(settings.get("max_redraws", cls.max_redraws)),
            tol=float(settings.get("tol", cls.tol)),
            max_iterations=int(settings.get("max_iterations", cls.max_iterations)),
        )


@dataclass
class BenchRow:
    n: int
    distribution: str
    median_xi: float
    seeds: int
    discarded: int
    xi_values: List[float] = field(default_factory=list, repr=False)


@dataclass
class BenchReport:
    """基准结果"""
    rows: List[BenchRow] = field(default_factory=list)
    slopes: Dict[str, float] = field(default_factory=dict)

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(CSV_FIELDS)
        for row in self.rows:
            writer.writerow([row.n, row.distribution, repr(row.median_xi), row.seeds, row.discarded])
        return buffer.getvalue()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": [
                {"n": row.n, "distribution": row.distribution, "median_xi": row.median_xi,
                 "seeds": row.seeds, "discarded": row.discarded}
                for row in self.rows
            ],
            "loglog_slope": self.slopes,
            "total_discarded": sum(row.discarded for row in self.rows),
        }


def _draw_entries(n: int, m: int, distribution: str, rng: np.random.Generator) -> np.ndarray:
    if distribution == "folded_gaussian":
        return np.abs(rng.standard_normal((n, m)))
    return rng.uniform(0.0, 1.0, size=(n, m))


def generate_instance(n: int, distribution: str, sparsity: float,
                      rng: np.random.Generator, m: Optional[int] = None) -> BalancingProblem:
    """
    生成 n x m（默认 m = 2n）随机平衡问题

    A 的每个元素以概率 sparsity 置零，出现空行或空列时整体重抽掩码；
    p、q 取 Uniform[0, 1]，q 缩放到与 p 总和相同
    """
    m = 2 * n if m is None else m
    if distribution not in DISTRIBUTIONS:
        raise InvalidInput(f"未知的分布: {distribution}")
    values = _draw_entries(n, m, distribution, rng)
    while True:
        mask = rng.random((n, m)) >= sparsity
        entries = np.where(mask, values, 0.0)
        if np.all(entries.sum(axis=1) > 0) and np.all(entries.sum(axis=0) > 0):
            break
    p = rng.uniform(0.0, 1.0, size=n)
    q = rng.uniform(0.0, 1.0, size=m)
    # Uniform 抽样可能为 0
    p = np.maximum(p, np.finfo(float).eps)
    q = np.maximum(q, np.finfo(float).eps)
    q = q * (p.sum() / q.sum())
    return build_problem(entries, p, q)


def fit_loglog_slope(ns: Sequence[float], values: Sequence[float]) -> float:
    """log(values) 对 log(ns) 的最小二乘斜率"""
    x = np.log(np.asarray(ns, dtype=np.float64))
    y = np.log(np.asarray(values, dtype=np.float64))
    if x.size < 2:
        raise InvalidInput("斜率拟合至少需要两个规模")
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


class BenchmarkWorkflow:
    """复杂度常数基准工作流"""

    def __init__(self, config_manager=None, progress_callback: Optional[Callable] = None):
        """
        初始化基准工作流

        Args:
            config_manager: 配置管理器实例
            progress_callback: 进度回调函数，接收(progress, message)参数
        """
        self.logger = get_logger("BenchmarkWorkflow")
        self.config_manager = config_manager
        self.progress_callback = progress_callback
        self.max_threads = config_manager.get_max_threads() if config_manager else 4
        self.balancer = BalancingWorkflow(config_manager)

    def _update_progress(self, progress: float, message: str):
        """更新进度"""
        if self.progress_callback:
            self.progress_callback(progress, message)

    def _run_seed(self, spec: BenchSpec, n: int, distribution: str, seed: int) -> Tuple[float, int]:
        """单个种子：重抽直到收敛，返回 (xi, 丢弃次数)"""
        rng = np.random.default_rng([seed, n, DISTRIBUTIONS.index(distribution)])
        discarded = 0
        for _ in range(spec.max_redraws + 1):
            prob = generate_instance(n, distribution, spec.sparsity, rng)
            config = SinkhornConfig(tol=spec.tol * prob.total_mass,
                                    max_iterations=spec.max_iterations, record_history=False,
                                    log_every=0)
            state, report = self.balancer.run(prob, config)
            if report.converged:
                try:
                    return complexity_constants(prob, state, tol=spec.tol).xi_constant, discarded
                except NotConverged:
                    pass
            discarded += 1
            self.logger.warning(f"n={n}, {distribution}, seed={seed}: 抽样未收敛，丢弃并重抽")
        raise NotConverged(f"n={n}, {distribution}, seed={seed}: 连续 {discarded} 次抽样未收敛",
                           {"n": n, "distribution": distribution, "seed": seed})

    def run(self, spec: Optional[BenchSpec] = None) -> BenchReport:
        """
        对每个 (n, 分布) 组合求 xi 的中位数并拟合对数-对数斜率

        Returns:
            BenchReport: 基准结果
        """
        spec = spec or BenchSpec.from_config(self.config_manager)
        report = BenchReport()
        total = len(spec.sizes) * len(spec.distributions)
        self.logger.info(f"开始基准测试: 规模={list(spec.sizes)}, 分布={list(spec.distributions)}, "
                         f"种子数={spec.seeds}, 线程数={self.max_threads}")

        done = 0
        for distribution in spec.distributions:
            for n in spec.sizes:
                with ThreadPoolExecutor(max_workers=self.max_threads) as executor:
                    results = list(executor.map(
                        lambda seed: self._run_seed(spec, n, distribution, seed), range(spec.seeds)
                    ))
                xi_values = [xi for xi, _ in results]
                row = BenchRow(n=n, distribution=distribution,
                               median_xi=float(np.median(xi_values)), seeds=spec.seeds,
                               discarded=sum(count for _, count in results), xi_values=xi_values)
                report.rows.append(row)
                done += 1
                self.logger.info(f"n={n}, {distribution}: median xi={row.median_xi:.6g}, "
                                 f"丢弃 {row.discarded} 次")
                self._update_progress(done / total, f"完成 n={n}, {distribution}")

            if len(spec.sizes) >= 2:
                rows = [row for row in report.rows if row.distribution == distribution]
                report.slopes[distribution] = fit_loglog_slope([row.n for row in rows],
                                                               [row.median_xi for row in rows])
        return report

    def process_bench(self, spec: Optional[BenchSpec] = None) -> Dict:
        """
        运行基准并生成结果字典

        Returns:
            Dict: {"success", "message", "report", "csv"}
        """
        report = self.run(spec)
        return {
            "success": True,
            "message": f"基准完成，共 {len(report.rows)} 组",
            "status": "converged",
            "report": report.to_dict(),
            "csv": report.to_csv(),
        }
