#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
命令行前端
子命令 balance / estimate / check / diagnose / mixture / bench

退出码：
  0  收敛（或判定/基准正常完成）
  1  输入错误
  2  达到最大迭代次数仍未收敛
  3  数值溢出或极限缩放情形
  4  选择数据不满足强连通条件（InfeasibleDataset）
"""

import argparse
import sys
from typing import Dict, List, Optional

import core.errors as errors
from core.config_manager import ConfigManager
from core.errors import BalanceKitError
from core.logger_manager import LoggerManager, get_logger
from core.workflow_manager import WorkflowManager
from tools.loaders import (
    load_problem,
    read_choice_data,
    read_transition_graph,
    write_json,
    write_text,
)
from workflows.balancing import VARIANTS, STOP_METRICS, SinkhornConfig
from workflows.benchmark import DISTRIBUTIONS, BenchSpec
from workflows.choice import NORMALIZATIONS, choicerank_problem

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_MAX_ITER = 2
EXIT_OVERFLOW = 3
EXIT_INFEASIBLE = 4

STATUS_EXIT_CODES = {
    "converged": EXIT_OK,
    "max_iter": EXIT_MAX_ITER,
    "overflow": EXIT_OVERFLOW,
    "limit_scaling": EXIT_OVERFLOW,
}

# 命令行写法 -> 库内名称，库内名称也接受
NORM_FLAGS = {'sum-1': 'simplex_sum_1', 'sum-m': 'sum_m'}
NORM_FLAGS.update({name: name for name in NORMALIZATIONS})

logger = get_logger("cli")


def exit_code_for(result: Dict) -> int:
    """把工作流结果映射为退出码"""
    if result.get("success") or "error_type" not in result:
        return STATUS_EXIT_CODES.get(result.get("status", "converged"), EXIT_OK)
    error_class = getattr(errors, result["error_type"], BalanceKitError)
    if issubclass(error_class, errors.InfeasibleDataset):
        return EXIT_INFEASIBLE
    if issubclass(error_class, errors.NumericOverflow):
        return EXIT_OVERFLOW
    if issubclass(error_class, errors.NotConverged):
        return EXIT_MAX_ITER
    return EXIT_INPUT_ERROR


def _emit(result: Dict, out: Optional[str]):
    text = write_json(result, out)
    if out is None:
        sys.stdout.write(text)


def _add_problem_arguments(parser: argparse.ArgumentParser, required: bool = True):
    parser.add_argument('--matrix', required=required, help='Matrix Market 坐标格式的矩阵 A')
    parser.add_argument('--row-marginals', required=required, help='行目标 p（CSV，表头 value）')
    parser.add_argument('--col-marginals', required=required, help='列目标 q（CSV，表头 value）')


def build_parser() -> argparse.ArgumentParser:
    """构造命令行解析器"""
    parser = argparse.ArgumentParser(
        prog='balancekit',
        description='矩阵平衡与 Luce 选择模型工具',
        formatter_class=argparse.RawTextHelpFormatter
    )
    parser.add_argument('--config', help='配置文件目录（默认为项目下的 config）')
    parser.add_argument('--log-level', default=None,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
                        help='控制台日志级别')
    subparsers = parser.add_subparsers(dest='command', required=True)

    balance = subparsers.add_parser('balance', help='Sinkhorn 矩阵平衡')
    _add_problem_arguments(balance)
    balance.add_argument('--variant', choices=VARIANTS, help='算法变体')
    balance.add_argument('--tol', type=float, help='停止阈值')
    balance.add_argument('--max-iters', type=int, help='最大迭代次数')
    balance.add_argument('--stop-metric', choices=STOP_METRICS, help='停止准则')
    balance.add_argument('--alpha', type=float, help='Gamma 先验形状参数（regularized）')
    balance.add_argument('--beta', type=float, help='Gamma 先验速率参数（regularized）')
    balance.add_argument('--history', action='store_true', help='报告中包含逐步历史')
    balance.add_argument('--report', help='RunReport JSON 输出路径')

    estimate = subparsers.add_parser('estimate', help='Luce 模型估计')
    source = estimate.add_mutually_exclusive_group(required=True)
    source.add_argument('--data', help='JSONL 选择数据')
    source.add_argument('--graph', help='转移图 JSON（ChoiceRank）')
    estimate.add_argument('--norm', '--normalization', dest='normalization',
                          choices=sorted(NORM_FLAGS),
                          help='得分归一化方式：sum-1（单纯形，默认）或 sum-m（总和为对象数）')
    estimate.add_argument('--alpha', type=float, help='Gamma 先验形状参数')
    estimate.add_argument('--beta', type=float, help='Gamma 先验速率参数')
    estimate.add_argument('--augment-eps', type=float, help='数据增广强度 eps')
    estimate.add_argument('--out', help='JSON 输出路径')

    check = subparsers.add_parser('check', help='可行性与连通性判定')
    check.add_argument('--data', help='JSONL 选择数据')
    _add_problem_arguments(check, required=False)
    check.add_argument('--out', help='JSON 输出路径')

    diagnose = subparsers.add_parser('diagnose', help='收敛速率诊断')
    _add_problem_arguments(diagnose)
    diagnose.add_argument('--out', help='JSON 输出路径')

    mixture = subparsers.add_parser('mixture', help='Luce 混合模型 EM')
    mixture.add_argument('--data', required=True, help='JSONL 选择数据')
    mixture.add_argument('--components', type=int, default=2, help='分量个数 r')
    mixture.add_argument('--seed', type=int, help='初始化随机种子')
    mixture.add_argument('--max-rounds', type=int, help='最大 EM 轮数')
    mixture.add_argument('--out', help='JSON 输出路径')

    bench = subparsers.add_parser('bench', help='复杂度常数基准')
    bench.add_argument('--sizes', type=int, nargs='+', help='规模 n 列表（m = 2n）')
    bench.add_argument('--distributions', nargs='+', choices=DISTRIBUTIONS, help='元素分布')
    bench.add_argument('--sparsity', type=float, help='零元素比例')
    bench.add_argument('--seeds', type=int, help='每个规模的种子数')
    bench.add_argument('--csv', help='CSV 输出路径')
    bench.add_argument('--out', help='JSON 汇总输出路径')

    return parser


def cmd_balance(args, manager: WorkflowManager) -> int:
    prob = load_problem(args.matrix, args.row_marginals, args.col_marginals, manager.config_manager)
    config = SinkhornConfig.from_config(
        manager.config_manager, variant=args.variant, tol=args.tol, max_iterations=args.max_iters,
        stop_metric=args.stop_metric, alpha=args.alpha, beta=args.beta
    )
    result = manager.execute_workflow_sync('balance', problem=prob, config=config,
                                           include_history=args.history)
    code = exit_code_for(result)
    if result.get("regime_hint"):
        logger.warning(f"未收敛，情形提示: {result['regime_hint']}")
    # --report 只写 RunReport 本身；标准输出给出状态、情形提示和缩放向量
    if args.report and "report" in result:
        write_json(result["report"], args.report)
    _emit(result, None)
    return code


def cmd_estimate(args, manager: WorkflowManager) -> int:
    if args.graph:
        data = choicerank_problem(read_transition_graph(args.graph, manager.config_manager))
    else:
        data = read_choice_data(args.data, manager.config_manager)
    normalization = NORM_FLAGS[args.normalization] if args.normalization else None
    result = manager.execute_workflow_sync(
        'estimate', dataset=data, normalization=normalization,
        alpha=args.alpha, beta=args.beta, augment_eps=args.augment_eps
    )
    # 成功时输出 LuceEstimate 文档本身，失败时输出错误与判定
    _emit(result["estimate"] if result.get("success") else result, args.out)
    return exit_code_for(result)


def cmd_check(args, manager: WorkflowManager) -> int:
    if args.data:
        result = manager.execute_workflow_sync(
            'check', dataset=read_choice_data(args.data, manager.config_manager)
        )
    elif args.matrix and args.row_marginals and args.col_marginals:
        prob = load_problem(args.matrix, args.row_marginals, args.col_marginals,
                            manager.config_manager)
        result = manager.execute_workflow_sync('check', problem=prob)
    else:
        raise errors.InvalidInput("check 需要 --data 或完整的 --matrix/--row-marginals/--col-marginals")
    _emit(result, args.out)
    return exit_code_for(result)


def cmd_diagnose(args, manager: WorkflowManager) -> int:
    prob = load_problem(args.matrix, args.row_marginals, args.col_marginals, manager.config_manager)
    result = manager.execute_workflow_sync('diagnose', problem=prob)
    _emit(result, args.out)
    return exit_code_for(result)


def cmd_mixture(args, manager: WorkflowManager) -> int:
    dataset = read_choice_data(args.data, manager.config_manager)
    result = manager.execute_workflow_sync('mixture', dataset=dataset, components=args.components,
                                           seed=args.seed, max_rounds=args.max_rounds)
    _emit(result, args.out)
    return exit_code_for(result)


def cmd_bench(args, manager: WorkflowManager) -> int:
    spec = BenchSpec.from_config(manager.config_manager, sizes=args.sizes,
                                 distributions=args.distributions, sparsity=args.sparsity,
                                 seeds=args.seeds)
    result = manager.execute_workflow_sync('bench', spec=spec)
    if result.get("success") and args.csv:
        write_text(result["csv"], args.csv)
    _emit(result, args.out)
    return exit_code_for(result)


COMMANDS = {
    'balance': cmd_balance,
    'estimate': cmd_estimate,
    'check': cmd_check,
    'diagnose': cmd_diagnose,
    'mixture': cmd_mixture,
    'bench': cmd_bench,
}


def main(argv: Optional[List[str]] = None) -> int:
    """主函数，返回退出码"""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config_manager = ConfigManager(args.config)
        LoggerManager.initialize(str(config_manager.log_config_path),
                                 str(config_manager.get_logs_dir()))
        if args.log_level:
            LoggerManager.set_level(args.log_level)
        manager = WorkflowManager(config_manager)
        return COMMANDS[args.command](args, manager)
    except BalanceKitError as e:
        logger.error(f"{type(e).__name__}: {e.message}")
        return exit_code_for({"success": False, "error_type": type(e).__name__})
    except (OSError, ValueError) as e:
        logger.error(f"输入错误: {e}")
        return EXIT_INPUT_ERROR
    except KeyboardInterrupt:
        logger.error("用户中断操作")
        return EXIT_INPUT_ERROR
