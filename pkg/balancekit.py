#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
balancekit - 主程序入口
矩阵平衡、Luce 选择模型估计与收敛诊断的命令行工具

使用方法:
  python balancekit.py balance --matrix A.mtx --row-marginals p.csv --col-marginals q.csv
  python balancekit.py estimate --data choices.jsonl
  python balancekit.py --help
"""

import sys
from pathlib import Path

# 添加项目路径到系统路径
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from core.logger_manager import LoggerManager


def check_dependencies() -> list:
    """检查依赖包是否安装，返回缺失的包名"""
    missing_deps = []
    for module, package in [("yaml", "PyYAML"), ("chardet", "chardet"), ("numpy", "numpy"),
                            ("scipy", "scipy"), ("networkx", "networkx")]:
        try:
            __import__(module)
        except ImportError:
            missing_deps.append(package)
    return missing_deps


def main(argv=None) -> int:
    """主函数"""
    missing = check_dependencies()
    if missing:
        sys.stderr.write(
            f"缺少必要的依赖包: {', '.join(missing)}\n"
            f"请运行以下命令安装:\npip install {' '.join(missing)}\n"
        )
        return 1

    from tools.cli import main as cli_main
    return cli_main(argv)


if __name__ == "__main__":
    exit_code = main()
    # 关闭日志系统
    LoggerManager.shutdown()
    sys.exit(exit_code)
