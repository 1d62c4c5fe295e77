#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
测试公共夹具
固定种子的随机数发生器、常用平衡问题、临时配置目录以及 slow 标记开关
"""

import shutil
from pathlib import Path

import numpy as np
import pytest

from core.config_manager import ConfigManager
from core.model import build_problem
from workflows.choice import ChoiceDataset, ChoiceObservation

PROJECT_ROOT = Path(__file__).parent.parent


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="运行标记为 slow 的完整规模测试")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="需要 --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def scale(request, quick: int, full: int) -> int:
    """默认运行用较少的实例数，--runslow 时使用完整数量"""
    return full if request.config.getoption("--runslow") else quick


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def config_dir(tmp_path):
    """带日志配置的临时配置目录"""
    target = tmp_path / "config"
    target.mkdir()
    shutil.copy(PROJECT_ROOT / "config" / "log_config.ini", target / "log_config.ini")
    return target


@pytest.fixture
def config_manager(config_dir):
    return ConfigManager(str(config_dir))


@pytest.fixture
def counter_example():
    """A = [[3, 1], [0, 2]]，p = q = (3, 3)：只有极限缩放"""
    return build_problem([[3.0, 1.0], [0.0, 2.0]], [3.0, 3.0], [3.0, 3.0])


@pytest.fixture
def rank_one():
    """全 1 矩阵，一次迭代即收敛"""
    return build_problem(np.ones((2, 2)), [1.0, 1.0], [1.0, 1.0])


def random_positive_problem(rng: np.random.Generator, n: int, m: int):
    """严格正的随机问题，边际总和一致"""
    a = rng.uniform(0.1, 2.0, size=(n, m))
    p = rng.uniform(0.5, 2.0, size=n)
    q = rng.uniform(0.5, 2.0, size=m)
    return build_problem(a, p, q * (p.sum() / q.sum()))


def random_choice_dataset(rng: np.random.Generator, n_items: int, n_obs: int) -> ChoiceDataset:
    """从随机 Luce 模型抽样，选择集大小随机"""
    items = [str(k) for k in range(n_items)]
    scores = rng.dirichlet(np.ones(n_items))
    observations = []
    for _ in range(n_obs):
        size = rng.integers(2, n_items + 1)
        members = rng.choice(n_items, size=size, replace=False)
        weights = scores[members] / scores[members].sum()
        chosen = members[rng.choice(size, p=weights)]
        observations.append(ChoiceObservation(items[chosen], frozenset(items[k] for k in members)))
    return ChoiceDataset(observations)


@pytest.fixture
def positive_problem(rng):
    return random_positive_problem(rng, 5, 8)


@pytest.fixture
def one_way_pairs():
    """a 总是胜过 b：弱连通但不强连通"""
    return ChoiceDataset.from_pairs([("a", "b")] * 3)
