#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
配置管理器
负责管理系统配置文件的加载、验证和默认值回退
"""

import os
import copy
import yaml
from pathlib import Path
from typing import Dict, Any, List, Optional

DEFAULT_CONFIG: Dict[str, Any] = {
    'app': {
        'name': 'balancekit',
        'version': '1.0.0'
    },
    'paths': {
        'logs_dir': 'logs'
    },
    'balancing': {
        'variant': 'plain',
        'tol': 1e-8,
        'max_iterations': 100000,
        'stop_metric': 'l1_marginal',
        'overflow_threshold': 1e300,
        'record_history': True,
        'record_scalings': False,
        'log_every': 1000,
        'alpha': 2.0,
        'beta': 1.0
    },
    'choice': {
        'normalization': 'simplex_sum_1',
        'tol': 1e-10,
        'foc_tol': 1e-8,
        'augment_eps': 1.0
    },
    'spectral': {
        'dense_limit': 200,
        'solved_tol': 1e-10,
        'complexity_tol': 1e-8,
        'diagnose_tol': 1e-12,
        'diagnose_max_iterations': 20000
    },
    'mixture': {
        'max_rounds': 200,
        'tol': 1e-8,
        'seed': 0,
        'balancing_tol': 1e-12,
        'fallback_alpha_offset': 1e-3,
        'fallback_beta_per_item': 1e-3
    },
    'bench': {
        'sizes': [50, 100, 150, 200, 250, 300],
        'distributions': ['folded_gaussian', 'uniform'],
        'sparsity': 0.8,
        'seeds': 100,
        'max_redraws': 50,
        'tol': 1e-8,
        'max_iterations': 100000,
        'max_threads': 4
    },
    'io': {
        'min_confidence': 0.7,
        'fallback_encodings': ['utf-8', 'utf-8-sig', 'gbk', 'latin1']
    }
}

THREADS_ENV = "BALANCEKIT_THREADS"


class ConfigManager:
    """配置文件管理器"""

    def __init__(self, config_dir: Optional[str] = None):
        """
        初始化配置管理器

        Args:
            config_dir: 配置文件目录，默认为项目根目录下的 config
        """
        if config_dir is None:
            config_dir = Path(__file__).parent.parent / "config"
        self.config_dir = Path(config_dir)
        self.config_dir.mkdir(parents=True, exist_ok=True)

        self.default_config_path = self.config_dir / "default_config.yaml"
        self.log_config_path = self.config_dir / "log_config.ini"

        # 配置缓存
        self._default_config = None

        self._init_config_files()

    def _init_config_files(self):
        """缺少默认配置时写出一份"""
        if not self.default_config_path.exists():
            self._save_yaml(self.default_config_path, DEFAULT_CONFIG)

    def _save_yaml(self, file_path: Path, data: Dict[str, Any]):
        """保存YAML文件"""
        try:
            with open(file_path, 'w', encoding='utf-8') as f:
                yaml.dump(data, f, default_flow_style=False,
                          allow_unicode=True, sort_keys=False)
        except OSError as e:
            raise OSError(f"保存配置文件失败: {file_path} - {e}") from e

    def _load_yaml(self, file_path: Path) -> Dict[str, Any]:
        """加载YAML文件"""
        if not file_path.exists():
            return {}
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                return yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ValueError(f"加载配置文件失败: {file_path} - {e}") from e

    def get_default_config(self) -> Dict[str, Any]:
        """获取默认配置"""
        if self._default_config is None:
            self._default_config = self._load_yaml(self.default_config_path)
        return self._default_config

    def get_config(self) -> Dict[str, Any]:
        """获取默认配置（兼容性别名）"""
        return self.get_default_config()

    def reload_config(self):
        """重新加载配置"""
        self._default_config = None

    def _section(self, name: str) -> Dict[str, Any]:
        """读取一个配置段，缺失的键用内置默认值补齐"""
        merged = copy.deepcopy(DEFAULT_CONFIG.get(name, {}))
        merged.update(self.get_default_config().get(name) or {})
        return merged

    def validate_config(self) -> bool:
        """
        验证配置文件格式

        Returns:
            bool: 验证是否通过
        """
        config = self.get_default_config()
        if not all(key in config for key in ['balancing', 'choice', 'spectral']):
            return False
        balancing = self._section('balancing')
        try:
            return float(balancing['tol']) > 0 and int(balancing['max_iterations']) > 0
        except (TypeError, ValueError):
            return False

    def get_config_status(self) -> Dict[str, bool]:
        """获取配置文件状态"""
        return {
            'default_config': self.default_config_path.exists(),
            'log_config': self.log_config_path.exists(),
            'config_dir': self.config_dir.exists()
        }

    def get_balancing_config(self) -> Dict[str, Any]:
        """获取 Sinkhorn 求解配置"""
        return self._section('balancing')

    def get_choice_config(self) -> Dict[str, Any]:
        """获取选择模型估计配置"""
        return self._section('choice')

    def get_spectral_config(self) -> Dict[str, Any]:
        """获取谱诊断配置"""
        return self._section('spectral')

    def get_mixture_config(self) -> Dict[str, Any]:
        """获取 EM 混合模型配置"""
        return self._section('mixture')

    def get_bench_config(self) -> Dict[str, Any]:
        """获取基准测试配置"""
        return self._section('bench')

    def get_io_config(self) -> Dict[str, Any]:
        """获取输入文件解码配置"""
        return self._section('io')

    def get_fallback_encodings(self) -> List[str]:
        """
        获取编码检测失败时依次尝试的编码列表

        Returns:
            list: 编码列表
        """
        return list(self.get_io_config().get('fallback_encodings', ['utf-8']))

    def get_min_confidence(self) -> float:
        """获取 chardet 最小置信度阈值"""
        return float(self.get_io_config().get('min_confidence', 0.7))

    def get_max_threads(self) -> int:
        """
        获取并行线程上限

        环境变量 BALANCEKIT_THREADS 优先于配置文件

        Returns:
            int: 线程数，至少为1
        """
        env_value = os.environ.get(THREADS_ENV)
        if env_value:
            try:
                return max(1, int(env_value))
            except ValueError:
                pass
        configured = self.get_bench_config().get('max_threads')
        if configured:
            return max(1, int(configured))
        return max(1, os.cpu_count() or 1)

    def get_logs_dir(self) -> Path:
        """
        获取日志目录的绝对路径

        Returns:
            Path: 日志目录（相对路径以项目根目录为基准）
        """
        logs_dir = self._section('paths').get('logs_dir', 'logs')
        if not os.path.isabs(logs_dir):
            return self.config_dir.parent / logs_dir
        return Path(logs_dir)
