#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
balancekit 工作流模块
矩阵平衡、可行性判定、谱诊断、选择模型估计、混合模型与基准测试
"""

__version__ = "1.0.0"
