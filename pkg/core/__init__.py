#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
balancekit 核心模块
配置、日志、异常、工作流管理以及平衡问题的数据模型
"""

__version__ = "1.0.0"
