#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
balancekit 工具模块
命令行前端与输入输出
"""
