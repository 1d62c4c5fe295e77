#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
异常定义
balancekit 所有模块抛出的异常都继承自 BalanceKitError，
details 字段用于在 JSON 报告中输出结构化信息
"""

from typing import Any, Dict, Optional


class BalanceKitError(Exception):
    """balancekit 异常基类"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        """转换为可序列化的字典"""
        return {
            "error_type": type(self).__name__,
            "message": self.message,
            "details": self.details,
        }


# 输入校验
class InvalidInput(BalanceKitError):
    """输入数据格式或取值非法"""


class DimensionMismatch(InvalidInput):
    """向量与矩阵维度不一致"""


class NonpositiveMarginal(InvalidInput):
    """目标边际存在非正分量"""


class MarginalSumMismatch(InvalidInput):
    """行边际与列边际总和不一致"""


class ZeroRowOrColumn(InvalidInput):
    """矩阵存在全零行或全零列"""


# 数值过程
class NumericOverflow(BalanceKitError):
    """缩放向量溢出、下溢或出现非有限值"""


class InsufficientHistory(BalanceKitError):
    """迭代历史不足以计算诊断量"""


class EigensolverNoConvergence(BalanceKitError):
    """特征值求解器未收敛"""


class NotConverged(BalanceKitError):
    """求解未达到要求的精度"""


class NotApplicable(BalanceKitError):
    """诊断的前提条件不满足"""


# 选择数据
class EmptyDataset(InvalidInput):
    """数据集为空"""


class InvalidObservation(InvalidInput):
    """观测记录非法"""


class DuplicateItem(InvalidObservation):
    """排序中出现重复对象"""


class IsolatedNode(InvalidInput):
    """转移图中存在无法被访问的节点"""


class InfeasibleDataset(BalanceKitError):
    """数据不满足最大似然估计存在的条件"""
