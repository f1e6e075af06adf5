"""
评估结果模型
片段混淆计数、事件计数和ROC曲线
"""

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .base import BaseModel


@dataclass(repr=False)
class SegmentConfusion(BaseModel):
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other):
        return SegmentConfusion(self.tp + other.tp, self.tn + other.tn,
                                self.fp + other.fp, self.fn + other.fn)


@dataclass(repr=False)
class EventCounts(BaseModel):
    """事件级计数，没有TN"""
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError(f"negative event counts: {self.tp}, {self.fp}, {self.fn}")

    def __add__(self, other):
        return EventCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


@dataclass(repr=False, eq=False)
class RocCurve(BaseModel):
    """阈值从高到低扫描得到的ROC点，起点(0,0)，终点(1,1)"""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


@dataclass(repr=False)
class MetricSet(BaseModel):
    """
    一组指标值
    分母为0的指标记为None并写入undefined
    """

    values: dict = field(default_factory=dict)
    undefined: List[str] = field(default_factory=list)

    def __getitem__(self, name):
        return self.values[name]

    def get(self, name, default=None):
        return self.values.get(name, default)
