"""
检测事件模型
"""

from dataclasses import dataclass, replace
from typing import Optional

from .base import BaseModel


@dataclass(repr=False)
class DetectedEvent(BaseModel):
    """模型检测出的CAS区间，peak_freq为能量峰频率，合并前可能尚未计算"""

    t_start: float
    t_end: float
    peak_freq: Optional[float] = None

    def __post_init__(self):
        self.t_start = float(self.t_start)
        self.t_end = float(self.t_end)
        if self.t_end <= self.t_start:
            raise ValueError(f"event t_end {self.t_end} ≤ t_start {self.t_start}")

    @property
    def duration_s(self):
        return self.t_end - self.t_start

    def with_peak(self, peak_freq):
        return replace(self, peak_freq=float(peak_freq))
