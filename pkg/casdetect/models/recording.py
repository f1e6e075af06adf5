"""
录音与标签模型
定义Recording、LabelEvent和Dataset
"""

import enum
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .base import BaseModel


class LabelKind(str, enum.Enum):
    """标签类型：吸气、呼气、CAS及其亚型、DAS"""
    INHALATION = 'I'
    EXHALATION = 'E'
    CAS = 'C'
    WHEEZE = 'W'
    STRIDOR = 'S'
    RHONCHUS = 'R'
    DAS = 'D'


# CAS家族
CAS_KINDS = frozenset({LabelKind.CAS, LabelKind.WHEEZE, LabelKind.STRIDOR, LabelKind.RHONCHUS})


class Split(str, enum.Enum):
    TRAIN = 'train'
    TEST = 'test'


@dataclass(repr=False, eq=False)
class Recording(BaseModel):
    """单通道录音，采样值已缩放到[-1, 1]"""

    id: str
    samples: np.ndarray
    sample_rate: int = 4000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {self.samples.shape}")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"recording {self.id}: non-finite samples")
        if self.samples.size and np.max(np.abs(self.samples)) > 1.0:
            raise ValueError(f"recording {self.id}: samples outside [-1, 1]")

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate

    def to_dict(self, exclude=None):
        data = super().to_dict(exclude=['samples'] + list(exclude or []))
        data['duration_s'] = self.duration_s
        return data


@dataclass(repr=False)
class LabelEvent(BaseModel):
    """带时间戳的标注事件"""

    kind: LabelKind
    t_start: float
    t_end: float

    def __post_init__(self):
        self.kind = LabelKind(self.kind)
        self.t_start = float(self.t_start)
        self.t_end = float(self.t_end)
        if self.t_start < 0 or self.t_end <= self.t_start:
            raise ValueError(f"invalid label interval [{self.t_start}, {self.t_end}): t_end ≤ t_start or negative start")

    @property
    def duration_s(self):
        return self.t_end - self.t_start

    @property
    def is_cas(self):
        return self.kind in CAS_KINDS


@dataclass(repr=False)
class DatasetEntry(BaseModel):
    recording: Recording
    labels: List[LabelEvent] = field(default_factory=list)

    @property
    def has_cas(self):
        return any(label.is_cas for label in self.labels)

    def cas_labels(self):
        return [label for label in self.labels if label.is_cas]


@dataclass(repr=False)
class Dataset(BaseModel):
    """录音与标签的集合"""

    entries: List[DatasetEntry] = field(default_factory=list)
    split: Split = Split.TRAIN

    def __post_init__(self):
        self.split = Split(self.split)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, index):
        return self.entries[index]

    def subset(self, indices):
        return Dataset(entries=[self.entries[i] for i in indices], split=self.split)

    def ids(self):
        return [entry.recording.id for entry in self.entries]
