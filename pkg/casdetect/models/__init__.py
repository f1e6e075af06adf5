"""
数据模型包
包含所有领域记录类型
"""

from .recording import Recording, LabelEvent, LabelKind, CAS_KINDS, Dataset, DatasetEntry, Split
from .event import DetectedEvent
from .metrics import SegmentConfusion, EventCounts, RocCurve, MetricSet
from .features import FrameGrid, Spectrogram, FeatureMatrix

__all__ = [
    'Recording',
    'LabelEvent',
    'LabelKind',
    'CAS_KINDS',
    'Dataset',
    'DatasetEntry',
    'Split',
    'DetectedEvent',
    'SegmentConfusion',
    'EventCounts',
    'RocCurve',
    'MetricSet',
    'FrameGrid',
    'Spectrogram',
    'FeatureMatrix'
]
