"""
后处理模块
概率向量 -> 阈值化 -> 连通片段 -> 按间隔和能量峰合并 -> 去除短脉冲
"""

import math
from dataclasses import dataclass, asdict

import numpy as np

from casdetect.models import DetectedEvent
from casdetect.utils.exceptions import DataError, ShapeError, UsageError
from casdetect.utils.logger import get_logger

logger = get_logger('postprocess')

EVENT_DECIMALS = 3
_EPS = 1e-9


@dataclass
class MergeConfig:
    """
    合并参数
    T: 相邻事件最大间隔（秒），P: 能量峰最大频差（Hz），min_duration: 最短事件（秒）
    """

    T: float = 0.5
    P: float = 25.0
    min_duration: float = 0.05

    def __post_init__(self):
        for name in ('T', 'P', 'min_duration'):
            if not getattr(self, name) > 0:
                raise UsageError(f"MergeConfig.{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def from_config(cls, config):
        return cls(T=config.MERGE_GAP_S, P=config.MERGE_PEAK_HZ, min_duration=config.MIN_EVENT_DURATION_S)

    @classmethod
    def from_mapping(cls, mapping, base=None, **overrides):
        aliases = {'t': 'T', 'merge_gap_s': 'T', 'p': 'P', 'merge_peak_hz': 'P',
                   'min_duration': 'min_duration', 'min_event_duration_s': 'min_duration'}
        values = asdict(base) if base is not None else {}
        values.update({aliases[key.lower()]: float(value) for key, value in mapping.items()
                       if key.lower() in aliases})
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def threshold_segments(probabilities, threshold):
    """p >= θ 记为1"""
    if not 0.0 <= threshold <= 1.0:
        raise UsageError(f"threshold must be in [0, 1], got {threshold}")
    return (np.asarray(probabilities) >= threshold).astype(np.int8)


def segments_to_events(binary, grid):
    """
    连续的1转成事件 [首步*步长, (末步+1)*步长)

    参数:
        binary: (k,) 0/1向量
        grid: 输出分辨率的FrameGrid

    返回:
        DetectedEvent列表，peak_freq未设置
    """
    binary = np.asarray(binary).astype(np.int8).ravel()
    if binary.size != grid.n_frames:
        raise ShapeError("segments_to_events: binary length does not match the grid",
                         expected=grid.n_frames, actual=binary.size)

    edges = np.diff(np.concatenate([[0], binary, [0]]))
    run_starts = np.flatnonzero(edges == 1)
    run_ends = np.flatnonzero(edges == -1)
    return [DetectedEvent(t_start=start * grid.hop_s, t_end=end * grid.hop_s)
            for start, end in zip(run_starts, run_ends)]


def _frame_range(t_start, t_end, spectrogram):
    grid = spectrogram.grid
    if t_start < -_EPS or t_end > grid.span_s + _EPS:
        raise DataError(f"event [{t_start:.3f}, {t_end:.3f}) outside the spectrogram span {grid.span_s:.3f}s",
                        field='event')
    first = max(0, int(math.floor(t_start / grid.hop_s + _EPS)))
    last = min(grid.n_frames, int(math.ceil(t_end / grid.hop_s - _EPS)))
    return first, max(last, first + 1)


def event_peak_frequency(event, spectrogram):
    """
    事件所在帧的平均功率谱的最大频点

    参数:
        event: DetectedEvent 或 (t_start, t_end)
        spectrogram: 归一化前的Spectrogram

    返回:
        频率（Hz），并列时取最低频
    """
    t_start, t_end = (event.t_start, event.t_end) if hasattr(event, 't_start') else event
    first, last = _frame_range(t_start, t_end, spectrogram)
    mean_power = np.mean(spectrogram.magnitudes[:, first:last] ** 2, axis=1)
    # np.argmax 返回第一个最大值，即最低频
    return float(np.argmax(mean_power) * spectrogram.freq_resolution)


def _check_ordered(events):
    for previous, current in zip(events, events[1:]):
        if current.t_start < previous.t_start:
            raise DataError("merge_events: events not sorted by t_start", field='events')
        if current.t_start < previous.t_end - _EPS:
            raise DataError(f"merge_events: overlapping events at {current.t_start:.3f}s", field='events')


def _mergeable(left, right, config):
    return (right.t_start - left.t_end) < config.T and abs(right.peak_freq - left.peak_freq) < config.P


def merge_events(events, spectrogram, config=None):
    """
    相邻事件合并，直到没有可合并的一对
    条件: 间隔 < T 且 峰频差 < P（均为严格不等式），合并后在新区间上重新计算峰频

    参数:
        events: 按t_start排序且互不重叠的事件
        spectrogram: 归一化前的Spectrogram
        config: MergeConfig

    返回:
        合并后的事件列表（都带peak_freq）
    """
    config = config or MergeConfig()
    events = list(events)
    _check_ordered(events)

    # 栈中相邻两项始终不可合并，新事件入栈后只需回看栈顶
    stack = []
    for event in events:
        current = event.with_peak(event_peak_frequency(event, spectrogram))
        while stack and _mergeable(stack[-1], current, config):
            left = stack.pop()
            span = DetectedEvent(t_start=left.t_start, t_end=current.t_end)
            current = span.with_peak(event_peak_frequency(span, spectrogram))
        stack.append(current)

    if len(stack) < len(events):
        logger.debug(f"合并: {len(events)} -> {len(stack)} 个事件")
    return stack


def remove_bursts(events, config=None):
    """
    删除时长 < min_duration 的事件
    容差1e-9秒：时长 >= min_duration - 1e-9 即保留，恰好等于min_duration但带舍入误差的事件不会被删，
    短出容差以上的照常删除
    """
    config = config or MergeConfig()
    return [event for event in events if event.duration_s >= config.min_duration - _EPS]


def detect_events(probabilities, threshold, grid, spectrogram, config=None):
    """
    完整后处理链：阈值化 → 片段 → 合并(间隔 < T 且峰频差 < P) → 删除时长 < min_duration - 1e-9 的事件

    参数:
        probabilities: (k,) 模型输出
        threshold: θ
        grid: 输出分辨率的FrameGrid
        spectrogram: 归一化前的Spectrogram
        config: MergeConfig

    返回:
        DetectedEvent列表
    """
    config = config or MergeConfig()
    binary = threshold_segments(probabilities, threshold)
    events = segments_to_events(binary, grid)
    merged = merge_events(events, spectrogram, config)
    return remove_bursts(merged, config)


def occupation_rate(events, duration_s):
    """检测到的CAS覆盖录音时长的比例"""
    if duration_s <= 0:
        raise DataError(f"recording duration must be positive, got {duration_s}", field='duration_s')
    covered = sum(min(event.t_end, duration_s) - max(event.t_start, 0.0) for event in events)
    return float(min(1.0, max(0.0, covered / duration_s)))


def write_events(path, events):
    """每行 `<t_start> <t_end> <peak_freq_hz>`"""
    with open(path, 'w', encoding='utf-8') as f:
        for event in events:
            peak = event.peak_freq if event.peak_freq is not None else float('nan')
            f.write(f"{event.t_start:.{EVENT_DECIMALS}f} {event.t_end:.{EVENT_DECIMALS}f} "
                    f"{peak:.{EVENT_DECIMALS}f}\n")


def read_events(path):
    """读取write_events写出的文件"""
    events = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 3:
                raise DataError(f"{path}:{line_number}: expected 3 fields, got {len(fields)}", line=line_number)
            try:
                t_start, t_end, peak = (float(value) for value in fields)
                event = DetectedEvent(t_start=t_start, t_end=t_end, peak_freq=None if math.isnan(peak) else peak)
            except ValueError as e:
                raise DataError(f"{path}:{line_number}: {e}", line=line_number)
            events.append(event)
    return events
