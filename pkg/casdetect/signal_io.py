"""
信号输入输出模块
读取WAV录音和文本标签文件，校验后组装成训练/测试数据集
"""

import os
import struct
from collections import Counter

import numpy as np
import soundfile as sf

from casdetect.models import Recording, LabelEvent, LabelKind, Dataset, DatasetEntry, Split
from casdetect.utils.exceptions import DataError
from casdetect.utils.logger import get_logger

logger = get_logger('signal_io')

LABEL_DECIMALS = 3
_VALID_KINDS = {kind.value for kind in LabelKind}


def _declared_data_bytes(path):
    """扫描RIFF块，返回data块声明的字节数和实际可读字节数"""
    with open(path, 'rb') as f:
        header = f.read(12)
        if len(header) < 12 or header[:4] != b'RIFF' or header[8:12] != b'WAVE':
            raise DataError(f"{path}: not a RIFF/WAVE file", field='riff_header', path=str(path))
        while True:
            chunk = f.read(8)
            if len(chunk) < 8:
                raise DataError(f"{path}: truncated payload, no data chunk", field='data_chunk', path=str(path))
            chunk_id, size = struct.unpack('<4sI', chunk)
            if chunk_id == b'data':
                start = f.tell()
                f.seek(0, os.SEEK_END)
                return size, f.tell() - start
            f.seek(size + (size & 1), os.SEEK_CUR)


def read_wav(path):
    """
    读取单声道16位PCM WAV

    参数:
        path: WAV文件路径

    返回:
        Recording，采样值从整数PCM缩放到[-1, 1]，采样率取自文件头
    """
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}", field='path', path=str(path))

    declared, available = _declared_data_bytes(path)
    if available < declared:
        raise DataError(f"{path}: truncated payload, header declares {declared} bytes but {available} present",
                        field='data_size', path=str(path))

    try:
        info = sf.info(path)
    except RuntimeError as e:
        raise DataError(f"{path}: unreadable WAV ({e})", field='header', path=str(path))

    if info.channels != 1:
        raise DataError(f"channel count {info.channels} unsupported", field='channels', path=str(path))
    if info.format != 'WAV' or info.subtype != 'PCM_16':
        raise DataError(f"codec {info.format}/{info.subtype} unsupported, expected WAV/PCM_16",
                        field='subtype', path=str(path))

    samples, sample_rate = sf.read(path, dtype='float64', always_2d=False)
    recording_id = os.path.splitext(os.path.basename(path))[0]
    return Recording(id=recording_id, samples=np.clip(samples, -1.0, 1.0), sample_rate=int(sample_rate))


def write_wav(path, recording):
    """
    以16位PCM写入录音

    参数:
        path: 目标路径
        recording: Recording
    """
    sf.write(path, np.clip(recording.samples, -1.0, 1.0), recording.sample_rate, subtype='PCM_16', format='WAV')


def conform_sample_rate(recording, target_rate, resample=False):
    """
    统一采样率，未开启resample时拒绝不同采样率

    参数:
        recording: Recording
        target_rate: 目标采样率
        resample: 是否允许线性插值重采样

    返回:
        Recording
    """
    if recording.sample_rate == target_rate:
        return recording
    if not resample:
        raise DataError(f"recording {recording.id}: sample rate {recording.sample_rate} Hz, expected {target_rate} Hz "
                        f"(enable resampling to convert)", field='sample_rate')

    n_out = int(round(recording.samples.size * target_rate / recording.sample_rate))
    t_in = np.arange(recording.samples.size) / recording.sample_rate
    t_out = np.arange(n_out) / target_rate
    samples = np.interp(t_out, t_in, recording.samples)
    logger.info(f"录音 {recording.id} 重采样: {recording.sample_rate} Hz -> {target_rate} Hz")
    return Recording(id=recording.id, samples=samples, sample_rate=target_rate)


def read_labels(path):
    """
    读取标签文件，每行 `<kind> <t_start> <t_end>`

    参数:
        path: 标签文件路径

    返回:
        按t_start排序的LabelEvent列表
    """
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}", field='path', path=str(path))

    events = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 3:
                raise DataError(f"{path} line {line_number}: expected 3 fields, got {len(fields)}",
                                line=line_number, path=str(path))
            kind, start_text, end_text = fields
            if kind not in _VALID_KINDS:
                raise DataError(f"{path} line {line_number}: unknown label kind {kind!r}",
                                line=line_number, path=str(path))
            try:
                t_start, t_end = float(start_text), float(end_text)
            except ValueError:
                raise DataError(f"{path} line {line_number}: non-numeric time",
                                line=line_number, path=str(path))
            if not (np.isfinite(t_start) and np.isfinite(t_end)) or t_start < 0:
                raise DataError(f"{path} line {line_number}: invalid time", line=line_number, path=str(path))
            if t_end <= t_start:
                raise DataError(f"{path} line {line_number}: t_end ≤ t_start", line=line_number, path=str(path))
            events.append(LabelEvent(kind=kind, t_start=t_start, t_end=t_end))

    return sorted(events, key=lambda event: event.t_start)


def write_labels(path, labels):
    """
    写入标签文件，时间保留3位小数

    参数:
        path: 目标路径
        labels: LabelEvent列表
    """
    with open(path, 'w', encoding='utf-8') as f:
        for label in sorted(labels, key=lambda event: event.t_start):
            f.write(f"{label.kind.value} {label.t_start:.{LABEL_DECIMALS}f} {label.t_end:.{LABEL_DECIMALS}f}\n")


def read_manifest(path):
    """
    读取数据集清单，每行 `<wav-path> <label-path>`，相对路径以清单所在目录为基准

    返回:
        [(wav_path, label_path), ...]
    """
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}", field='path', path=str(path))

    base_dir = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith('#'):
                continue
            fields = line.split()
            if len(fields) != 2:
                raise DataError(f"{path} line {line_number}: expected `<wav-path> <label-path>`",
                                line=line_number, path=str(path))
            pairs.append(tuple(os.path.normpath(os.path.join(base_dir, p)) for p in fields))
    return pairs


def write_manifest(path, pairs):
    """写入数据集清单，路径相对于清单目录"""
    base_dir = os.path.dirname(os.path.abspath(path))
    with open(path, 'w', encoding='utf-8') as f:
        for wav_path, label_path in pairs:
            f.write(f"{os.path.relpath(wav_path, base_dir)} {os.path.relpath(label_path, base_dir)}\n")


def load_dataset(manifest_path, split=Split.TRAIN, sample_rate=4000, resample=False, expected_duration_s=15.0):
    """
    按清单加载数据集并校验标签落在录音范围内

    参数:
        manifest_path: 清单路径
        split: train 或 test
        sample_rate: 期望采样率
        resample: 是否允许重采样
        expected_duration_s: 期望时长，不一致时只警告

    返回:
        Dataset
    """
    entries = []
    seen_ids = set()
    for wav_path, label_path in read_manifest(manifest_path):
        recording = conform_sample_rate(read_wav(wav_path), sample_rate, resample)
        if recording.id in seen_ids:
            raise DataError(f"duplicate recording id {recording.id}", field='id', path=wav_path)
        seen_ids.add(recording.id)

        if abs(recording.duration_s - expected_duration_s) > 1.0 / recording.sample_rate:
            logger.warning(f"录音 {recording.id} 时长 {recording.duration_s:.3f}s，不是 {expected_duration_s}s，帧数将按长度推导")

        labels = read_labels(label_path)
        tolerance = 1.0 / recording.sample_rate
        for label in labels:
            if label.t_end > recording.duration_s + tolerance:
                raise DataError(f"{label_path}: label [{label.t_start}, {label.t_end}) exceeds recording "
                                f"duration {recording.duration_s:.3f}s", field='t_end', path=label_path)
        entries.append(DatasetEntry(recording=recording, labels=labels))

    logger.info(f"加载数据集 {manifest_path}: {len(entries)} 条录音")
    return Dataset(entries=entries, split=split)


def filter_cas_dataset(dataset):
    """
    只保留至少含一个CAS标签(C/W/S/R)的录音，保持顺序

    参数:
        dataset: Dataset

    返回:
        Dataset
    """
    kept = [entry for entry in dataset.entries if entry.has_cas]
    logger.debug(f"CAS过滤: {len(dataset)} -> {len(kept)}")
    return Dataset(entries=kept, split=dataset.split)


def dataset_statistics(dataset):
    """
    统计各类标签的数量与时长

    返回:
        dict: recordings、recordings_with_cas、按类型的count/total_duration_s/mean_duration_s，
        以及CAS家族合计(键 'CAS')
    """
    counts = Counter()
    durations = Counter()
    for entry in dataset:
        for label in entry.labels:
            counts[label.kind.value] += 1
            durations[label.kind.value] += label.duration_s
            if label.is_cas:
                counts['CAS'] += 1
                durations['CAS'] += label.duration_s

    kinds = {}
    for kind in [k.value for k in LabelKind] + ['CAS']:
        n = counts.get(kind, 0)
        kinds[kind] = {
            'count': n,
            'total_duration_s': round(durations.get(kind, 0.0), 6),
            'mean_duration_s': round(durations[kind] / n, 6) if n else None,
        }
    return {
        'split': dataset.split.value,
        'recordings': len(dataset),
        'recordings_with_cas': sum(1 for entry in dataset if entry.has_cas),
        'kinds': kinds,
    }
