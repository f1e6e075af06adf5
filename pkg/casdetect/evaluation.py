"""
评估模块
真值栅格化、片段混淆计数与指标、ROC/AUC、基于Jaccard的双向事件匹配
"""

import csv

import numpy as np
from sklearn.metrics import roc_curve, auc as trapezoid_auc

from casdetect.models import CAS_KINDS, SegmentConfusion, EventCounts, RocCurve, MetricSet
from casdetect.utils.exceptions import DataError, ShapeError
from casdetect.utils.logger import get_logger

logger = get_logger('evaluation')

MATCH_JI = 0.5
RASTER_OVERLAP = 0.5
_EPS = 1e-9

SEGMENT_METRICS = ('ACC', 'PPV', 'SEN', 'SPE', 'F1', 'AUC')
EVENT_METRICS = ('PPV', 'SEN', 'F1')

# 六种结构的参考测试集结果，只用于报告对照
REFERENCE_RESULTS = {
    'Baseline': {'segment': {'ACC': 0.877, 'PPV': 0.671, 'SEN': 0.411, 'SPE': 0.963, 'F1': 0.509, 'AUC': 0.896},
                 'event': {'PPV': 0.399, 'SEN': 0.347, 'F1': 0.445}},
    'RB1': {'segment': {'ACC': 0.880, 'PPV': 0.676, 'SEN': 0.440, 'SPE': 0.961, 'F1': 0.532, 'AUC': 0.910},
            'event': {'PPV': 0.428, 'SEN': 0.406, 'F1': 0.491}},
    'RB2': {'segment': {'ACC': 0.881, 'PPV': 0.677, 'SEN': 0.454, 'SPE': 0.960, 'F1': 0.543, 'AUC': 0.909},
            'event': {'PPV': 0.424, 'SEN': 0.414, 'F1': 0.500}},
    'CNN96': {'segment': {'ACC': 0.885, 'PPV': 0.687, 'SEN': 0.485, 'SPE': 0.959, 'F1': 0.568, 'AUC': 0.916},
              'event': {'PPV': 0.461, 'SEN': 0.425, 'F1': 0.520}},
    'CNN128': {'segment': {'ACC': 0.882, 'PPV': 0.687, 'SEN': 0.453, 'SPE': 0.961, 'F1': 0.545, 'AUC': 0.910},
               'event': {'PPV': 0.436, 'SEN': 0.408, 'F1': 0.503}},
    'MultiPath': {'segment': {'ACC': 0.884, 'PPV': 0.671, 'SEN': 0.505, 'SPE': 0.954, 'F1': 0.575, 'AUC': 0.914},
                  'event': {'PPV': 0.498, 'SEN': 0.432, 'F1': 0.530}},
}


def _merge_intervals(intervals):
    merged = []
    for start, end in sorted(intervals):
        if merged and start <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return merged


def rasterize_labels(labels, grid):
    """
    把CAS标签转成输出网格上的0/1向量
    某一步的时间片与CAS标签并集的重叠 >= 50% 片长时记为1（含边界）

    参数:
        labels: LabelEvent列表，非CAS类型被忽略
        grid: 模型输出分辨率的FrameGrid

    返回:
        (k,) int8 ndarray
    """
    for label in labels:
        if label.t_end > grid.span_s + _EPS:
            raise DataError(f"label [{label.t_start}, {label.t_end}) outside the recording span {grid.span_s:.3f}s",
                            field='t_end')

    starts = grid.starts()
    ends = starts + grid.hop_s
    overlap = np.zeros(grid.n_frames)
    for start, end in _merge_intervals([(l.t_start, l.t_end) for l in labels if l.kind in CAS_KINDS]):
        overlap += np.clip(np.minimum(ends, end) - np.maximum(starts, start), 0.0, None)
    return (overlap >= RASTER_OVERLAP * grid.hop_s - _EPS).astype(np.int8)


def segment_confusion(predicted, truth):
    """
    逐元素统计TP/TN/FP/FN

    返回:
        SegmentConfusion
    """
    predicted = np.asarray(predicted).astype(bool)
    truth = np.asarray(truth).astype(bool)
    if predicted.shape != truth.shape:
        raise ShapeError("segment_confusion length mismatch", expected=truth.shape, actual=predicted.shape)
    return SegmentConfusion(
        tp=int(np.sum(predicted & truth)),
        tn=int(np.sum(~predicted & ~truth)),
        fp=int(np.sum(predicted & ~truth)),
        fn=int(np.sum(~predicted & truth)),
    )


def _ratio(numerator, denominator):
    return numerator / denominator if denominator > 0 else None


def _f1(ppv, sen, undefined):
    if ppv is None or sen is None:
        undefined.append('F1')
        return None
    if ppv + sen == 0:
        # 约定: PPV=SEN=0 时F1记0并标记
        undefined.append('F1')
        return 0.0
    return 2 * ppv * sen / (ppv + sen)


def segment_metrics(confusion):
    """
    ACC/PPV/SEN/SPE/F1，分母为0的指标为None并列入undefined

    返回:
        MetricSet
    """
    c = confusion
    values = {
        'ACC': _ratio(c.tp + c.tn, c.total),
        'PPV': _ratio(c.tp, c.tp + c.fp),
        'SEN': _ratio(c.tp, c.tp + c.fn),
        'SPE': _ratio(c.tn, c.tn + c.fp),
    }
    undefined = [name for name, value in values.items() if value is None]
    values['F1'] = _f1(values['PPV'], values['SEN'], undefined)
    return MetricSet(values=values, undefined=undefined)


def event_metrics(counts):
    """
    事件级PPV/SEN/F1

    返回:
        MetricSet
    """
    values = {
        'PPV': _ratio(counts.tp, counts.tp + counts.fp),
        'SEN': _ratio(counts.tp, counts.tp + counts.fn),
    }
    undefined = [name for name, value in values.items() if value is None]
    values['F1'] = _f1(values['PPV'], values['SEN'], undefined)
    return MetricSet(values=values, undefined=undefined)


def roc_auc(probabilities, truth):
    """
    精确ROC：每个不同的概率值都是一个阈值（p >= θ 判为阳性），梯形法求AUC

    返回:
        RocCurve，第一个点阈值为inf对应(0,0)
    """
    probabilities = np.asarray(probabilities, dtype=np.float64).ravel()
    truth = np.asarray(truth).ravel().astype(int)
    if probabilities.shape != truth.shape:
        raise ShapeError("roc_auc length mismatch", expected=truth.shape, actual=probabilities.shape)
    if probabilities.size == 0:
        raise DataError("roc_auc: empty inputs", field='probabilities')
    if not set(np.unique(truth)) <= {0, 1}:
        raise DataError("roc_auc: truth must be 0/1", field='truth')
    if truth.min(initial=1) == truth.max(initial=0):
        raise DataError("roc_auc: single-class truth, need at least one positive and one negative", field='truth')

    fpr, tpr, thresholds = roc_curve(truth, probabilities, drop_intermediate=False)
    thresholds = thresholds.astype(np.float64)
    thresholds[0] = np.inf
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=float(trapezoid_auc(fpr, tpr)))


def jaccard(a, b):
    """
    两个区间的交并比，并集按覆盖的总长度计算

    参数:
        a, b: (start, end)

    返回:
        [0, 1]内的浮点数；零长度区间按约定返回0并记录日志
    """
    a_start, a_end = a
    b_start, b_end = b
    if a_end <= a_start or b_end <= b_start:
        logger.debug(f"零长度区间参与Jaccard计算: {a}, {b}")
        return 0.0
    intersection = max(0.0, min(a_end, b_end) - max(a_start, b_start))
    union = (a_end - a_start) + (b_end - b_start) - intersection
    return intersection / union


def _jaccard_matrix(truth, predicted):
    t_start = np.array([e.t_start for e in truth])[:, None]
    t_end = np.array([e.t_end for e in truth])[:, None]
    p_start = np.array([e.t_start for e in predicted])[None, :]
    p_end = np.array([e.t_end for e in predicted])[None, :]
    intersection = np.clip(np.minimum(t_end, p_end) - np.maximum(t_start, p_start), 0.0, None)
    union = (t_end - t_start) + (p_end - p_start) - intersection
    return intersection / union


def _check_sorted(events, name):
    starts = [e.t_start for e in events]
    if any(b < a for a, b in zip(starts, starts[1:])):
        raise DataError(f"match_events: {name} events not sorted by t_start", field=name)


def match_events(predicted, truth):
    """
    双向JI匹配
    第一遍以真值为参照：有JI>=0.5预测的真值是TP，否则FN
    第二遍以预测为参照：有JI>=0.5真值的预测是TP，否则FP
    一对TP只算一次，tp取匹配上的真值数

    参数:
        predicted: DetectedEvent列表（按t_start排序）
        truth: LabelEvent列表（按t_start排序）

    返回:
        EventCounts
    """
    _check_sorted(predicted, 'predicted')
    _check_sorted(truth, 'truth')
    if not truth or not predicted:
        return EventCounts(tp=0, fp=len(predicted), fn=len(truth))

    matched = _jaccard_matrix(truth, predicted) >= MATCH_JI - _EPS
    matched_truth = int(matched.any(axis=1).sum())
    matched_predicted = int(matched.any(axis=0).sum())
    return EventCounts(tp=matched_truth, fp=len(predicted) - matched_predicted, fn=len(truth) - matched_truth)


def select_threshold(probabilities, truth):
    """
    在候选阈值上取片段准确率最高者，并列取最小θ
    候选: {0, 1} 以及排序后相邻不同概率值的中点

    返回:
        θ
    """
    p = np.asarray(probabilities, dtype=np.float64).ravel()
    t = np.asarray(truth).ravel().astype(bool)
    if p.size == 0:
        raise DataError("select_threshold: empty inputs", field='probabilities')
    if p.shape != t.shape:
        raise ShapeError("select_threshold length mismatch", expected=t.shape, actual=p.shape)

    unique = np.unique(p)
    candidates = np.unique(np.concatenate([[0.0, 1.0], (unique[:-1] + unique[1:]) / 2.0]))

    order = np.argsort(p, kind='stable')
    sorted_p = p[order]
    positives_below = np.concatenate([[0], np.cumsum(t[order])])
    below = np.searchsorted(sorted_p, candidates, side='left')
    tp = positives_below[-1] - positives_below[below]
    tn = below - positives_below[below]
    # 整数计数比较，argmax取第一个即最小θ
    return float(candidates[int(np.argmax(tp + tn))])


def _test_selected_block(kept, pooled_probs, pooled_truth, auc_value, redetect):
    """
    在测试集本身上重新选θ，作为验证集θ的对照（乐观上界）
    redetect为None时只给片段级结果
    """
    if pooled_probs.size == 0:
        return None
    theta = select_threshold(pooled_probs, pooled_truth)
    confusion = segment_confusion(pooled_probs >= theta, pooled_truth)
    seg = segment_metrics(confusion)
    seg.values['AUC'] = auc_value
    if auc_value is None:
        seg.undefined.append('AUC')
    block = {
        'threshold': theta,
        'segment': {'confusion': confusion.to_dict(), 'metrics': seg.values, 'undefined': sorted(seg.undefined)},
        'event': None,
    }
    if redetect is not None:
        counts = EventCounts()
        for record, cas_labels in kept:
            counts = counts + match_events(redetect(record, theta), cas_labels)
        evt = event_metrics(counts)
        block['event'] = {'counts': counts.to_dict(), 'metrics': evt.values, 'undefined': sorted(evt.undefined)}
    return block


def evaluate_predictions(records, threshold, redetect=None):
    """
    汇总所有测试录音
    除了给定θ下的结果，还在测试集上重新选θ，结果放在test_selected里

    参数:
        records: 可迭代对象，每项包含
            probabilities (k,), truth_segments (k,), events [DetectedEvent], labels [LabelEvent]
        threshold: 片段阈值θ（一般来自验证集）
        redetect: 可选，(record, θ) -> DetectedEvent列表，用于在测试集θ下重新生成事件

    返回:
        dict: threshold、recordings、segment{confusion, metrics, undefined}、event{counts, metrics, undefined}、
              test_selected{threshold, segment, event}
    """
    confusion = SegmentConfusion()
    counts = EventCounts()
    pooled_probs, pooled_truth, kept = [], [], []
    n = 0
    for record in records:
        probs = np.asarray(record['probabilities'])
        truth = np.asarray(record['truth_segments'])
        confusion = confusion + segment_confusion(probs >= threshold, truth)
        cas_labels = [label for label in record['labels'] if label.kind in CAS_KINDS]
        counts = counts + match_events(record['events'], cas_labels)
        pooled_probs.append(probs)
        pooled_truth.append(truth)
        kept.append((record, cas_labels))
        n += 1

    seg = segment_metrics(confusion)
    pooled_probs = np.concatenate(pooled_probs) if pooled_probs else np.zeros(0)
    pooled_truth = np.concatenate(pooled_truth) if pooled_truth else np.zeros(0)
    curve = None
    try:
        curve = roc_auc(pooled_probs, pooled_truth)
        seg.values['AUC'] = curve.auc
    except DataError as e:
        logger.warning(f"无法计算AUC: {e.message}")
        seg.values['AUC'] = None
        seg.undefined.append('AUC')

    evt = event_metrics(counts)
    report = {
        'threshold': float(threshold),
        'recordings': n,
        'segment': {'confusion': confusion.to_dict(), 'metrics': seg.values, 'undefined': sorted(seg.undefined)},
        'event': {'counts': counts.to_dict(), 'metrics': evt.values, 'undefined': sorted(evt.undefined)},
        'test_selected': _test_selected_block(kept, pooled_probs, pooled_truth, seg.values['AUC'], redetect),
    }
    return report, curve


def compare_models(reports):
    """
    多模型对比：九项指标（片段ACC/PPV/SEN/SPE/F1/AUC + 事件PPV/SEN/F1）中各自取得最佳值的次数

    参数:
        reports: {模型名: evaluate_predictions返回的报告}

    返回:
        dict: metrics 列表、rows {模型: {指标: 值}}、wins {模型: 次数}、reference
    """
    columns = [('segment', m) for m in SEGMENT_METRICS] + [('event', m) for m in EVENT_METRICS]
    rows = {name: {f"{level}.{metric}": report[level]['metrics'].get(metric) for level, metric in columns}
            for name, report in reports.items()}

    wins = {name: 0 for name in reports}
    for level, metric in columns:
        key = f"{level}.{metric}"
        values = [v for v in (row[key] for row in rows.values()) if v is not None]
        if not values:
            continue
        best = max(values)
        for name, row in rows.items():
            if row[key] is not None and abs(row[key] - best) < 1e-12:
                wins[name] += 1

    return {
        'metrics': [f"{level}.{metric}" for level, metric in columns],
        'rows': rows,
        'wins': wins,
        'reference': {name: REFERENCE_RESULTS[name] for name in reports if name in REFERENCE_RESULTS},
    }


def format_comparison(comparison):
    """对比结果的文本表格"""
    metrics = comparison['metrics']
    header = f"{'model':<12}" + ''.join(f"{m.split('.')[0][:3]}.{m.split('.')[1]:<6}" for m in metrics) + 'wins'
    lines = [header, '-' * len(header)]
    for name, row in comparison['rows'].items():
        cells = ''.join(f"{row[m]:<10.3f}" if row[m] is not None else f"{'n/a':<10}" for m in metrics)
        lines.append(f"{name:<12}{cells}{comparison['wins'][name]}")
    return '\n'.join(lines)


def write_roc_csv(path, curve):
    """列: threshold, fpr, tpr；第一行阈值为inf"""
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['threshold', 'fpr', 'tpr'])
        for threshold, fpr, tpr in curve.points():
            writer.writerow([repr(float(threshold)), repr(float(fpr)), repr(float(tpr))])


def read_roc_csv(path):
    with open(path, 'r', encoding='utf-8', newline='') as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise DataError(f"{path}: empty ROC file", field='path')
    thresholds = np.array([float(row['threshold']) for row in rows])
    fpr = np.array([float(row['fpr']) for row in rows])
    tpr = np.array([float(row['tpr']) for row in rows])
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr, auc=float(trapezoid_auc(fpr, tpr)))
