"""
evaluate 命令
把predict的输出和真值标签对比，写出metrics.json和roc.csv
"""

import json
import os

from casdetect.api.common import add_common_arguments, ensure_dir, load_settings
from casdetect.api.predict import INDEX_NAME, read_probabilities
from casdetect.evaluation import evaluate_predictions, rasterize_labels, write_roc_csv
from casdetect.features import highpass_80, stft
from casdetect.models import FrameGrid
from casdetect.postprocess import MergeConfig, detect_events, read_events, segments_to_events, threshold_segments
from casdetect.signal_io import read_manifest, read_labels, read_wav, conform_sample_rate
from casdetect.utils.exceptions import DataError
from casdetect.utils.logger import get_logger, LogContext
from casdetect.utils.response import success_response, write_json_artifact

logger = get_logger('api.evaluate')


def register(subparsers):
    parser = subparsers.add_parser('evaluate', help='计算片段级和事件级指标')
    parser.add_argument('--predictions', required=True, help='predict的输出目录')
    parser.add_argument('--manifest', required=True, help='真值清单')
    parser.add_argument('--out', required=True, help='输出目录')
    parser.add_argument('--resample', action='store_true', help='重新生成事件时允许重采样')
    add_common_arguments(parser)
    parser.set_defaults(handler=cmd_evaluate)


def _load_index(predictions_dir):
    path = os.path.join(predictions_dir, INDEX_NAME)
    if not os.path.exists(path):
        raise DataError(f"missing file: {path}", field='predictions')
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def iter_records(predictions_dir, manifest):
    """按清单顺序产出evaluate_predictions需要的记录"""
    index = _load_index(predictions_dir)
    by_id = {record['id']: record for record in index['recordings']}
    for wav_path, label_path in read_manifest(manifest):
        rid = os.path.splitext(os.path.basename(wav_path))[0]
        if rid not in by_id:
            raise DataError(f"no prediction for recording {rid}", field='predictions', recording=rid)
        record = by_id[rid]
        probabilities = read_probabilities(os.path.join(predictions_dir, record['probabilities']))
        grid = FrameGrid(n_frames=probabilities.size, hop_s=index['hop_s'])
        labels = read_labels(label_path)
        yield {
            'id': rid,
            'probabilities': probabilities,
            'truth_segments': rasterize_labels(labels, grid),
            'events': read_events(os.path.join(predictions_dir, record['event_file'])),
            'labels': labels,
            'grid': grid,
            'wav_path': wav_path,
        }


def make_redetector(index, settings, resample=False):
    """
    按predict时的后处理方式，在新θ下重新生成事件

    参数:
        index: predictions.json内容
        settings: RunSettings，提供特征参数
        resample: 采样率不同时是否重采样

    返回:
        (record, θ) -> DetectedEvent列表
    """
    if index.get('postprocess') == 'none':
        def redetect_raw(record, threshold):
            return segments_to_events(threshold_segments(record['probabilities'], threshold), record['grid'])
        return redetect_raw

    merge = MergeConfig.from_mapping(index.get('postprocess') or {}, base=settings.merge)
    feature = settings.feature

    def redetect(record, threshold):
        recording = conform_sample_rate(read_wav(record['wav_path']), feature.sample_rate, resample)
        filtered = highpass_80(recording, feature.highpass_cutoff_hz, feature.highpass_order)
        spectrogram = stft(filtered, recording.sample_rate, feature.n_fft, feature.hop_length)
        return detect_events(record['probabilities'], threshold, record['grid'], spectrogram, merge)
    return redetect


def cmd_evaluate(args, config):
    """
    返回:
        退出码
    """
    settings = load_settings(config, args.config, args.seed)
    out_dir = ensure_dir(args.out)
    index = _load_index(args.predictions)
    redetect = make_redetector(index, settings, args.resample)
    with LogContext('evaluate', 'api.evaluate', predictions=args.predictions):
        report, curve = evaluate_predictions(iter_records(args.predictions, args.manifest), index['threshold'],
                                             redetect=redetect)

    selected = report['test_selected']
    if selected is not None:
        logger.info(f"测试集上选出的θ={selected['threshold']:.4f}，验证集θ={report['threshold']:.4f}")
    report['model_spec'] = index.get('model_spec')
    report['seed'] = index.get('seed')
    write_json_artifact(os.path.join(out_dir, 'metrics.json'), report)
    if curve is not None:
        write_roc_csv(os.path.join(out_dir, 'roc.csv'), curve)
    return success_response(report)
