"""
predict 命令
特征提取 -> 推理 -> 阈值 -> 后处理，每条录音写出概率向量和事件文件
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from casdetect.api.common import add_common_arguments, ensure_dir, load_settings
from casdetect.architectures import predict
from casdetect.features import assemble_features
from casdetect.models import Split
from casdetect.nn.checkpoint import load_checkpoint
from casdetect.postprocess import (detect_events, segments_to_events, threshold_segments, write_events,
                                   occupation_rate)
from casdetect.signal_io import read_wav, conform_sample_rate, load_dataset
from casdetect.utils.exceptions import UsageError
from casdetect.utils.logger import get_logger, LogContext
from casdetect.utils.response import success_response, write_json_artifact

logger = get_logger('api.predict')

PROBS_SUFFIX = '.probs.txt'
EVENTS_SUFFIX = '.events.txt'
INDEX_NAME = 'predictions.json'


def register(subparsers):
    parser = subparsers.add_parser('predict', help='对录音做CAS检测')
    parser.add_argument('--checkpoint', required=True, help='train写出的model.ckpt')
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument('--manifest', help='数据集清单')
    source.add_argument('--wav', nargs='+', help='单独的WAV文件')
    parser.add_argument('--out', required=True, help='输出目录')
    parser.add_argument('--threshold', type=float, help='θ，默认用检查点里交叉验证选出的值')
    parser.add_argument('--raw-events', action='store_true', help='跳过合并与去短脉冲')
    parser.add_argument('--jobs', type=int, default=1, help='并行处理的录音数')
    parser.add_argument('--resample', action='store_true')
    add_common_arguments(parser)
    parser.set_defaults(handler=cmd_predict)


def write_probabilities(path, probabilities):
    with open(path, 'w', encoding='utf-8') as f:
        for value in probabilities:
            f.write(f"{float(value):.17g}\n")


def read_probabilities(path):
    return np.loadtxt(path, dtype=np.float64, ndmin=1)


def _recordings(args, sample_rate, expected_duration_s):
    if args.manifest:
        dataset = load_dataset(args.manifest, Split.TEST, sample_rate, args.resample, expected_duration_s)
        return [entry.recording for entry in dataset]
    return [conform_sample_rate(read_wav(path), sample_rate, args.resample) for path in args.wav]


def cmd_predict(args, config):
    """
    推理并写出 <id>.probs.txt、<id>.events.txt 和 predictions.json

    返回:
        退出码
    """
    settings = load_settings(config, args.config, args.seed)
    out_dir = ensure_dir(args.out)
    model, extra = load_checkpoint(args.checkpoint)

    threshold = args.threshold if args.threshold is not None else settings.threshold
    if threshold is None:
        threshold = extra.get('threshold')
    if threshold is None:
        raise UsageError("no threshold given and the checkpoint carries none", field='threshold')

    recordings = _recordings(args, settings.feature.sample_rate, config.EXPECTED_DURATION_S)

    def run(recording):
        features = assemble_features(recording, settings.feature)
        probabilities, grid = predict(model, features)
        if args.raw_events:
            events = segments_to_events(threshold_segments(probabilities, threshold), grid)
        else:
            events = detect_events(probabilities, threshold, grid, features.spectrogram, settings.merge)
        probs_path = os.path.join(out_dir, recording.id + PROBS_SUFFIX)
        events_path = os.path.join(out_dir, recording.id + EVENTS_SUFFIX)
        write_probabilities(probs_path, probabilities)
        write_events(events_path, events)
        return {
            'id': recording.id,
            'steps': int(grid.n_frames),
            'events': len(events),
            'occupation_rate': occupation_rate(events, recording.duration_s),
            'probabilities': os.path.basename(probs_path),
            'event_file': os.path.basename(events_path),
        }, grid

    with LogContext('predict', 'api.predict', recordings=len(recordings), threshold=threshold):
        if args.jobs > 1:
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                outputs = list(pool.map(run, recordings))
        else:
            outputs = [run(recording) for recording in recordings]

    index = {
        'checkpoint': os.path.abspath(args.checkpoint),
        'model_spec': model.spec.to_dict(),
        'threshold': float(threshold),
        'postprocess': 'none' if args.raw_events else vars(settings.merge),
        'hop_s': outputs[0][1].hop_s if outputs else None,
        'seed': settings.seed,
        'recordings': [record for record, _ in outputs],
    }
    write_json_artifact(os.path.join(out_dir, INDEX_NAME), index)
    return success_response({'out': out_dir, 'threshold': float(threshold), 'recordings': len(outputs),
                             'events': sum(record['events'] for record, _ in outputs)})
