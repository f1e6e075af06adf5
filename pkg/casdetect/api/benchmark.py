"""
benchmark 命令
单条录音(193 x 938)推理延迟：中位数、四分位距、相对Baseline的倍数
"""

import csv
import os
import time

import numpy as np
from tqdm import tqdm

from casdetect.api.common import add_common_arguments, ensure_dir, load_settings
from casdetect.architectures import Variant, build_model, count_params
from casdetect.utils.exceptions import UsageError
from casdetect.utils.logger import get_logger
from casdetect.utils.response import success_response

logger = get_logger('api.benchmark')

MIN_REPETITIONS = 30


def register(subparsers):
    parser = subparsers.add_parser('benchmark', help='推理延迟基准')
    parser.add_argument('--variants', nargs='+', choices=[v.value for v in Variant],
                        default=[v.value for v in Variant])
    parser.add_argument('--repetitions', type=int, help=f'计时次数（>= {MIN_REPETITIONS}）')
    parser.add_argument('--warmup', type=int, default=3, help='不计时的预热次数')
    parser.add_argument('--frames', type=int, default=938, help='输入帧数')
    parser.add_argument('--width-scale', type=float)
    parser.add_argument('--gru-hidden', type=int)
    parser.add_argument('--dtype', choices=['float64', 'float32'], default='float32')
    parser.add_argument('--out', required=True, help='输出目录')
    add_common_arguments(parser)
    parser.set_defaults(handler=cmd_benchmark)


def time_inference(model, x, repetitions, warmup=3):
    """
    重复推理计时

    返回:
        每次耗时（秒）的ndarray
    """
    for _ in range(warmup):
        model.forward(x, training=False)
    timings = np.empty(repetitions)
    for i in range(repetitions):
        start = time.perf_counter()
        model.forward(x, training=False)
        timings[i] = time.perf_counter() - start
    return timings


def benchmark_latency(specs, repetitions=MIN_REPETITIONS, warmup=3, n_frames=938, dtype='float32', seed=0,
                      show_progress=False):
    """
    参数:
        specs: ModelSpec列表
        repetitions: 每个模型的计时次数
        warmup: 预热次数
        n_frames: 输入帧数
        dtype: 推理精度
        seed: 输入随机数种子

    返回:
        每个模型一行的字典列表（median_s、q1_s、q3_s、iqr_s、ratio、params）
    """
    if repetitions < MIN_REPETITIONS:
        raise UsageError(f"repetitions must be >= {MIN_REPETITIONS}, got {repetitions}")

    rows = []
    for spec in tqdm(specs, desc='benchmark', disable=not show_progress):
        model = build_model(spec).astype(dtype)
        x = np.random.default_rng(seed).standard_normal((1, spec.n_features, n_frames)).astype(dtype)
        timings = time_inference(model, x, repetitions, warmup)
        q1, median, q3 = np.percentile(timings, [25, 50, 75])
        rows.append({
            'variant': spec.variant.value,
            'params': count_params(model)['total'],
            'median_s': float(median),
            'q1_s': float(q1),
            'q3_s': float(q3),
            'iqr_s': float(q3 - q1),
            'repetitions': repetitions,
        })
        logger.info(f"{spec.variant.value}: 中位数 {median * 1000:.2f} ms, IQR {(q3 - q1) * 1000:.2f} ms")

    baseline = next((row['median_s'] for row in rows if row['variant'] == Variant.BASELINE.value), None)
    for row in rows:
        row['ratio'] = row['median_s'] / baseline if baseline else None
    return rows


def format_benchmark(rows):
    lines = [f"{'variant':<12}{'params':>12}{'median (ms)':>14}{'IQR (ms)':>12}{'ratio':>9}"]
    for row in rows:
        ratio = f"{row['ratio']:.2f}x" if row['ratio'] is not None else 'n/a'
        lines.append(f"{row['variant']:<12}{row['params']:>12,}{row['median_s'] * 1000:>14.2f}"
                     f"{row['iqr_s'] * 1000:>12.2f}{ratio:>9}")
    return '\n'.join(lines)


def cmd_benchmark(args, config):
    """
    写出 benchmark.csv 和 benchmark.txt

    返回:
        退出码
    """
    settings = load_settings(config, args.config, args.seed)
    out_dir = ensure_dir(args.out)
    repetitions = args.repetitions or config.BENCHMARK_REPETITIONS
    variants = list(dict.fromkeys([Variant.BASELINE.value] + args.variants))
    specs = [settings.model_spec(variant=v, width_scale=args.width_scale, gru_hidden=args.gru_hidden)
             for v in variants]

    rows = benchmark_latency(specs, repetitions, args.warmup, args.frames, args.dtype, settings.seed)

    with open(os.path.join(out_dir, 'benchmark.csv'), 'w', encoding='utf-8', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=['variant', 'params', 'median_s', 'q1_s', 'q3_s', 'iqr_s',
                                               'ratio', 'repetitions'])
        writer.writeheader()
        writer.writerows(rows)
    text = format_benchmark(rows)
    with open(os.path.join(out_dir, 'benchmark.txt'), 'w', encoding='utf-8') as f:
        f.write(text + '\n')
    return success_response({'rows': rows, 'table': text})
