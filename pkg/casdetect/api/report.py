"""
report 命令
结构报告、多模型指标对比、ROC和幅度谱SVG
"""

import json
import os

from casdetect.api.common import add_common_arguments, ensure_dir, load_settings
from casdetect.api.predict import read_probabilities
from casdetect.architectures import Variant, architecture_report, build_model, format_architecture_report
from casdetect.evaluation import compare_models, format_comparison, read_roc_csv
from casdetect.features import highpass_80, stft
from casdetect.nn.checkpoint import load_checkpoint
from casdetect.plots import plot_roc_svg, plot_spectrogram_events_svg
from casdetect.postprocess import read_events
from casdetect.signal_io import read_wav, read_labels, conform_sample_rate
from casdetect.utils.exceptions import DataError, UsageError
from casdetect.utils.logger import get_logger
from casdetect.utils.response import success_response, write_json_artifact

logger = get_logger('api.report')


def register(subparsers):
    parser = subparsers.add_parser('report', help='生成静态报告')
    parser.add_argument('--out', required=True, help='输出目录')
    parser.add_argument('--variant', nargs='*', choices=[v.value for v in Variant], default=[],
                        help='输出这些结构的逐层报告')
    parser.add_argument('--checkpoint', help='输出检查点模型的逐层报告')
    parser.add_argument('--frames', type=int, default=938)
    parser.add_argument('--metrics', nargs='*', default=[], metavar='NAME=PATH',
                        help='evaluate写出的metrics.json，同目录下的roc.csv会被画进ROC图')
    parser.add_argument('--wav', help='画幅度谱的录音')
    parser.add_argument('--labels', help='该录音的标签文件')
    parser.add_argument('--events', help='该录音的事件文件')
    parser.add_argument('--probabilities', help='该录音的概率文件')
    parser.add_argument('--threshold', type=float)
    add_common_arguments(parser)
    parser.set_defaults(handler=cmd_report)


def _parse_named_paths(items):
    named = {}
    for item in items:
        name, sep, path = item.partition('=')
        if not sep or not name or not path:
            raise UsageError(f"expected NAME=PATH, got {item!r}", field='metrics')
        named[name] = path
    return named


def _architecture_section(args, settings, out_dir):
    models = [(v, build_model(settings.model_spec(variant=v))) for v in args.variant]
    if args.checkpoint:
        models.append(('checkpoint', load_checkpoint(args.checkpoint)[0]))

    reports = []
    for name, model in models:
        report = architecture_report(model, args.frames)
        write_json_artifact(os.path.join(out_dir, f"architecture_{name}.json"), report)
        with open(os.path.join(out_dir, f"architecture_{name}.txt"), 'w', encoding='utf-8') as f:
            f.write(format_architecture_report(report) + '\n')
        reports.append({'variant': report['variant'], 'total_params': report['total_params']})
    return reports


def _comparison_section(args, out_dir):
    paths = _parse_named_paths(args.metrics)
    reports, curves = {}, {}
    for name, path in paths.items():
        if not os.path.exists(path):
            raise DataError(f"missing file: {path}", field='metrics')
        with open(path, 'r', encoding='utf-8') as f:
            reports[name] = json.load(f)
        roc_path = os.path.join(os.path.dirname(path), 'roc.csv')
        if os.path.exists(roc_path):
            curves[name] = read_roc_csv(roc_path)

    comparison = compare_models(reports)
    write_json_artifact(os.path.join(out_dir, 'comparison.json'), comparison)
    with open(os.path.join(out_dir, 'comparison.txt'), 'w', encoding='utf-8') as f:
        f.write(format_comparison(comparison) + '\n')
    if curves:
        plot_roc_svg(curves, os.path.join(out_dir, 'roc.svg'))
    return comparison['wins']


def _spectrogram_section(args, settings, out_dir):
    feature = settings.feature
    recording = conform_sample_rate(read_wav(args.wav), feature.sample_rate)
    filtered = highpass_80(recording, feature.highpass_cutoff_hz, feature.highpass_order)
    spectrogram = stft(filtered, recording.sample_rate, feature.n_fft, feature.hop_length)

    probabilities = read_probabilities(args.probabilities) if args.probabilities else None
    output_grid = spectrogram.grid.pooled(2) if probabilities is not None else None
    path = os.path.join(out_dir, f"{recording.id}_spectrogram.svg")
    plot_spectrogram_events_svg(
        spectrogram, path,
        labels=read_labels(args.labels) if args.labels else (),
        events=read_events(args.events) if args.events else (),
        probabilities=probabilities, output_grid=output_grid, threshold=args.threshold, title=recording.id,
    )
    return path


def cmd_report(args, config):
    """
    返回:
        退出码
    """
    if not (args.variant or args.checkpoint or args.metrics or args.wav):
        raise UsageError("nothing to report: give --variant, --checkpoint, --metrics or --wav")
    settings = load_settings(config, args.config, args.seed)
    out_dir = ensure_dir(args.out)

    data = {}
    if args.variant or args.checkpoint:
        data['architectures'] = _architecture_section(args, settings, out_dir)
    if args.metrics:
        data['wins'] = _comparison_section(args, out_dir)
    if args.wav:
        data['spectrogram'] = _spectrogram_section(args, settings, out_dir)
    return success_response(data)
