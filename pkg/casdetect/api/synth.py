"""
synth 命令
生成合成语料：wav/、labels/ 和清单
"""

from casdetect.api.common import add_common_arguments, ensure_dir, load_settings
from casdetect.models import Split
from casdetect.signal_io import dataset_statistics
from casdetect.synth import SynthMix, synth_corpus, write_corpus
from casdetect.utils.logger import get_logger, LogContext
from casdetect.utils.response import success_response, write_json_artifact

logger = get_logger('api.synth')


def register(subparsers):
    parser = subparsers.add_parser('synth', help='生成合成肺音语料')
    parser.add_argument('--out', required=True, help='语料输出目录')
    parser.add_argument('--n', type=int, default=16, help='录音条数')
    parser.add_argument('--split', choices=[s.value for s in Split], default=Split.TRAIN.value)
    parser.add_argument('--no-events', action='store_true', help='只生成背景，不含CAS')
    parser.add_argument('--prefix', default='synth', help='录音id前缀')
    add_common_arguments(parser)
    parser.set_defaults(handler=cmd_synth)


def cmd_synth(args, config):
    """
    生成语料并写出统计

    返回:
        退出码
    """
    settings = load_settings(config, args.config, args.seed)
    out_dir = ensure_dir(args.out)
    mix = SynthMix.no_events(sample_rate=settings.feature.sample_rate) if args.no_events \
        else SynthMix(sample_rate=settings.feature.sample_rate)

    with LogContext('synth', 'api.synth', n=args.n, seed=settings.seed):
        dataset = synth_corpus(args.n, mix, seed=settings.seed, split=args.split, prefix=args.prefix)
        manifest = write_corpus(dataset, out_dir)

    statistics = dataset_statistics(dataset)
    write_json_artifact(f"{out_dir}/statistics.json", {'seed': settings.seed, **statistics})
    return success_response({'manifest': manifest, 'seed': settings.seed, 'statistics': statistics})
