"""
train 命令
n折交叉验证训练，每折写出检查点和训练历史
"""

import os

import numpy as np

from casdetect.api.common import add_common_arguments, ensure_dir, load_settings
from casdetect.architectures import Variant
from casdetect.models import Split
from casdetect.nn.checkpoint import save_checkpoint
from casdetect.signal_io import load_dataset
from casdetect.training import cross_validate, write_history_csv
from casdetect.utils.logger import get_logger, LogContext
from casdetect.utils.response import success_response, write_json_artifact

logger = get_logger('api.train')


def register(subparsers):
    parser = subparsers.add_parser('train', help='交叉验证训练')
    parser.add_argument('--manifest', required=True, help='训练集清单')
    parser.add_argument('--variant', choices=[v.value for v in Variant], help='模型结构')
    parser.add_argument('--out', required=True, help='输出目录')
    parser.add_argument('--folds', type=int, help='折数')
    parser.add_argument('--max-epochs', type=int, help='最大epoch数')
    parser.add_argument('--batch-size', type=int)
    parser.add_argument('--width-scale', type=float, help='卷积核数缩放（小规模试验用）')
    parser.add_argument('--gru-hidden', type=int)
    parser.add_argument('--jobs', type=int, default=1, help='并行训练的折数')
    parser.add_argument('--resample', action='store_true', help='采样率不符时线性插值重采样')
    parser.add_argument('--progress', action='store_true', help='显示进度条')
    add_common_arguments(parser)
    parser.set_defaults(handler=cmd_train)


def _mean_metrics(results):
    names = sorted({name for result in results for name in result.val_metrics})
    means = {}
    for name in names:
        values = [r.val_metrics.get(name) for r in results if r.val_metrics.get(name) is not None]
        means[name] = float(np.mean(values)) if values else None
    return means


def cmd_train(args, config):
    """
    训练并写出 fold_<i>/model.ckpt、fold_<i>/history.csv、train_summary.json

    返回:
        退出码
    """
    settings = load_settings(config, args.config, args.seed)
    train_config = settings.train
    train_config.n_folds = args.folds or train_config.n_folds
    train_config.max_epochs = args.max_epochs or train_config.max_epochs
    train_config.batch_size = args.batch_size or train_config.batch_size
    train_config.show_progress = args.progress
    train_config.validate()
    spec = settings.model_spec(variant=args.variant, width_scale=args.width_scale, gru_hidden=args.gru_hidden)
    out_dir = ensure_dir(args.out)

    dataset = load_dataset(args.manifest, Split.TRAIN, settings.feature.sample_rate, args.resample,
                           config.EXPECTED_DURATION_S)

    with LogContext('train', 'api.train', variant=spec.variant.value, folds=train_config.n_folds,
                    seed=settings.seed):
        results = cross_validate(spec, dataset, train_config, settings.feature, jobs=args.jobs)

    folds = []
    for result in results:
        fold_dir = ensure_dir(os.path.join(out_dir, f"fold_{result.fold}"))
        checkpoint = os.path.join(fold_dir, 'model.ckpt')
        save_checkpoint(checkpoint, result.model, extra={'fold': result.fold, 'threshold': result.threshold,
                                                         'root_seed': settings.seed})
        write_history_csv(os.path.join(fold_dir, 'history.csv'), result.history)
        folds.append({**result.summary(), 'checkpoint': checkpoint})

    summary = {
        'seed': settings.seed,
        'model_spec': spec.to_dict(),
        'train_config': {k: v for k, v in vars(train_config).items() if k != 'show_progress'},
        'folds': folds,
        'mean_val_metrics': _mean_metrics(results),
    }
    write_json_artifact(os.path.join(out_dir, 'train_summary.json'), summary)
    return success_response(summary)
