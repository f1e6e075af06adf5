"""
命令公共部分
运行配置文件解析、参数合并、输出目录
"""

import os
from dataclasses import dataclass, fields, replace
from typing import Optional

from config.config import load_run_config
from casdetect.architectures import ModelSpec
from casdetect.features import FeatureConfig
from casdetect.postprocess import MergeConfig
from casdetect.training import TrainConfig
from casdetect.utils.exceptions import UsageError

_TRAIN_KEYS = {'lr0', 'decay_factor', 'plateau_patience', 'early_stop_patience', 'n_folds', 'batch_size',
               'max_epochs', 'seed'}
_MODEL_KEYS = {'variant', 'conv_kernels', 'gru_hidden', 'dropout_rate', 'width_scale', 'seed',
               'spec_rows', 'aux_rows'}
_MERGE_KEYS = {'t', 'p', 'min_duration', 'merge_gap_s', 'merge_peak_hz', 'min_event_duration_s'}
_FEATURE_KEYS = {f.name for f in fields(FeatureConfig)}
_OTHER_KEYS = {'threshold'}


@dataclass
class RunSettings:
    """一次命令运行的全部参数"""

    feature: FeatureConfig
    train: TrainConfig
    merge: MergeConfig
    model_mapping: dict
    seed: int
    threshold: Optional[float] = None

    def model_spec(self, **overrides):
        return ModelSpec.from_mapping(self.model_mapping, **overrides)


def _feature_from_mapping(base, mapping):
    values = {}
    for key in _FEATURE_KEYS & set(mapping):
        values[key] = type(getattr(base, key))(mapping[key])
    return replace(base, **values)


def load_settings(config, config_path=None, seed=None):
    """
    合并 Config 默认值、--config 文件和命令行的种子

    参数:
        config: 配置类
        config_path: KEY=VALUE 配置文件路径
        seed: 命令行 --seed，优先级最高

    返回:
        RunSettings
    """
    mapping = {}
    if config_path:
        try:
            mapping = load_run_config(config_path)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {config_path}", field='config')
        unknown = sorted(set(mapping) - _TRAIN_KEYS - _MODEL_KEYS - _MERGE_KEYS - _FEATURE_KEYS - _OTHER_KEYS)
        if unknown:
            raise UsageError(f"unknown keys in {config_path}: {', '.join(unknown)}", keys=unknown)

    try:
        root_seed = int(seed if seed is not None else mapping.get('seed', config.SEED))
        feature = _feature_from_mapping(FeatureConfig.from_config(config), mapping)
        train = TrainConfig.from_mapping(mapping, base=TrainConfig.from_config(config), seed=root_seed)
        merge = MergeConfig.from_mapping(mapping, base=MergeConfig.from_config(config))
        threshold = float(mapping['threshold']) if 'threshold' in mapping else None
    except ValueError as e:
        raise UsageError(f"invalid value in run config: {e}")

    model_mapping = {'gru_hidden': config.GRU_HIDDEN, 'dropout_rate': config.DROPOUT_RATE,
                     'width_scale': config.WIDTH_SCALE, 'spec_rows': feature.n_fft // 2 + 1,
                     'aux_rows': 3 * feature.n_mfcc + 4}
    model_mapping.update({key: mapping[key] for key in _MODEL_KEYS & set(mapping)})
    model_mapping['seed'] = root_seed
    return RunSettings(feature=feature, train=train, merge=merge, model_mapping=model_mapping,
                       seed=root_seed, threshold=threshold)


def add_common_arguments(parser):
    parser.add_argument('--config', help='KEY=VALUE 运行配置文件')
    parser.add_argument('--seed', type=int, help='根随机种子（覆盖配置）')


def ensure_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise UsageError(f"output directory {path} is not writable: {e}", field='out')
    if not os.access(path, os.W_OK):
        raise UsageError(f"output directory {path} is not writable", field='out')
    return path
