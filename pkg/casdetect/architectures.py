"""
模型结构模块
在张量核心上搭建六种CNN-BiGRU变体，统计参数量，并对单条录音做推理

卷积全部same填充，唯一的下采样是一个2x2最大池化，所以六种变体的输出长度都是 k = floor(F/2)
"""

import enum
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from casdetect.models import FrameGrid
from casdetect.nn import (Conv2D, ReLU, MaxPool2D, Dropout, FlattenPerTimestep, ResidualBlock,
                          BiGRU, Dense, Sigmoid)
from casdetect.utils.exceptions import ShapeError, UsageError, DataError
from casdetect.utils.logger import get_logger, log_performance

logger = get_logger('architectures')

POOL_FACTOR = 2

# 已发表的各变体可训练参数量，作为校准目标而不是硬约束
REFERENCE_PARAM_COUNTS = {
    'Baseline': 5240513,
    'RB1': 5210113,
    'RB2': 5284225,
    'CNN96': 7707649,
    'CNN128': 10207553,
    'MultiPath': 5308737,
}


class Variant(str, enum.Enum):
    BASELINE = 'Baseline'
    RB1 = 'RB1'
    RB2 = 'RB2'
    CNN96 = 'CNN96'
    CNN128 = 'CNN128'
    MULTIPATH = 'MultiPath'


DEFAULT_KERNELS = {
    Variant.BASELINE: 64,
    Variant.RB1: 64,
    Variant.RB2: 64,
    Variant.CNN96: 96,
    Variant.CNN128: 128,
    Variant.MULTIPATH: 64,
}


@dataclass
class ModelSpec:
    """模型规格"""

    variant: Variant = Variant.BASELINE
    conv_kernels: Optional[int] = None
    gru_hidden: int = 256
    dropout_rate: float = 0.1
    width_scale: float = 1.0
    seed: int = 0
    spec_rows: int = 129
    aux_rows: int = 64

    def __post_init__(self):
        try:
            self.variant = Variant(self.variant)
        except ValueError:
            raise UsageError(f"unknown variant {self.variant!r}", choices=[v.value for v in Variant])
        if self.conv_kernels is None:
            self.conv_kernels = DEFAULT_KERNELS[self.variant]
        self.conv_kernels = int(self.conv_kernels)
        self.validate()

    def validate(self):
        if self.conv_kernels not in (64, 96, 128):
            raise UsageError(f"conv_kernels must be 64, 96 or 128, got {self.conv_kernels}")
        if self.conv_kernels != DEFAULT_KERNELS[self.variant]:
            raise UsageError(f"inconsistent spec: {self.variant.value} uses {DEFAULT_KERNELS[self.variant]} kernels, "
                             f"got {self.conv_kernels}")
        if self.gru_hidden < 1:
            raise UsageError(f"gru_hidden must be >= 1, got {self.gru_hidden}")
        if not 0 <= self.dropout_rate < 1:
            raise UsageError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if not 0 < self.width_scale <= 1:
            raise UsageError(f"width_scale must be in (0, 1], got {self.width_scale}")

    @property
    def channels(self):
        """缩放后的实际卷积核数"""
        return max(1, int(round(self.conv_kernels * self.width_scale)))

    @property
    def n_features(self):
        return self.spec_rows + self.aux_rows

    def to_dict(self):
        return {
            'variant': self.variant.value,
            'conv_kernels': self.conv_kernels,
            'gru_hidden': self.gru_hidden,
            'dropout_rate': self.dropout_rate,
            'width_scale': self.width_scale,
            'seed': self.seed,
            'spec_rows': self.spec_rows,
            'aux_rows': self.aux_rows,
        }

    @classmethod
    def from_mapping(cls, mapping, **overrides):
        """从配置文件的字符串字典构建"""
        casts = {'variant': str, 'conv_kernels': int, 'gru_hidden': int, 'dropout_rate': float,
                 'width_scale': float, 'seed': int, 'spec_rows': int, 'aux_rows': int}
        values = {key: casts[key](value) for key, value in mapping.items() if key in casts}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_config(cls, config, variant=Variant.BASELINE):
        return cls(variant=variant, gru_hidden=config.GRU_HIDDEN, dropout_rate=config.DROPOUT_RATE,
                   width_scale=config.WIDTH_SCALE, seed=config.SEED,
                   spec_rows=config.N_FFT // 2 + 1, aux_rows=3 * config.N_MFCC + 4)


@dataclass
class ConvPath:
    """一条卷积通路，处理特征矩阵的 [row_start, row_stop) 行"""

    name: str
    row_start: int
    row_stop: int
    layers: List = field(default_factory=list)

    @property
    def rows(self):
        return self.row_stop - self.row_start


class Model:
    """
    层图: 一条或两条卷积通路 -> 逐帧拼接 -> BiGRU -> Dense(1) -> Sigmoid
    """

    def __init__(self, spec, paths, head):
        self.spec = spec
        self.paths = paths
        self.head = head

    # ========== 参数访问 ==========

    def _top_layers(self):
        for path in self.paths:
            for layer in path.layers:
                yield f"{path.name}/", layer
        for layer in self.head:
            yield '', layer

    def _leaves(self):
        for prefix, layer in self._top_layers():
            yield from layer.named_leaves(prefix)

    def named_params(self):
        """{完整参数名: ndarray}，返回的是参数本身，原地修改会生效"""
        return {f"{path}/{key}": value for path, leaf in self._leaves() for key, value in leaf.weights.items()}

    def named_state(self):
        return {f"{path}/{key}": value for path, leaf in self._leaves() for key, value in leaf.state.items()}

    def set_tensor(self, name, value):
        for path, leaf in self._leaves():
            if not name.startswith(path + '/'):
                continue
            key = name[len(path) + 1:]
            if key in leaf.weights or key in leaf.state:
                store = leaf.weights if key in leaf.weights else leaf.state
                if store[key].shape != tuple(value.shape):
                    raise ShapeError(f"tensor {name}", expected=store[key].shape, actual=value.shape)
                store[key] = np.array(value, dtype=store[key].dtype)
                return
        raise DataError(f"unknown tensor {name}", field='name')

    def snapshot(self):
        tensors = dict(self.named_params())
        tensors.update(self.named_state())
        return {name: value.copy() for name, value in tensors.items()}

    def restore(self, snapshot):
        for name, value in snapshot.items():
            self.set_tensor(name, value)

    def astype(self, dtype):
        """转换所有参数和缓冲区的精度（只用于延迟基准）"""
        for _, leaf in self._leaves():
            for store in (leaf.weights, leaf.state):
                for key in store:
                    store[key] = store[key].astype(dtype)
        return self

    def output_length(self, n_frames):
        return n_frames // POOL_FACTOR

    def output_grid(self, grid):
        return grid.pooled(POOL_FACTOR)

    # ========== 前向 / 反向 ==========

    def forward(self, x, training=False, rng=None):
        """
        参数:
            x: (B, spec_rows+aux_rows, F) 归一化特征
            training: 训练模式
            rng: Dropout随机数生成器

        返回:
            (概率 (B, k), 缓存)
        """
        if x.ndim != 3 or x.shape[1] != self.spec.n_features:
            raise ShapeError("model input", expected=f"(B, {self.spec.n_features}, F)", actual=x.shape)
        if x.shape[2] < POOL_FACTOR:
            raise ShapeError("model input has too few frames", expected=f"F >= {POOL_FACTOR}", actual=x.shape)

        path_outputs, path_caches = [], []
        for path in self.paths:
            h = x[:, path.row_start:path.row_stop, :].transpose(0, 2, 1)[:, np.newaxis]
            caches = []
            for layer in path.layers:
                h, cache = layer.forward(h, training, rng)
                caches.append(cache)
            path_outputs.append(h)
            path_caches.append(caches)

        widths = [out.shape[2] for out in path_outputs]
        h = np.concatenate(path_outputs, axis=2)
        head_caches = []
        for layer in self.head:
            h, cache = layer.forward(h, training, rng)
            head_caches.append(cache)
        return h[..., 0], (path_caches, widths, head_caches)

    def backward(self, cache, dprobs):
        """
        参数:
            cache: forward返回的缓存（训练模式）
            dprobs: 损失对概率的梯度 (B, k)

        返回:
            {完整参数名: 梯度}
        """
        path_caches, widths, head_caches = cache
        grads = {}
        dh = dprobs[..., np.newaxis]
        for layer, layer_cache in zip(reversed(self.head), reversed(head_caches)):
            dh, layer_grads = layer.backward(layer_cache, dh)
            grads.update({f"{layer.name}/{k}": v for k, v in layer_grads.items()})

        offsets = np.cumsum([0] + widths)
        for index, (path, caches) in enumerate(zip(self.paths, path_caches)):
            dpath = dh[:, :, offsets[index]:offsets[index + 1]]
            for layer, layer_cache in zip(reversed(path.layers), reversed(caches)):
                dpath, layer_grads = layer.backward(layer_cache, dpath)
                grads.update({f"{path.name}/{layer.name}/{k}": v for k, v in layer_grads.items()})
        return grads

    def __repr__(self):
        return f"<Model {self.spec.variant.value} channels={self.spec.channels} H={self.spec.gru_hidden}>"


def _conv_stack(spec, rng):
    c = spec.channels
    if spec.variant in (Variant.RB1, Variant.RB2):
        blocks = [ResidualBlock('rb1', 1, c, rng=rng)]
        if spec.variant is Variant.RB2:
            blocks.append(ResidualBlock('rb2', c, c, rng=rng))
        features = blocks
    else:
        features = [Conv2D('conv1', 1, c, 6, rng=rng), ReLU('relu1'),
                    Conv2D('conv2', c, c, 4, rng=rng), ReLU('relu2')]
    return features + [MaxPool2D('pool'), Dropout('dropout', spec.dropout_rate), FlattenPerTimestep('flatten')]


def build_model(spec):
    """
    按规格搭建模型

    参数:
        spec: ModelSpec

    返回:
        Model
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_features

    if spec.variant is Variant.MULTIPATH:
        paths = [ConvPath('spec_path', 0, spec.spec_rows, _conv_stack(spec, rng)),
                 ConvPath('aux_path', spec.spec_rows, n, _conv_stack(spec, rng))]
    else:
        paths = [ConvPath('cnn', 0, n, _conv_stack(spec, rng))]

    width = sum(spec.channels * (path.rows // POOL_FACTOR) for path in paths)
    head = [BiGRU('bigru', width, spec.gru_hidden, rng=rng),
            Dense('dense', 2 * spec.gru_hidden, 1, rng=rng),
            Sigmoid('sigmoid')]
    model = Model(spec, paths, head)
    logger.debug(f"搭建模型 {spec.variant.value}: 通路数={len(paths)}, BiGRU输入宽度={width}")
    return model


def count_params(model):
    """
    统计可训练参数

    返回:
        dict: layers {层路径: 参数量}（只含有参数的层）和 total
    """
    per_layer = {}
    for path, leaf in model._leaves():
        own = sum(int(w.size) for w in leaf.weights.values())
        if own:
            per_layer[path] = own
    return {'layers': per_layer, 'total': sum(per_layer.values())}


def architecture_report(model, n_frames=938):
    """
    逐层表格：名称、输出形状（不含batch）、参数量

    返回:
        dict: rows 列表和 total_params、output_length
    """
    rows = []
    flattened = []
    for path in model.paths:
        shape = (1, n_frames, path.rows)
        rows.append({'name': f"{path.name}/input", 'output_shape': list(shape), 'params': 0})
        for layer in path.layers:
            shape = layer.output_shape(shape)
            rows.append({'name': f"{path.name}/{layer.name}", 'output_shape': list(shape),
                         'params': layer.param_count()})
        flattened.append(shape)

    shape = (flattened[0][0], sum(s[1] for s in flattened))
    if len(flattened) > 1:
        rows.append({'name': 'concat', 'output_shape': list(shape), 'params': 0})
    for layer in model.head:
        shape = layer.output_shape(shape)
        rows.append({'name': layer.name, 'output_shape': list(shape), 'params': layer.param_count()})

    return {
        'variant': model.spec.variant.value,
        'rows': rows,
        'total_params': count_params(model)['total'],
        'output_length': model.output_length(n_frames),
    }


def format_architecture_report(report):
    """把architecture_report转成文本表格"""
    lines = [f"Model: {report['variant']}",
             f"{'layer':<28}{'output shape':<22}{'params':>12}",
             '-' * 62]
    for row in report['rows']:
        shape = '(' + ', '.join(str(d) for d in row['output_shape']) + ')'
        lines.append(f"{row['name']:<28}{shape:<22}{row['params']:>12,}")
    lines.append('-' * 62)
    lines.append(f"{'total trainable params':<50}{report['total_params']:>12,}")
    lines.append(f"{'output length k':<50}{report['output_length']:>12}")
    return '\n'.join(lines)


@log_performance('architectures')
def predict(model, features):
    """
    单条录音推理

    参数:
        model: Model
        features: 归一化的FeatureMatrix

    返回:
        (概率向量 (k,), 输出分辨率的FrameGrid)
    """
    if not features.normalized:
        raise DataError("features must be normalized before prediction", field='normalized')
    x = features.stacked()[np.newaxis]
    probabilities, _ = model.forward(x.astype(next(iter(model.named_params().values())).dtype), training=False)
    return probabilities[0], model.output_grid(features.grid)
