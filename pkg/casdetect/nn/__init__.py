"""
张量计算核心
只实现模型需要的层，前向/反向、损失和Adam
"""

from .layers import (Mode, Layer, Conv2D, BatchNorm, ReLU, Sigmoid, MaxPool2D, Dropout,
                     FlattenPerTimestep, Dense, ResidualBlock, layer_forward, layer_backward)
from .recurrent import BiGRU
from .losses import bce_loss
from .optim import AdamState, adam_step

__all__ = [
    'Mode',
    'Layer',
    'Conv2D',
    'BatchNorm',
    'ReLU',
    'Sigmoid',
    'MaxPool2D',
    'Dropout',
    'FlattenPerTimestep',
    'Dense',
    'ResidualBlock',
    'BiGRU',
    'layer_forward',
    'layer_backward',
    'bce_loss',
    'AdamState',
    'adam_step'
]
