"""
层定义
每个层的前向返回 (输出, 缓存)，反向接收缓存和输出梯度，返回 (输入梯度, 参数梯度)
卷积阶段布局为 (batch, channels, time, feature)，循环阶段为 (batch, time, width)
"""

import enum

import numpy as np
from scipy.special import expit

from casdetect.utils.exceptions import ShapeError, StateError


class Mode(str, enum.Enum):
    TRAIN = 'train'
    INFER = 'infer'


class Layer:
    """
    层基类
    weights: 可训练参数 {本地名: ndarray}
    state: 不可训练的缓冲区（BatchNorm滑动统计量）
    """

    def __init__(self, name):
        self.name = name
        self.weights = {}
        self.state = {}

    def children(self):
        return []

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def output_shape(self, input_shape):
        """不含batch维的输出形状"""
        return tuple(input_shape)

    def param_count(self):
        own = sum(int(w.size) for w in self.weights.values())
        return own + sum(child.param_count() for child in self.children())

    def named_leaves(self, prefix=''):
        """递归列出 (完整前缀, 叶子层)"""
        path = f"{prefix}{self.name}"
        yield path, self
        for child in self.children():
            yield from child.named_leaves(path + '/')

    def _check_ndim(self, x, ndim):
        if x.ndim != ndim:
            raise ShapeError(f"{self.name}: input rank mismatch", expected=f"rank {ndim}", actual=x.shape)

    def __repr__(self):
        return f"<{self.__class__.__name__} {self.name}>"


def layer_forward(layer, x, mode=Mode.INFER, rng=None):
    """
    单层前向

    参数:
        layer: Layer
        x: 输入ndarray
        mode: train 或 infer
        rng: Dropout使用的numpy Generator

    返回:
        (输出, 缓存)
    """
    return layer.forward(x, training=Mode(mode) is Mode.TRAIN, rng=rng)


def layer_backward(layer, cache, dy):
    """
    单层反向

    返回:
        (输入梯度, {本地参数名: 梯度})
    """
    if cache is None:
        raise StateError(f"{layer.name}: missing forward cache, run forward in train mode first")
    return layer.backward(cache, dy)


def _uniform(rng, limit, shape):
    return rng.uniform(-limit, limit, size=shape)


def same_padding(kernel):
    # 总填充 kernel-1，偶数核多出的一格放在后面
    before = (kernel - 1) // 2
    return before, kernel - 1 - before


class Conv2D(Layer):
    """same填充、步长1的二维互相关"""

    def __init__(self, name, in_channels, out_channels, kernel_h, kernel_w=None, rng=None):
        super().__init__(name)
        kernel_w = kernel_w or kernel_h
        if min(in_channels, out_channels, kernel_h, kernel_w) < 1:
            raise ValueError(f"{name}: extents must be positive")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_h = kernel_h
        self.kernel_w = kernel_w
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_h * kernel_w
        self.weights['kernel'] = _uniform(rng, np.sqrt(6.0 / fan_in), (out_channels, in_channels, kernel_h, kernel_w))
        self.weights['bias'] = np.zeros(out_channels)

    def output_shape(self, input_shape):
        _, h, w = input_shape
        return (self.out_channels, h, w)

    def forward(self, x, training=False, rng=None):
        self._check_ndim(x, 4)
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.name}: channel mismatch", expected=f"(B, {self.in_channels}, H, W)", actual=x.shape)
        kernel, bias = self.weights['kernel'], self.weights['bias']
        b, _, h, w = x.shape
        top, bottom = same_padding(self.kernel_h)
        left, right = same_padding(self.kernel_w)
        xp = np.pad(x, ((0, 0), (0, 0), (top, bottom), (left, right)))

        out = np.zeros((b, self.out_channels, h, w), dtype=np.result_type(x, kernel))
        for i in range(self.kernel_h):
            for j in range(self.kernel_w):
                out += np.einsum('bchw,oc->bohw', xp[:, :, i:i + h, j:j + w], kernel[:, :, i, j], optimize=True)
        out += bias[None, :, None, None]
        return out, (xp, x.shape)

    def backward(self, cache, dy):
        xp, x_shape = cache
        kernel = self.weights['kernel']
        _, _, h, w = x_shape
        top, _ = same_padding(self.kernel_h)
        left, _ = same_padding(self.kernel_w)

        dkernel = np.zeros_like(kernel)
        dxp = np.zeros_like(xp)
        for i in range(self.kernel_h):
            for j in range(self.kernel_w):
                window = xp[:, :, i:i + h, j:j + w]
                dkernel[:, :, i, j] = np.einsum('bohw,bchw->oc', dy, window, optimize=True)
                dxp[:, :, i:i + h, j:j + w] += np.einsum('bohw,oc->bchw', dy, kernel[:, :, i, j], optimize=True)
        dx = dxp[:, :, top:top + h, left:left + w]
        return dx, {'kernel': dkernel, 'bias': dy.sum(axis=(0, 2, 3))}


class BatchNorm(Layer):
    """按通道的批归一化，训练用批统计量，推理用滑动统计量"""

    def __init__(self, name, channels, epsilon=1e-5, momentum=0.99):
        super().__init__(name)
        self.channels = channels
        self.epsilon = epsilon
        self.momentum = momentum
        self.weights['gamma'] = np.ones(channels)
        self.weights['beta'] = np.zeros(channels)
        self.state['moving_mean'] = np.zeros(channels)
        self.state['moving_variance'] = np.ones(channels)

    def forward(self, x, training=False, rng=None):
        self._check_ndim(x, 4)
        if x.shape[1] != self.channels:
            raise ShapeError(f"{self.name}: channel mismatch", expected=f"(B, {self.channels}, H, W)", actual=x.shape)
        gamma = self.weights['gamma'][None, :, None, None]
        beta = self.weights['beta'][None, :, None, None]

        if training:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.state['moving_mean'] = m * self.state['moving_mean'] + (1 - m) * mean
            self.state['moving_variance'] = m * self.state['moving_variance'] + (1 - m) * var
        else:
            mean = self.state['moving_mean']
            var = self.state['moving_variance']

        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        return gamma * x_hat + beta, (x_hat, inv_std, training)

    def backward(self, cache, dy):
        x_hat, inv_std, training = cache
        gamma = self.weights['gamma'][None, :, None, None]
        grads = {'gamma': (dy * x_hat).sum(axis=(0, 2, 3)), 'beta': dy.sum(axis=(0, 2, 3))}
        dx_hat = dy * gamma
        inv = inv_std[None, :, None, None]
        if not training:
            return dx_hat * inv, grads

        n = dy.shape[0] * dy.shape[2] * dy.shape[3]
        sum_dx_hat = dx_hat.sum(axis=(0, 2, 3), keepdims=True)
        sum_dx_hat_x = (dx_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
        dx = inv / n * (n * dx_hat - sum_dx_hat - x_hat * sum_dx_hat_x)
        return dx, grads


class ReLU(Layer):

    def forward(self, x, training=False, rng=None):
        mask = x > 0
        return x * mask, mask

    def backward(self, cache, dy):
        return dy * cache, {}


class Sigmoid(Layer):

    def forward(self, x, training=False, rng=None):
        y = expit(x)
        return y, y

    def backward(self, cache, dy):
        return dy * cache * (1.0 - cache), {}


class MaxPool2D(Layer):
    """2x2最大池化，步长2，奇数边向下取整"""

    def output_shape(self, input_shape):
        c, h, w = input_shape
        return (c, h // 2, w // 2)

    def forward(self, x, training=False, rng=None):
        self._check_ndim(x, 4)
        b, c, h, w = x.shape
        if h < 2 or w < 2:
            raise ShapeError(f"{self.name}: plane too small to pool", expected="H >= 2 and W >= 2", actual=x.shape)
        ho, wo = h // 2, w // 2
        blocks = x[:, :, :2 * ho, :2 * wo].reshape(b, c, ho, 2, wo, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(b, c, ho, wo, 4)
        winner = blocks.argmax(axis=-1)
        y = np.take_along_axis(blocks, winner[..., None], axis=-1)[..., 0]
        return y, (winner, x.shape)

    def backward(self, cache, dy):
        winner, x_shape = cache
        b, c, h, w = x_shape
        ho, wo = h // 2, w // 2
        routed = np.zeros((b, c, ho, wo, 4), dtype=dy.dtype)
        np.put_along_axis(routed, winner[..., None], dy[..., None], axis=-1)
        routed = routed.reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * ho, 2 * wo)
        dx = np.zeros(x_shape, dtype=dy.dtype)
        dx[:, :, :2 * ho, :2 * wo] = routed
        return dx, {}


class Dropout(Layer):
    """反向缩放的Dropout，推理时为恒等映射"""

    def __init__(self, name, rate):
        super().__init__(name)
        if not 0 <= rate < 1:
            raise ValueError(f"{name}: dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0:
            return x, None
        if rng is None:
            raise StateError(f"{self.name}: train-mode dropout needs a seeded rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * mask, mask

    def backward(self, cache, dy):
        if cache is None:
            return dy, {}
        return dy * cache, {}


class FlattenPerTimestep(Layer):
    """(B, C, T, W) -> (B, T, C*W)"""

    def output_shape(self, input_shape):
        c, t, w = input_shape
        return (t, c * w)

    def forward(self, x, training=False, rng=None):
        self._check_ndim(x, 4)
        b, c, t, w = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, c * w), x.shape

    def backward(self, cache, dy):
        b, c, t, w = cache
        return dy.reshape(b, t, c, w).transpose(0, 2, 1, 3), {}


class Dense(Layer):
    """作用在最后一维上的全连接层"""

    def __init__(self, name, in_features, units, rng=None):
        super().__init__(name)
        self.in_features = in_features
        self.units = units
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights['kernel'] = _uniform(rng, np.sqrt(6.0 / in_features), (in_features, units))
        self.weights['bias'] = np.zeros(units)

    def output_shape(self, input_shape):
        return tuple(input_shape[:-1]) + (self.units,)

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.in_features:
            raise ShapeError(f"{self.name}: feature width mismatch", expected=f"(..., {self.in_features})", actual=x.shape)
        return x @ self.weights['kernel'] + self.weights['bias'], x

    def backward(self, cache, dy):
        x = cache
        flat_x = x.reshape(-1, self.in_features)
        flat_dy = dy.reshape(-1, self.units)
        grads = {'kernel': flat_x.T @ flat_dy, 'bias': flat_dy.sum(axis=0)}
        return dy @ self.weights['kernel'].T, grads


class ResidualBlock(Layer):
    """
    残差块: Conv3x3 -> BN -> ReLU -> Conv3x3 -> (+shortcut) -> ReLU
    通道数不同时shortcut用1x1卷积投影
    """

    def __init__(self, name, in_channels, out_channels, rng=None):
        super().__init__(name)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.conv1 = Conv2D('conv1', in_channels, out_channels, 3, rng=rng)
        self.bn = BatchNorm('bn', out_channels)
        self.relu1 = ReLU('relu1')
        self.conv2 = Conv2D('conv2', out_channels, out_channels, 3, rng=rng)
        self.shortcut = Conv2D('shortcut', in_channels, out_channels, 1, rng=rng) if in_channels != out_channels else None
        self.relu2 = ReLU('relu2')

    def children(self):
        layers = [self.conv1, self.bn, self.relu1, self.conv2]
        if self.shortcut is not None:
            layers.append(self.shortcut)
        return layers + [self.relu2]

    def output_shape(self, input_shape):
        _, h, w = input_shape
        return (self.out_channels, h, w)

    def forward(self, x, training=False, rng=None):
        h, c_conv1 = self.conv1.forward(x, training, rng)
        h, c_bn = self.bn.forward(h, training, rng)
        h, c_relu1 = self.relu1.forward(h, training, rng)
        h, c_conv2 = self.conv2.forward(h, training, rng)
        if self.shortcut is not None:
            skip, c_short = self.shortcut.forward(x, training, rng)
        else:
            skip, c_short = x, None
        y, c_relu2 = self.relu2.forward(h + skip, training, rng)
        return y, (c_conv1, c_bn, c_relu1, c_conv2, c_short, c_relu2)

    def backward(self, cache, dy):
        c_conv1, c_bn, c_relu1, c_conv2, c_short, c_relu2 = cache
        grads = {}
        d_sum, _ = self.relu2.backward(c_relu2, dy)

        if self.shortcut is not None:
            dx_skip, g = self.shortcut.backward(c_short, d_sum)
            grads.update({f"shortcut/{k}": v for k, v in g.items()})
        else:
            dx_skip = d_sum

        dh, g = self.conv2.backward(c_conv2, d_sum)
        grads.update({f"conv2/{k}": v for k, v in g.items()})
        dh, _ = self.relu1.backward(c_relu1, dh)
        dh, g = self.bn.backward(c_bn, dh)
        grads.update({f"bn/{k}": v for k, v in g.items()})
        dx, g = self.conv1.backward(c_conv1, dh)
        grads.update({f"conv1/{k}": v for k, v in g.items()})
        return dx + dx_skip, grads
