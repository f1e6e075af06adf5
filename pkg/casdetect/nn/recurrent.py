"""
双向GRU
门顺序 [z, r, n]，输入侧和循环侧各一组偏置:
    z = σ(x Wz + bz_in + h Uz + bz_rec)
    r = σ(x Wr + br_in + h Ur + br_rec)
    n = tanh(x Wn + bn_in + r ⊙ (h Un + bn_rec))
    h' = z ⊙ h + (1 - z) ⊙ n
"""

import numpy as np
from scipy.special import expit

from casdetect.utils.exceptions import ShapeError
from .layers import Layer


def _gru_forward(x, kernel, recurrent_kernel, bias):
    b, t_len, _ = x.shape
    hidden = recurrent_kernel.shape[0]
    xw = x @ kernel + bias[0]

    h = np.zeros((b, hidden), dtype=xw.dtype)
    outputs = np.zeros((b, t_len, hidden), dtype=xw.dtype)
    steps = []
    for t in range(t_len):
        hu = h @ recurrent_kernel + bias[1]
        z = expit(xw[:, t, :hidden] + hu[:, :hidden])
        r = expit(xw[:, t, hidden:2 * hidden] + hu[:, hidden:2 * hidden])
        hu_n = hu[:, 2 * hidden:]
        n = np.tanh(xw[:, t, 2 * hidden:] + r * hu_n)
        steps.append((h, z, r, n, hu_n))
        h = z * h + (1.0 - z) * n
        outputs[:, t] = h
    return outputs, (x, steps)


def _gru_backward(cache, dout, kernel, recurrent_kernel):
    x, steps = cache
    b, t_len, d = x.shape
    hidden = recurrent_kernel.shape[0]

    dxw = np.zeros((b, t_len, 3 * hidden), dtype=dout.dtype)
    drecurrent = np.zeros_like(recurrent_kernel)
    dbias_rec = np.zeros(3 * hidden, dtype=dout.dtype)
    dh_next = np.zeros((b, hidden), dtype=dout.dtype)

    for t in reversed(range(t_len)):
        h_prev, z, r, n, hu_n = steps[t]
        dh = dout[:, t] + dh_next
        dz = dh * (h_prev - n)
        dn = dh * (1.0 - z)
        da_n = dn * (1.0 - n ** 2)
        da_z = dz * z * (1.0 - z)
        da_r = da_n * hu_n * r * (1.0 - r)

        dxw[:, t] = np.concatenate([da_z, da_r, da_n], axis=1)
        dhu = np.concatenate([da_z, da_r, da_n * r], axis=1)
        drecurrent += h_prev.T @ dhu
        dbias_rec += dhu.sum(axis=0)
        dh_next = dh * z + dhu @ recurrent_kernel.T

    dkernel = x.reshape(-1, d).T @ dxw.reshape(-1, 3 * hidden)
    dbias = np.stack([dxw.sum(axis=(0, 1)), dbias_rec])
    dx = dxw @ kernel.T
    return dx, dkernel, drecurrent, dbias


class BiGRU(Layer):
    """沿时间轴的双向GRU，输出宽度 2H（前向在前，后向在后）"""

    DIRECTIONS = ('forward', 'backward')

    def __init__(self, name, input_dim, units, rng=None):
        super().__init__(name)
        if min(input_dim, units) < 1:
            raise ValueError(f"{name}: extents must be positive")
        self.input_dim = input_dim
        self.units = units
        rng = rng if rng is not None else np.random.default_rng(0)
        limit = 1.0 / np.sqrt(units)
        for direction in self.DIRECTIONS:
            self.weights[f'{direction}/kernel'] = rng.uniform(-limit, limit, (input_dim, 3 * units))
            self.weights[f'{direction}/recurrent_kernel'] = rng.uniform(-limit, limit, (units, 3 * units))
            self.weights[f'{direction}/bias'] = np.zeros((2, 3 * units))

    def output_shape(self, input_shape):
        t, _ = input_shape
        return (t, 2 * self.units)

    def _direction_weights(self, direction):
        return (self.weights[f'{direction}/kernel'],
                self.weights[f'{direction}/recurrent_kernel'],
                self.weights[f'{direction}/bias'])

    def forward(self, x, training=False, rng=None):
        self._check_ndim(x, 3)
        if x.shape[2] != self.input_dim:
            raise ShapeError(f"{self.name}: feature width mismatch", expected=f"(B, T, {self.input_dim})", actual=x.shape)
        out_f, cache_f = _gru_forward(x, *self._direction_weights('forward'))
        out_b, cache_b = _gru_forward(x[:, ::-1], *self._direction_weights('backward'))
        return np.concatenate([out_f, out_b[:, ::-1]], axis=2), (cache_f, cache_b)

    def backward(self, cache, dy):
        cache_f, cache_b = cache
        h = self.units
        grads = {}
        dx = None
        for direction, dir_cache, dout in (('forward', cache_f, dy[:, :, :h]),
                                           ('backward', cache_b, dy[:, ::-1, h:])):
            kernel, recurrent_kernel, _ = self._direction_weights(direction)
            ddx, dkernel, drec, dbias = _gru_backward(dir_cache, dout, kernel, recurrent_kernel)
            if direction == 'backward':
                ddx = ddx[:, ::-1]
            dx = ddx if dx is None else dx + ddx
            grads[f'{direction}/kernel'] = dkernel
            grads[f'{direction}/recurrent_kernel'] = drec
            grads[f'{direction}/bias'] = dbias
        return dx, grads
