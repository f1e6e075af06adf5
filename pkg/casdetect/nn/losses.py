"""
损失函数
"""

import numpy as np

from casdetect.utils.exceptions import ShapeError, NumericError

CLAMP = 1e-7


def bce_loss(probabilities, targets):
    """
    逐帧二元交叉熵，对所有帧和batch取平均

    参数:
        probabilities: (0,1)内的概率
        targets: {0,1}目标

    返回:
        (loss, 对probabilities的梯度)
    """
    p = np.asarray(probabilities)
    y = np.asarray(targets, dtype=p.dtype)
    if p.shape != y.shape:
        raise ShapeError("bce_loss: probabilities/targets mismatch", expected=y.shape, actual=p.shape)
    if not np.all(np.isfinite(p)) or p.min(initial=0.5) < 0 or p.max(initial=0.5) > 1:
        raise NumericError("bce_loss: probability outside (0,1) after clamping", field='probabilities')

    pc = np.clip(p, CLAMP, 1.0 - CLAMP)
    n = p.size
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))
    grad = (pc - y) / (pc * (1.0 - pc)) / n
    return float(loss), grad
