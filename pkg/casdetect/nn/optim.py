"""
Adam优化器
"""

from dataclasses import dataclass, field

import numpy as np

from casdetect.utils.exceptions import NumericError, ShapeError


@dataclass
class AdamState:
    """每个参数的一阶/二阶矩，step计数和当前学习率"""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, gradients, state):
    """
    带偏差修正的Adam更新，原地修改params

    参数:
        params: {名称: ndarray}
        gradients: {名称: ndarray}，键与params一致
        state: AdamState

    返回:
        (params, state)
    """
    for name, grad in gradients.items():
        if name not in params:
            raise ShapeError(f"adam_step: gradient for unknown parameter {name}", expected=sorted(params), actual=name)
        if grad.shape != params[name].shape:
            raise ShapeError(f"adam_step: gradient shape for {name}", expected=params[name].shape, actual=grad.shape)
        if not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for parameter {name}", parameter=name)

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, grad in gradients.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        params[name] -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params, state
