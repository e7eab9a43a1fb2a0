"""Bias-corrected Adam with optional global gradient-norm clipping."""

import numpy as np

from ..errors import ShapeMismatch
from .nn import Parameter


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.  Keeps runaway phases (e.g. the consistency
    loss chasing an overshooting prediction) self-limiting.
    """
    sq = 0.0
    for p in params:
        if p.tensor.grad is not None:
            sq += float(np.sum(p.tensor.grad * p.tensor.grad))
    norm = np.sqrt(sq)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params:
            if p.tensor.grad is not None:
                p.tensor.grad *= scale
    return float(norm)


def adam_step(params, lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One Adam update over a list of Parameters, in list order.

    Parameters whose tensors carry no gradient are treated as zero-gradient:
    moments decay, the value moves only through the (decayed) history.
    """
    for p in params:
        g = p.tensor.grad
        if g is None:
            g = np.zeros_like(p.tensor.data)
        if g.shape != p.tensor.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != parameter {p.tensor.data.shape}")
        p.step += 1
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * (g * g)
        m_hat = p.m / (1.0 - beta1 ** p.step)
        v_hat = p.v / (1.0 - beta2 ** p.step)
        p.tensor.data = p.tensor.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def zero_grads(params) -> None:
    for p in params:
        p.tensor.zero_grad()
