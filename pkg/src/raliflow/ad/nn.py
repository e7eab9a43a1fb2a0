"""Parameters, initialization and the GRU recurrence."""

import numpy as np

from ..errors import ShapeMismatch
from ..rng import Splitmix64
from .tensor import Tensor, _make


class Parameter:
    """A named trainable tensor with its Adam state."""

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.tensor = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)
        self.m = np.zeros_like(self.tensor.data)
        self.v = np.zeros_like(self.tensor.data)
        self.step = 0

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.tensor.data.shape})"


def uniform_init(rng: Splitmix64, shape, fan_in: int) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in); the default weight initialization."""
    bound = 1.0 / np.sqrt(fan_in)
    n = int(np.prod(shape))
    return rng.uniform(n, -bound, bound).reshape(shape)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-a))


def gru_cell(h: Tensor, x: Tensor, params: dict) -> Tensor:
    """One GRU step over row-batched states.

    h: (N, H) previous hidden, x: (N, X) input.  params holds W_z, W_r, W_h
    Tensors of shape (X+H, H) plus b_z, b_r, b_h of shape (H,).

        z  = sigmoid([x, h] W_z + b_z)
        r  = sigmoid([x, h] W_r + b_r)
        h~ = tanh([x, r*h] W_h + b_h)
        h' = (1 - z) * h + z * h~

    Forward and backward are fused into one tape node; the heads call this
    four times per point batch, so the saved temporaries add up.
    """
    if h.data.shape[0] != x.data.shape[0]:
        raise ShapeMismatch("h and x row counts differ")
    wz, wr, wh = params["W_z"], params["W_r"], params["W_h"]
    bz, br, bh = params["b_z"], params["b_r"], params["b_h"]
    if wz.data.shape[0] != h.data.shape[1] + x.data.shape[1]:
        raise ShapeMismatch("gate weights do not match [x, h] width")
    hd, xd = h.data, x.data
    nx = xd.shape[1]
    xh = np.concatenate([xd, hd], axis=1)
    z = _sigmoid(xh @ wz.data + bz.data)
    r = _sigmoid(xh @ wr.data + br.data)
    xrh = np.concatenate([xd, r * hd], axis=1)
    h_cand = np.tanh(xrh @ wh.data + bh.data)
    data = (1.0 - z) * hd + z * h_cand

    def bw(g):
        dz = g * (h_cand - hd)
        dh = g * (1.0 - z)
        da_h = (g * z) * (1.0 - h_cand * h_cand)
        if wh.requires_grad:
            wh._accumulate(xrh.T @ da_h)
        if bh.requires_grad:
            bh._accumulate(da_h.sum(axis=0))
        dxrh = da_h @ wh.data.T
        dx = dxrh[:, :nx].copy()
        drh = dxrh[:, nx:]
        dh += drh * r
        da_z = dz * z * (1.0 - z)
        da_r = (drh * hd) * r * (1.0 - r)
        if wz.requires_grad:
            wz._accumulate(xh.T @ da_z)
        if bz.requires_grad:
            bz._accumulate(da_z.sum(axis=0))
        if wr.requires_grad:
            wr._accumulate(xh.T @ da_r)
        if br.requires_grad:
            br._accumulate(da_r.sum(axis=0))
        dxh = da_z @ wz.data.T + da_r @ wr.data.T
        dx += dxh[:, :nx]
        dh += dxh[:, nx:]
        if x.requires_grad:
            x._accumulate(dx)
        if h.requires_grad:
            h._accumulate(dh)

    return _make(data, (h, x, wz, wr, wh, bz, br, bh), bw)
