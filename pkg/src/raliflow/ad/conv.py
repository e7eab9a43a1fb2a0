"""2D convolution and nearest-neighbor upsampling on HWC tensors.

Convolution is cross-correlation with zero 'same' padding, computed as one
accumulated matmul per kernel offset so the heavy lifting stays in BLAS and
no im2col buffer is materialized.  Odd padding totals (3x3 stride 2) pad
more on the bottom/right.
"""

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, _make


def conv2d(x: Tensor, weight: Tensor, bias: Tensor = None, stride: int = 1) -> Tensor:
    """x: (H, W, Cin); weight: (kh, kw, Cin, Cout); bias: (Cout,) or None."""
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ShapeMismatch("conv2d expects HWC input and (kh,kw,Cin,Cout) kernels")
    h, w, cin = x.data.shape
    kh, kw, wcin, cout = weight.data.shape
    if wcin != cin:
        raise ShapeMismatch(f"input channels {cin} != kernel channels {wcin}")
    if stride > 1 and (h % stride or w % stride):
        raise ShapeMismatch(f"spatial dims {h}x{w} not divisible by stride {stride}")
    oh, ow = h // stride, w // stride

    pad_h = max((oh - 1) * stride + kh - h, 0)
    pad_w = max((ow - 1) * stride + kw - w, 0)
    pt, pl = pad_h // 2, pad_w // 2
    pb, pr = pad_h - pt, pad_w - pl
    padded = np.pad(x.data, ((pt, pb), (pl, pr), (0, 0))) if (pad_h or pad_w) else x.data
    ph, pw = padded.shape[:2]

    def shifted(ki, kj):
        """Input window feeding kernel tap (ki, kj), as an (oh*ow, cin) view."""
        v = padded[ki:ki + oh * stride:stride, kj:kj + ow * stride:stride]
        return np.ascontiguousarray(v).reshape(oh * ow, cin)

    views = [[shifted(ki, kj) for kj in range(kw)] for ki in range(kh)]
    out = None
    for ki in range(kh):
        for kj in range(kw):
            term = views[ki][kj] @ weight.data[ki, kj]
            out = term if out is None else out + term
    if bias is not None:
        out += bias.data
    data = out.reshape(oh, ow, cout)

    def bw(g):
        gflat = g.reshape(oh * ow, cout)
        if weight.requires_grad:
            dw = np.empty_like(weight.data)
            for ki in range(kh):
                for kj in range(kw):
                    dw[ki, kj] = views[ki][kj].T @ gflat
            weight._accumulate(dw)
        if bias is not None and bias.requires_grad:
            bias._accumulate(gflat.sum(axis=0))
        if x.requires_grad:
            dpad = np.zeros((ph, pw, cin))
            for ki in range(kh):
                for kj in range(kw):
                    dterm = (gflat @ weight.data[ki, kj].T).reshape(oh, ow, cin)
                    dpad[ki:ki + oh * stride:stride, kj:kj + ow * stride:stride] += dterm
            x._accumulate(dpad[pt:pt + h, pl:pl + w] if (pad_h or pad_w) else dpad)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(data, parents, bw)


def upsample2x_nearest(x: Tensor) -> Tensor:
    """(H, W, C) -> (2H, 2W, C), each cell replicated into a 2x2 block."""
    if x.data.ndim != 3:
        raise ShapeMismatch("upsample2x_nearest expects an HWC tensor")
    h, w, c = x.data.shape
    data = np.repeat(np.repeat(x.data, 2, axis=0), 2, axis=1)

    def bw(g):
        x._accumulate(g.reshape(h, 2, w, 2, c).sum(axis=(1, 3)))

    return _make(data, (x,), bw)
