from .tensor import (Tensor, add, sub, mul, div, matmul, exp, sqrt, tanh,
                     sigmoid, relu, reshape, concat, gather_rows,
                     scatter_add_rows, segment_max, reduce_sum, reduce_mean,
                     l2_norm_rows, softmax, segment_softmax)
from .conv import conv2d, upsample2x_nearest
from .nn import Parameter, gru_cell, uniform_init
from .optim import adam_step, zero_grads
from .gradcheck import grad_check, GradCheckReport
from . import checkpoint

__all__ = [
    "Tensor", "add", "sub", "mul", "div", "matmul", "exp", "sqrt", "tanh",
    "sigmoid", "relu", "reshape", "concat", "gather_rows", "scatter_add_rows",
    "segment_max", "reduce_sum", "reduce_mean", "l2_norm_rows", "softmax",
    "segment_softmax", "conv2d", "upsample2x_nearest", "Parameter", "gru_cell",
    "uniform_init", "adam_step", "zero_grads", "grad_check", "GradCheckReport",
    "checkpoint",
]
