"""Minimal reverse-mode autodiff tensor engine used by the generative stack."""

from .core import (Tensor, add, add_const, backward, concat, exp, matmul, mul,
                   reshape, scale, sigmoid, silu, softmax, sub, tanh, tmean,
                   transpose2d, tsum, zero_grads)
from .nn import (bias_add, conv3d, cross_attention, group_norm, kl_gaussian,
                 linear, mse_loss, upsample_nearest3d)
from .optim import AdamState, adam_step
from .gradcheck import grad_check
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "add", "add_const", "backward", "concat", "exp", "matmul",
    "mul", "reshape", "scale", "sigmoid", "silu", "softmax", "sub", "tanh",
    "tmean", "transpose2d", "tsum", "zero_grads",
    "bias_add", "conv3d", "cross_attention", "group_norm", "kl_gaussian",
    "linear", "mse_loss", "upsample_nearest3d",
    "AdamState", "adam_step", "grad_check",
    "load_checkpoint", "save_checkpoint",
]
