"""Finite-difference verification of analytic gradients.

Checks run at 64-bit precision with central differences (default step 1e-5);
discrepancy is reported as |analytic - numeric| / max(|analytic|, |numeric|,
0.01), so near-zero gradients are judged on an absolute scale well above the
finite-difference noise floor (~1e-11 at these settings).
"""

from __future__ import annotations

import numpy as np

from ..errors import DataError
from .core import Tensor, backward

DEFAULT_FD_STEP = 1e-5
_REL_FLOOR = 1e-2


def grad_check(fn, inputs, step: float = DEFAULT_FD_STEP) -> float:
    """Max relative error between analytic and numeric gradients.

    `fn` must be a pure function mapping Tensors to a scalar-loss Tensor;
    `inputs` is a sequence of float arrays (cast to float64 internally).
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    if loss.data.size != 1:
        raise DataError("grad_check needs a scalar-valued function")
    backward(loss)

    def eval_loss() -> float:
        return float(fn(*[Tensor(a) for a in arrays]).data)

    worst = 0.0
    for arr, t in zip(arrays, tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(arr)
        flat = arr.ravel()
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            up = eval_loss()
            flat[i] = saved - step
            down = eval_loss()
            flat[i] = saved
            numeric = (up - down) / (2.0 * step)
            a = float(analytic.ravel()[i])
            denom = max(abs(a), abs(numeric), _REL_FLOOR)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
