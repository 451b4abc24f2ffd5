"""Condition embedding: target attribute values become token sequences that
the denoiser attends to via cross-attention.

Scalar conditions (grain count, mean sphericity) are min-max normalized to
[0, 1] by their training range and mapped by a learned linear layer to m
tokens.  Class labels go through one-hot then linear.  The "none" kind (and
condition dropout during training) uses a learned null token block, so a
single checkpoint serves both conditional and unconditional sampling.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .. import tensor as T

logger = logging.getLogger(__name__)

CONDITION_KINDS = ("none", "class_label", "grain_count", "mean_sphericity")
DEFAULT_N_TOKENS = 4
DEFAULT_TOKEN_DIM = 16


@dataclass(frozen=True)
class ConditionSpec:
    kind: str = "none"
    value: float | int | None = None
    training_range: tuple[float, float] | None = None
    n_classes: int = 0

    def __post_init__(self):
        if self.kind not in CONDITION_KINDS:
            raise ConfigError(f"unknown condition kind {self.kind!r}; expected one of {CONDITION_KINDS}")
        if self.kind in ("grain_count", "mean_sphericity"):
            if self.value is None or self.training_range is None:
                raise ConfigError(f"{self.kind} conditions need a value and a training range")
            lo, hi = self.training_range
            if not lo < hi:
                raise ConfigError(f"bad training range {self.training_range}")
        if self.kind == "class_label":
            if self.value is None or self.n_classes < 2:
                raise ConfigError("class_label conditions need a value and n_classes >= 2")

    def normalized(self) -> float:
        """Scalar value min-max mapped to [0, 1]; out-of-range values are
        allowed (extrapolation) but flagged."""
        lo, hi = self.training_range
        x = (float(self.value) - lo) / (hi - lo)
        if not 0.0 <= x <= 1.0:
            logger.warning("condition %s=%s lies outside the training range %s",
                           self.kind, self.value, self.training_range)
        return x


class ConditionEncoder:
    """Owns the embedding parameters; produces (n_tokens, token_dim) tensors."""

    def __init__(self, n_tokens: int = DEFAULT_N_TOKENS,
                 token_dim: int = DEFAULT_TOKEN_DIM, n_classes: int = 0,
                 rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.n_tokens = n_tokens
        self.token_dim = token_dim
        self.n_classes = n_classes
        out = n_tokens * token_dim
        self.params = {
            "cond.scalar.w": T.Tensor(rng.normal(0, 1.0, (out, 1)).astype(dtype), requires_grad=True),
            "cond.scalar.b": T.Tensor(np.zeros(out, dtype=dtype), requires_grad=True),
            "cond.null": T.Tensor(rng.normal(0, 0.02, (n_tokens, token_dim)).astype(dtype), requires_grad=True),
        }
        if n_classes >= 2:
            self.params["cond.class.w"] = T.Tensor(
                rng.normal(0, 1.0 / np.sqrt(n_classes), (out, n_classes)).astype(dtype), requires_grad=True)
            self.params["cond.class.b"] = T.Tensor(np.zeros(out, dtype=dtype), requires_grad=True)

    def embed(self, spec: ConditionSpec) -> T.Tensor:
        """Condition tokens of shape (n_tokens, token_dim)."""
        dtype = self.params["cond.null"].data.dtype
        if spec.kind == "none":
            return self.params["cond.null"]
        if spec.kind == "class_label":
            if "cond.class.w" not in self.params:
                raise ConfigError("encoder was built without class-label support")
            onehot = np.zeros((1, self.n_classes), dtype=dtype)
            onehot[0, int(spec.value)] = 1.0
            flat = T.linear(T.Tensor(onehot), self.params["cond.class.w"],
                            self.params["cond.class.b"])
            return T.reshape(flat, (self.n_tokens, self.token_dim))
        x = np.array([[spec.normalized()]], dtype=dtype)
        flat = T.linear(T.Tensor(x), self.params["cond.scalar.w"],
                        self.params["cond.scalar.b"])
        return T.reshape(flat, (self.n_tokens, self.token_dim))

    def null_tokens(self) -> T.Tensor:
        return self.params["cond.null"]
