"""Conditional denoising U-Net over VAE latents.

Two resolution levels (stride-2 down, nearest-neighbor up with a skip
concatenation), residual blocks with sinusoidal timestep embeddings, and one
cross-attention block at the bottleneck where condition tokens are injected.
The final convolution is zero-initialized, so an untrained model predicts
zero noise exactly.  Designed for batch size 1 (attention flattens the
spatial grid of a single sample into a token sequence).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from .. import tensor as T
from .condition import DEFAULT_N_TOKENS, DEFAULT_TOKEN_DIM


@dataclass(frozen=True)
class DenoiserConfig:
    latent_dim: int = 4          # cubic edge of the latent grid
    latent_channels: int = 4
    base_channels: int = 32
    time_dim: int = 32           # sinusoidal embedding width
    token_dim: int = DEFAULT_TOKEN_DIM
    n_tokens: int = DEFAULT_N_TOKENS
    head_dim: int = 16
    norm_groups: int = 8

    def __post_init__(self):
        if self.latent_dim % 2 != 0:
            raise ConfigError("latent_dim must be even (one stride-2 stage)")
        if self.base_channels % self.norm_groups != 0:
            raise ConfigError("norm_groups must divide base_channels")
        if self.time_dim % 2 != 0:
            raise ConfigError("time_dim must be even")


def sinusoidal_embedding(t: int, dim: int, max_period: float = 10_000.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)]).astype(np.float32)


def _conv_init(rng, c_out, c_in, k, dtype, gain=1.0):
    fan_in = c_in * k ** 3
    return rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), (c_out, c_in, k, k, k)).astype(dtype)


def _lin_init(rng, c_out, c_in, dtype, gain=1.0):
    return rng.normal(0.0, gain * np.sqrt(2.0 / c_in), (c_out, c_in)).astype(dtype)


def _param(arr):
    return T.Tensor(arr, requires_grad=True)


class Denoiser:
    def __init__(self, config: DenoiserConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        c1 = config.base_channels
        c2 = 2 * c1
        cl = config.latent_channels
        td = config.time_dim
        p = {}
        p["time.w1"] = _param(_lin_init(rng, td * 2, td, dtype))
        p["time.b1"] = _param(np.zeros(td * 2, dtype))
        p["time.w2"] = _param(_lin_init(rng, td * 2, td * 2, dtype))
        p["time.b2"] = _param(np.zeros(td * 2, dtype))
        p["in.w"] = _param(_conv_init(rng, c1, cl, 3, dtype))
        p["in.b"] = _param(np.zeros(c1, dtype))
        self._res_params(p, "res_down", c1, c1, td * 2, rng, dtype)
        p["down.w"] = _param(_conv_init(rng, c2, c1, 3, dtype))
        p["down.b"] = _param(np.zeros(c2, dtype))
        self._res_params(p, "res_mid1", c2, c2, td * 2, rng, dtype)
        p["attn.gn.g"] = _param(np.ones(c2, dtype))
        p["attn.gn.b"] = _param(np.zeros(c2, dtype))
        p["attn.wq"] = _param(_lin_init(rng, config.head_dim, c2, dtype).T.copy())
        p["attn.wk"] = _param(_lin_init(rng, config.head_dim, config.token_dim, dtype).T.copy())
        p["attn.wv"] = _param(_lin_init(rng, c2, config.token_dim, dtype).T.copy())
        p["attn.out.w"] = _param(np.zeros((c2, c2), dtype))  # zero-init: attention starts as identity
        p["attn.out.b"] = _param(np.zeros(c2, dtype))
        self._res_params(p, "res_mid2", c2, c2, td * 2, rng, dtype)
        p["up.w"] = _param(_conv_init(rng, c1, c2, 3, dtype))
        p["up.b"] = _param(np.zeros(c1, dtype))
        self._res_params(p, "res_up", 2 * c1, c1, td * 2, rng, dtype)
        p["out.gn.g"] = _param(np.ones(c1, dtype))
        p["out.gn.b"] = _param(np.zeros(c1, dtype))
        p["out.w"] = _param(np.zeros((cl, c1, 3, 3, 3), dtype))  # zero-init: eps_hat = 0 untrained
        p["out.b"] = _param(np.zeros(cl, dtype))
        self.params = p

    def _res_params(self, p, name, c_in, c_out, t_dim, rng, dtype):
        g = self.config.norm_groups
        if c_in % g or c_out % g:
            raise ConfigError(f"norm_groups {g} must divide block channels {c_in}/{c_out}")
        p[f"{name}.gn1.g"] = _param(np.ones(c_in, dtype))
        p[f"{name}.gn1.b"] = _param(np.zeros(c_in, dtype))
        p[f"{name}.c1.w"] = _param(_conv_init(rng, c_out, c_in, 3, dtype))
        p[f"{name}.c1.b"] = _param(np.zeros(c_out, dtype))
        p[f"{name}.temb.w"] = _param(_lin_init(rng, c_out, t_dim, dtype, gain=0.5))
        p[f"{name}.temb.b"] = _param(np.zeros(c_out, dtype))
        p[f"{name}.gn2.g"] = _param(np.ones(c_out, dtype))
        p[f"{name}.gn2.b"] = _param(np.zeros(c_out, dtype))
        p[f"{name}.c2.w"] = _param(_conv_init(rng, c_out, c_out, 3, dtype, gain=0.5))
        p[f"{name}.c2.b"] = _param(np.zeros(c_out, dtype))
        if c_in != c_out:
            p[f"{name}.skip.w"] = _param(_conv_init(rng, c_out, c_in, 1, dtype))
            p[f"{name}.skip.b"] = _param(np.zeros(c_out, dtype))

    def _resblock(self, name, x, temb):
        p = self.params
        g = self.config.norm_groups
        h = T.silu(T.group_norm(x, p[f"{name}.gn1.g"], p[f"{name}.gn1.b"], g))
        h = T.conv3d(h, p[f"{name}.c1.w"], p[f"{name}.c1.b"], stride=1, pad=1)
        tproj = T.linear(temb, p[f"{name}.temb.w"], p[f"{name}.temb.b"])  # (N, c_out)
        h = T.bias_add(h, tproj)
        h = T.silu(T.group_norm(h, p[f"{name}.gn2.g"], p[f"{name}.gn2.b"], g))
        h = T.conv3d(h, p[f"{name}.c2.w"], p[f"{name}.c2.b"], stride=1, pad=1)
        if f"{name}.skip.w" in p:
            x = T.conv3d(x, p[f"{name}.skip.w"], p[f"{name}.skip.b"], stride=1, pad=0)
        return T.add(x, h)

    def _attention(self, x, tokens):
        """Residual cross-attention over the flattened spatial grid (N = 1)."""
        p = self.params
        n, c = x.data.shape[:2]
        if n != 1:
            raise DataError("the denoiser attention path expects batch size 1")
        spatial = int(np.prod(x.data.shape[2:], dtype=np.int64))
        hn = T.group_norm(x, p["attn.gn.g"], p["attn.gn.b"], self.config.norm_groups)
        seq = T.transpose2d(T.reshape(hn, (c, spatial)))  # (L, C)
        att = T.cross_attention(seq, tokens, p["attn.wq"], p["attn.wk"], p["attn.wv"])
        att = T.linear(att, p["attn.out.w"], p["attn.out.b"])  # (L, C)
        att = T.reshape(T.transpose2d(att), x.data.shape)
        return T.add(x, att)

    def forward(self, x, t: int, tokens) -> T.Tensor:
        """Predict the noise added to latent x at timestep t.

        x: (1, latent_channels, d, d, d) array or Tensor; tokens: condition
        token tensor of shape (n_tokens, token_dim).
        """
        p = self.params
        cfg = self.config
        xt = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x))
        if xt.data.ndim != 5 or xt.data.shape[1] != cfg.latent_channels \
                or xt.data.shape[2] != cfg.latent_dim:
            raise DataError(f"expected latent (N, {cfg.latent_channels}, {cfg.latent_dim}^3), "
                            f"got {xt.data.shape}")
        if tokens.data.shape != (cfg.n_tokens, cfg.token_dim):
            raise DataError(f"expected tokens ({cfg.n_tokens}, {cfg.token_dim}), "
                            f"got {tokens.data.shape}")
        n = xt.data.shape[0]
        emb = np.tile(sinusoidal_embedding(t, cfg.time_dim).astype(xt.data.dtype), (n, 1))
        temb = T.linear(T.Tensor(emb), p["time.w1"], p["time.b1"])
        temb = T.silu(temb)
        temb = T.linear(temb, p["time.w2"], p["time.b2"])
        h0 = T.conv3d(xt, p["in.w"], p["in.b"], stride=1, pad=1)
        h1 = self._resblock("res_down", h0, temb)
        d1 = T.conv3d(h1, p["down.w"], p["down.b"], stride=2, pad=1)
        m = self._resblock("res_mid1", d1, temb)
        m = self._attention(m, tokens)
        m = self._resblock("res_mid2", m, temb)
        u = T.upsample_nearest3d(m, 2)
        u = T.conv3d(u, p["up.w"], p["up.b"], stride=1, pad=1)
        cat = T.concat(u, h1, axis=1)
        h2 = self._resblock("res_up", cat, temb)
        out = T.silu(T.group_norm(h2, p["out.gn.g"], p["out.gn.b"], cfg.norm_groups))
        return T.conv3d(out, p["out.w"], p["out.b"], stride=1, pad=1)
