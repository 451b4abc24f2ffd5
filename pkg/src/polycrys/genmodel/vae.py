"""3D convolutional VAE: two stride-2 stages compress a (3, D, D, D) color
volume to a (C, D/4, D/4, D/4) latent; the decoder mirrors them with
nearest-neighbor upsampling and ends in tanh, so every decoded voxel lies in
[-1, 1] by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError
from .. import tensor as T


@dataclass(frozen=True)
class VaeConfig:
    input_dim: int = 16          # cubic edge length of the input volume
    in_channels: int = 3
    latent_channels: int = 4
    base_channels: int = 16      # first conv width; the deeper stage doubles it
    norm_groups: int = 8

    def __post_init__(self):
        if self.input_dim % 4 != 0:
            raise ConfigError(f"input_dim must be divisible by 4 (two stride-2 stages), got {self.input_dim}")
        if (2 * self.base_channels) % self.norm_groups != 0:
            raise ConfigError("norm_groups must divide 2*base_channels")

    @property
    def latent_dim(self) -> int:
        return self.input_dim // 4

    @property
    def latent_shape(self) -> tuple[int, int, int, int]:
        d = self.latent_dim
        return (self.latent_channels, d, d, d)


def _conv_init(rng, c_out, c_in, k, dtype, gain=1.0):
    fan_in = c_in * k ** 3
    std = gain * np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, (c_out, c_in, k, k, k)).astype(dtype)


def _param(arr):
    return T.Tensor(arr, requires_grad=True)


class Vae:
    """Parameter container plus encode/decode graph builders."""

    def __init__(self, config: VaeConfig, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        if rng is None:
            rng = np.random.default_rng(0)
        self.config = config
        c1 = config.base_channels
        c2 = 2 * c1
        cl = config.latent_channels
        g = config.norm_groups
        self.enc_groups = g
        p = {}
        p["enc.in.w"] = _param(_conv_init(rng, c1, config.in_channels, 3, dtype))
        p["enc.in.b"] = _param(np.zeros(c1, dtype))
        p["enc.d1.w"] = _param(_conv_init(rng, c2, c1, 3, dtype))
        p["enc.d1.b"] = _param(np.zeros(c2, dtype))
        p["enc.d1.gn.g"] = _param(np.ones(c2, dtype))
        p["enc.d1.gn.b"] = _param(np.zeros(c2, dtype))
        p["enc.d2.w"] = _param(_conv_init(rng, c2, c2, 3, dtype))
        p["enc.d2.b"] = _param(np.zeros(c2, dtype))
        p["enc.d2.gn.g"] = _param(np.ones(c2, dtype))
        p["enc.d2.gn.b"] = _param(np.zeros(c2, dtype))
        p["enc.out.w"] = _param(_conv_init(rng, 2 * cl, c2, 3, dtype, gain=0.2))
        p["enc.out.b"] = _param(np.zeros(2 * cl, dtype))
        p["dec.in.w"] = _param(_conv_init(rng, c2, cl, 3, dtype))
        p["dec.in.b"] = _param(np.zeros(c2, dtype))
        p["dec.in.gn.g"] = _param(np.ones(c2, dtype))
        p["dec.in.gn.b"] = _param(np.zeros(c2, dtype))
        p["dec.u1.w"] = _param(_conv_init(rng, c2, c2, 3, dtype))
        p["dec.u1.b"] = _param(np.zeros(c2, dtype))
        p["dec.u1.gn.g"] = _param(np.ones(c2, dtype))
        p["dec.u1.gn.b"] = _param(np.zeros(c2, dtype))
        p["dec.u2.w"] = _param(_conv_init(rng, c1, c2, 3, dtype))
        p["dec.u2.b"] = _param(np.zeros(c1, dtype))
        p["dec.u2.gn.g"] = _param(np.ones(c1, dtype))
        p["dec.u2.gn.b"] = _param(np.zeros(c1, dtype))
        p["dec.out.w"] = _param(_conv_init(rng, config.in_channels, c1, 3, dtype))
        p["dec.out.b"] = _param(np.zeros(config.in_channels, dtype))
        self.params = p

    def _as_tensor(self, x) -> T.Tensor:
        t = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x))
        if t.data.ndim != 5 or t.data.shape[1] != self.config.in_channels:
            raise DataError(f"expected (N, {self.config.in_channels}, D, H, W), got {t.data.shape}")
        if t.data.shape[2] != self.config.input_dim:
            raise DataError(f"volume edge {t.data.shape[2]} != configured {self.config.input_dim}")
        return t

    def encode(self, x):
        """-> (mu, log_var), each (N, latent_channels, d, d, d)."""
        p = self.params
        g = self.enc_groups
        t = self._as_tensor(x)
        h = T.silu(T.conv3d(t, p["enc.in.w"], p["enc.in.b"], stride=1, pad=1))
        h = T.conv3d(h, p["enc.d1.w"], p["enc.d1.b"], stride=2, pad=1)
        h = T.silu(T.group_norm(h, p["enc.d1.gn.g"], p["enc.d1.gn.b"], g))
        h = T.conv3d(h, p["enc.d2.w"], p["enc.d2.b"], stride=2, pad=1)
        h = T.silu(T.group_norm(h, p["enc.d2.gn.g"], p["enc.d2.gn.b"], g))
        stats = T.conv3d(h, p["enc.out.w"], p["enc.out.b"], stride=1, pad=1)
        cl = self.config.latent_channels
        n = stats.data.shape[0]
        d = stats.data.shape[2]
        both = T.reshape(stats, (n, 2, cl, d, d, d))
        mu = _take_axis1(both, 0)
        log_var = _take_axis1(both, 1)
        return mu, log_var

    def decode(self, z):
        """Latent -> volume in [-1, 1], shape (N, in_channels, D, D, D)."""
        p = self.params
        g = self.enc_groups
        t = z if isinstance(z, T.Tensor) else T.Tensor(np.asarray(z))
        if t.data.ndim != 5 or t.data.shape[1] != self.config.latent_channels:
            raise DataError(f"expected latent (N, {self.config.latent_channels}, d, d, d), got {t.data.shape}")
        h = T.conv3d(t, p["dec.in.w"], p["dec.in.b"], stride=1, pad=1)
        h = T.silu(T.group_norm(h, p["dec.in.gn.g"], p["dec.in.gn.b"], g))
        h = T.upsample_nearest3d(h, 2)
        h = T.conv3d(h, p["dec.u1.w"], p["dec.u1.b"], stride=1, pad=1)
        h = T.silu(T.group_norm(h, p["dec.u1.gn.g"], p["dec.u1.gn.b"], g))
        h = T.upsample_nearest3d(h, 2)
        h = T.conv3d(h, p["dec.u2.w"], p["dec.u2.b"], stride=1, pad=1)
        h = T.silu(T.group_norm(h, p["dec.u2.gn.g"], p["dec.u2.gn.b"], g))
        out = T.conv3d(h, p["dec.out.w"], p["dec.out.b"], stride=1, pad=1)
        return T.tanh(out)


def reparameterize(mu: T.Tensor, log_var: T.Tensor, noise: np.ndarray) -> T.Tensor:
    """latent = mu + exp(log_var / 2) * noise, with noise held constant."""
    if mu.data.shape != log_var.data.shape:
        raise DataError("reparameterize: mu and log_var shapes differ")
    noise = np.asarray(noise, dtype=mu.data.dtype)
    if noise.shape != mu.data.shape:
        raise DataError(f"reparameterize: noise shape {noise.shape} != {mu.data.shape}")
    std = T.exp(T.scale(log_var, 0.5))
    return T.add(mu, T.mul(std, T.Tensor(noise)))


def _take_axis1(t: T.Tensor, index: int) -> T.Tensor:
    """Select one slot along axis 1 of a (N, 2, ...) tensor."""
    data = t.data[:, index]
    shape = t.data.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, index] = g
        return (full,)

    from ..tensor.core import _result
    return _result(data, (t,), vjp)


def volume_to_net(data: np.ndarray) -> np.ndarray:
    """(nx, ny, nz, 3) voxel layout -> (1, 3, nx, ny, nz) network layout."""
    return np.ascontiguousarray(np.transpose(data, (3, 0, 1, 2)))[None]


def net_to_volume(data: np.ndarray) -> np.ndarray:
    """(1, 3, nx, ny, nz) network layout -> (nx, ny, nz, 3) voxel layout."""
    return np.ascontiguousarray(np.transpose(data[0], (1, 2, 3, 0)))
