"""DDPM noise schedule and the forward/reverse diffusion algebra.

Timesteps are 1-based: t runs over 1..T, with arrays indexed at t-1.  The
reverse update is

    x_{t-1} = (1/sqrt(alpha_t)) * (x_t - ((1-alpha_t)/sqrt(1-alpha_bar_t)) * eps_hat)
              + sigma_t * z

with sigma_t = sqrt(beta_t) (the standard choice; swap in the posterior
variance by passing a different `sigma` if ever needed) and z forced to zero
at t = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DataError

DEFAULT_TIMESTEPS = 1000
DEFAULT_BETA_1 = 1.5e-3
DEFAULT_BETA_T = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    beta: np.ndarray       # beta_t, strictly increasing for the linear schedule
    alpha: np.ndarray      # 1 - beta_t
    alpha_bar: np.ndarray  # cumulative product of alpha

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        alpha = np.asarray(self.alpha, dtype=np.float64)
        alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if not (beta.shape == alpha.shape == alpha_bar.shape) or beta.ndim != 1:
            raise ConfigError("schedule arrays must be equal-length 1D")
        if beta.size < 2:
            raise ConfigError("schedule needs at least 2 timesteps")
        if beta.min() <= 0.0 or beta.max() >= 1.0:
            raise ConfigError("beta values must lie strictly in (0, 1)")
        if not np.all(np.diff(alpha_bar) < 0):
            raise ConfigError("alpha_bar must be strictly decreasing")
        for arr in (beta, alpha, alpha_bar):
            arr.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", alpha_bar)

    @property
    def timesteps(self) -> int:
        return self.beta.size

    def _check_t(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.timesteps:
            raise DataError(f"timestep {t} out of range [1, {self.timesteps}]")
        return t

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check_t(t) - 1])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check_t(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        return float(self.alpha_bar[self._check_t(t) - 1])

    def sigma_at(self, t: int) -> float:
        return float(np.sqrt(self.beta_at(t)))


def linear_schedule(timesteps: int = DEFAULT_TIMESTEPS,
                    beta_1: float = DEFAULT_BETA_1,
                    beta_t: float = DEFAULT_BETA_T) -> NoiseSchedule:
    """Linearly interpolated beta, endpoints inclusive."""
    if timesteps < 2:
        raise ConfigError("timesteps must be >= 2")
    if not 0.0 < beta_1 < beta_t < 1.0:
        raise ConfigError(f"need 0 < beta_1 < beta_T < 1, got {beta_1}, {beta_t}")
    beta = np.linspace(beta_1, beta_t, timesteps)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def q_sample(x0: np.ndarray, t: int, epsilon: np.ndarray,
             schedule: NoiseSchedule) -> np.ndarray:
    """Closed-form forward noising: x_t = sqrt(ab_t) x0 + sqrt(1-ab_t) eps."""
    x0 = np.asarray(x0)
    epsilon = np.asarray(epsilon)
    if x0.shape != epsilon.shape:
        raise DataError(f"q_sample: noise shape {epsilon.shape} != x0 shape {x0.shape}")
    ab = schedule.alpha_bar_at(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * epsilon


def predict_x0(x_t: np.ndarray, t: int, epsilon: np.ndarray,
               schedule: NoiseSchedule) -> np.ndarray:
    """Invert the closed form: x0 = (x_t - sqrt(1-ab_t) eps) / sqrt(ab_t)."""
    ab = schedule.alpha_bar_at(t)
    return (np.asarray(x_t) - np.sqrt(1.0 - ab) * np.asarray(epsilon)) / np.sqrt(ab)


def ddpm_step(x_t: np.ndarray, t: int, eps_hat: np.ndarray, z: np.ndarray | None,
              schedule: NoiseSchedule) -> np.ndarray:
    """One reverse step; pass z = None (or zeros) at t = 1."""
    x_t = np.asarray(x_t)
    eps_hat = np.asarray(eps_hat)
    if x_t.shape != eps_hat.shape:
        raise DataError(f"ddpm_step: eps_hat shape {eps_hat.shape} != x shape {x_t.shape}")
    t = schedule._check_t(t)
    alpha = schedule.alpha_at(t)
    ab = schedule.alpha_bar_at(t)
    mean = (x_t - (1.0 - alpha) / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
    if t == 1 or z is None:
        return mean
    z = np.asarray(z)
    if z.shape != x_t.shape:
        raise DataError(f"ddpm_step: z shape {z.shape} != x shape {x_t.shape}")
    return mean + schedule.sigma_at(t) * z
