"""Training loops for the VAE and the latent diffusion denoiser.

Both loops are deterministic for a fixed seed: batching, noise draws and
condition dropout all come from one seeded generator, data order included.
Non-finite losses abort immediately with the failing step in the error.

Hyperparameters carry a "desk" default tuned for minutes-scale CPU runs on
small volumes; the "paper" preset records the published full-scale settings
(lr 1e-6, 400 epochs, T=1000 on 64^3 volumes) for documentation and is not
expected to converge in desk time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError, DataError, DivergenceError
from .. import tensor as T
from .condition import ConditionEncoder, ConditionSpec
from .denoiser import Denoiser
from .schedule import NoiseSchedule, q_sample
from .vae import Vae, reparameterize


@dataclass(frozen=True)
class TrainHyper:
    steps: int = 2000
    batch_size: int = 2
    lr: float = 1e-3
    kl_weight: float = 1e-6
    condition_dropout: float = 0.1
    seed: int = 0
    log_every: int = 50


PRESETS = {
    "desk": TrainHyper(),
    "paper": TrainHyper(steps=400_000, batch_size=2, lr=1e-6, kl_weight=1e-6,
                        condition_dropout=0.0, seed=0),
}


def preset(name: str, **overrides) -> TrainHyper:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; have {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


@dataclass
class LossTrace:
    """Per-step losses plus epoch means (an epoch = one pass worth of steps)."""

    step_losses: list = field(default_factory=list)
    epoch_means: list = field(default_factory=list)

    def smoothed(self, window: int = 100) -> float:
        if not self.step_losses:
            raise DataError("empty loss trace")
        tail = self.step_losses[-window:]
        return float(np.mean(tail))


def _check_finite(value: float, step: int, what: str):
    if not np.isfinite(value):
        raise DivergenceError(f"{what} loss became non-finite ({value}) at step {step}",
                              step=step)


def train_vae(data: np.ndarray, vae: Vae, hyper: TrainHyper) -> LossTrace:
    """Optimize reconstruction MSE + kl_weight * KL over a (n, 3, D, D, D)
    training array.  Returns the loss trace; parameters update in place."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 5:
        raise DataError(f"training data must be (n, C, D, H, W), got {data.shape}")
    n = data.shape[0]
    if n < 2:
        raise DataError("need at least 2 training samples")
    rng = np.random.default_rng(hyper.seed)
    state = T.AdamState.for_params(vae.params, lr=hyper.lr)
    trace = LossTrace()
    steps_per_epoch = max(1, n // hyper.batch_size)
    order = rng.permutation(n)
    cursor = 0
    epoch_acc = []
    for step in range(1, hyper.steps + 1):
        if cursor + hyper.batch_size > n:
            order = rng.permutation(n)
            cursor = 0
        batch = data[order[cursor:cursor + hyper.batch_size]]
        cursor += hyper.batch_size
        x = T.Tensor(batch)
        mu, log_var = vae.encode(x)
        noise = rng.standard_normal(mu.data.shape).astype(np.float32)
        z = reparameterize(mu, log_var, noise)
        recon = vae.decode(z)
        loss = T.mse_loss(recon, x)
        if hyper.kl_weight > 0.0:
            loss = T.add(loss, T.scale(T.kl_gaussian(mu, log_var), hyper.kl_weight))
        value = loss.item()
        _check_finite(value, step, "vae")
        T.zero_grads(vae.params)
        T.backward(loss)
        T.adam_step(vae.params, {k: p.grad for k, p in vae.params.items()}, state)
        trace.step_losses.append(value)
        epoch_acc.append(value)
        if len(epoch_acc) == steps_per_epoch:
            trace.epoch_means.append(float(np.mean(epoch_acc)))
            epoch_acc = []
    if epoch_acc:
        trace.epoch_means.append(float(np.mean(epoch_acc)))
    return trace


def encode_dataset(data: np.ndarray, vae: Vae) -> np.ndarray:
    """Posterior means for every sample; the frozen-latent diffusion input."""
    out = []
    for i in range(data.shape[0]):
        mu, _ = vae.encode(data[i:i + 1].astype(np.float32))
        out.append(mu.data[0])
    return np.stack(out)


def train_diffusion(latents: np.ndarray, condition_values, denoiser: Denoiser,
                    encoder: ConditionEncoder, schedule: NoiseSchedule,
                    hyper: TrainHyper, condition_kind: str = "grain_count",
                    training_range: tuple[float, float] | None = None) -> LossTrace:
    """Noise-prediction training in latent space, batch size 1.

    Per step: pick a sample, draw t uniform in [1, T] and unit Gaussian
    noise, form x_t by the closed-form forward process and regress the
    denoiser output onto the noise.  With probability `condition_dropout`
    the sample's tokens are replaced by the learned null token block.
    `condition_values` may be None for fully unconditional training.
    """
    latents = np.asarray(latents, dtype=np.float32)
    if latents.ndim != 5:
        raise DataError(f"latents must be (n, C, d, d, d), got {latents.shape}")
    n = latents.shape[0]
    if condition_values is not None:
        condition_values = np.asarray(condition_values, dtype=np.float64)
        if condition_values.shape != (n,):
            raise DataError("need one condition value per latent")
        if training_range is None:
            training_range = (float(condition_values.min()), float(condition_values.max()))
    params = dict(denoiser.params)
    params.update(encoder.params)
    state = T.AdamState.for_params(params, lr=hyper.lr)
    rng = np.random.default_rng(hyper.seed)
    trace = LossTrace()
    steps_per_epoch = max(1, n)
    epoch_acc = []
    for step in range(1, hyper.steps + 1):
        i = int(rng.integers(0, n))
        t = int(rng.integers(1, schedule.timesteps + 1))
        eps = rng.standard_normal(latents[i].shape).astype(np.float32)
        x_t = q_sample(latents[i], t, eps, schedule).astype(np.float32)[None]
        drop = rng.random() < hyper.condition_dropout
        if condition_values is None or drop:
            tokens = encoder.null_tokens()
        else:
            spec = ConditionSpec(kind=condition_kind, value=float(condition_values[i]),
                                 training_range=training_range)
            tokens = encoder.embed(spec)
        eps_hat = denoiser.forward(x_t, t, tokens)
        loss = T.mse_loss(eps_hat, T.Tensor(eps[None]))
        value = loss.item()
        _check_finite(value, step, "diffusion")
        T.zero_grads(params)
        T.backward(loss)
        T.adam_step(params, {k: p.grad for k, p in params.items()}, state)
        trace.step_losses.append(value)
        epoch_acc.append(value)
        if len(epoch_acc) == steps_per_epoch:
            trace.epoch_means.append(float(np.mean(epoch_acc)))
            epoch_acc = []
    if epoch_acc:
        trace.epoch_means.append(float(np.mean(epoch_acc)))
    return trace
