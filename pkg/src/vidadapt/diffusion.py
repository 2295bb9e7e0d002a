"""Noise schedule, forward process, epsilon loss, and deterministic DDIM."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import torch

from .errors import ConfigError, ModelContractError, RangeError, ScheduleError, UsageError

# (x_t, text_emb, t[B]) -> predicted noise, same shape as x_t
EpsModel = Callable[[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule. Index 0 is the clean state (alpha_bar = 1)."""

    T: int
    beta: torch.Tensor  # float64, length T + 1, beta[0] = 0
    alpha: torch.Tensor
    alpha_bar: torch.Tensor

    def ab(self, t: int | torch.Tensor) -> torch.Tensor:
        return self.alpha_bar[t]


def make_schedule(T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise ConfigError(f"T must be positive, got {T}")
    if not (0 < beta_start <= beta_end < 1):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    betas = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    beta = torch.cat([torch.zeros(1, dtype=torch.float64), betas])
    alpha = 1.0 - beta
    alpha_bar = torch.cumprod(alpha, dim=0)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _coef(values: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Broadcast per-item coefficients [B] (or a scalar) against ``like``."""
    values = values.to(like.dtype)
    if values.ndim == 0:
        return values
    return values.reshape(-1, *([1] * (like.ndim - 1)))


def _check_t(t: int | torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    tt = torch.as_tensor(t, dtype=torch.long)
    if tt.numel() and (tt.min() < 1 or tt.max() > sched.T):
        raise RangeError(f"timestep outside [1, {sched.T}]: {tt.tolist()}")
    return tt


def q_sample(x0: torch.Tensor, t: int | torch.Tensor, eps: torch.Tensor,
             sched: NoiseSchedule) -> torch.Tensor:
    """Sample x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps. ``t`` is an int or one step per item."""
    if x0.shape != eps.shape:
        raise ModelContractError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ")
    ab = sched.ab(_check_t(t, sched))
    return _coef(ab.sqrt(), x0) * x0 + _coef((1 - ab).sqrt(), x0) * eps


def training_loss(model: EpsModel, x0: torch.Tensor, text_emb: torch.Tensor,
                  sched: NoiseSchedule, rng: torch.Generator) -> torch.Tensor:
    """Mean squared epsilon error with t ~ U{1..T} per item and eps ~ N(0, I)."""
    B = x0.shape[0]
    t = torch.randint(1, sched.T + 1, (B,), generator=rng)
    eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype)
    x_t = q_sample(x0, t, eps, sched)
    pred = model(x_t, text_emb, t)
    if pred.shape != eps.shape:
        raise ModelContractError(f"model returned {tuple(pred.shape)}, expected {tuple(eps.shape)}")
    return ((pred - eps) ** 2).mean()


@dataclass(frozen=True)
class SamplerConfig:
    num_inference_steps: int = 50
    eta: float = 0.0
    seed: int = 0

    def validate(self, sched: NoiseSchedule) -> None:
        if not (1 <= self.num_inference_steps <= sched.T):
            raise ConfigError(f"num_inference_steps must be in [1, {sched.T}]")
        if not (0.0 <= self.eta <= 1.0):
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")


def timestep_sequence(num_steps: int, T: int) -> list[int]:
    """Descending, uniformly strided timesteps starting at T (stride 1 when num_steps == T)."""
    return [round(T - k * T / num_steps) for k in range(num_steps)]


def predict_x0(x_t: torch.Tensor, eps_pred: torch.Tensor, ab_t: torch.Tensor) -> torch.Tensor:
    if float(ab_t) <= 0.0:
        raise ScheduleError("alpha_bar is zero; x0 cannot be recovered")
    return (x_t - (1 - ab_t).sqrt().to(x_t.dtype) * eps_pred) / ab_t.sqrt().to(x_t.dtype)


def ddim_step(x_t: torch.Tensor, eps_pred: torch.Tensor, t: int, t_prev: int,
              sched: NoiseSchedule, eta: float = 0.0,
              noise: torch.Tensor | None = None) -> torch.Tensor:
    """One DDIM update from t to t_prev (t_prev = 0 lands on the clean estimate)."""
    if t_prev >= t:
        raise UsageError(f"t_prev ({t_prev}) must be below t ({t})")
    ab_t, ab_prev = sched.ab(t), sched.ab(t_prev)
    x0 = predict_x0(x_t, eps_pred, ab_t)
    sigma = eta * ((1 - ab_prev) / (1 - ab_t)).sqrt() * (1 - ab_t / ab_prev).sqrt()
    dir_coef = (1 - ab_prev - sigma ** 2).clamp(min=0).sqrt()
    out = ab_prev.sqrt().to(x_t.dtype) * x0 + dir_coef.to(x_t.dtype) * eps_pred
    if eta > 0:
        if noise is None:
            raise UsageError("eta > 0 requires a noise tensor")
        out = out + sigma.to(x_t.dtype) * noise
    return out


def ddim_inverse_step(x_prev: torch.Tensor, eps_pred: torch.Tensor, t_prev: int, t: int,
                      sched: NoiseSchedule) -> torch.Tensor:
    """Algebraic inverse of the eta=0 ``ddim_step`` for a fixed noise prediction."""
    if t_prev >= t:
        raise UsageError(f"t_prev ({t_prev}) must be below t ({t})")
    ab_t, ab_prev = sched.ab(t), sched.ab(t_prev)
    x0 = predict_x0(x_prev, eps_pred, ab_prev)
    return ab_t.sqrt().to(x_prev.dtype) * x0 + (1 - ab_t).sqrt().to(x_prev.dtype) * eps_pred


def _tvec(t: int, batch: int) -> torch.Tensor:
    return torch.full((batch,), t, dtype=torch.long)


@torch.no_grad()
def ddim_sample(model: EpsModel, shape: tuple[int, ...], text_emb: torch.Tensor,
                cfg: SamplerConfig, sched: NoiseSchedule,
                x_T: torch.Tensor | None = None) -> torch.Tensor:
    """Denoise from seeded Gaussian noise (or a supplied ``x_T``) down to an x0 estimate."""
    cfg.validate(sched)
    gen = torch.Generator().manual_seed(cfg.seed)
    x = torch.randn(shape, generator=gen) if x_T is None else x_T.clone()
    ts = timestep_sequence(cfg.num_inference_steps, sched.T)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        eps = model(x, text_emb, _tvec(t, x.shape[0]))
        noise = torch.randn(x.shape, generator=gen, dtype=x.dtype) if cfg.eta > 0 else None
        x = ddim_step(x, eps, t, t_prev, sched, cfg.eta, noise)
    return x


@torch.no_grad()
def ddim_invert(model: EpsModel, x0: torch.Tensor, text_emb: torch.Tensor,
                cfg: SamplerConfig, sched: NoiseSchedule,
                num_steps: int | None = None) -> torch.Tensor:
    """Run the deterministic recurrence upward from x0 to a noise-like x_T.

    The noise for the step between t_prev and t is predicted at the current
    (less noisy) latent with the target timestep t. ``num_steps=0`` returns
    x0 unchanged.
    """
    if cfg.eta != 0:
        raise UsageError("DDIM inversion is only defined for eta = 0")
    n = cfg.num_inference_steps if num_steps is None else num_steps
    if n == 0:
        return x0.clone()
    SamplerConfig(n, 0.0, cfg.seed).validate(sched)
    ts = timestep_sequence(n, sched.T)
    x = x0.clone()
    for i in reversed(range(len(ts))):
        t = ts[i]
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        eps = model(x, text_emb, _tvec(t, x.shape[0]))
        x = ddim_inverse_step(x, eps, t_prev, t, sched)
    return x
