"""Noise schedule, forward process, posterior reverse step, and the
shape-anchored classifier-free-guidance sampler.

The denoiser predicts the clean signal at every step; sampling mixes the
full-condition branch with a shape-only branch (never a fully unconditioned
one): G = (1 - s) * G(x_t, c_shape, t) + s * G(x_t, c, t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .encoders import ConditionEmbedding

DEFAULT_STEPS = 1000
DEFAULT_GUIDANCE = 2.5


class NumericalError(RuntimeError):
    """Non-finite values encountered during sampling or training."""


@dataclass
class DiffusionSchedule:
    """Per-step coefficients: alpha in (0,1), alpha_bar its cumulative
    product, sigma2 the fixed posterior variance
    (1 - abar_{t-1}) (1 - alpha_t) / (1 - abar_t)."""

    alpha: np.ndarray      # [T]
    alpha_bar: np.ndarray  # [T]
    sigma2: np.ndarray     # [T], sigma2[0] == 0

    @property
    def steps(self) -> int:
        return len(self.alpha)

    def alpha_bar_prev(self, t: int) -> float:
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def make_schedule(steps: int, kind: str = "cosine",
                  variance: str = "posterior") -> DiffusionSchedule:
    """Build a schedule; cosine is the default, linear is kept for ablation.
    `variance` picks the fixed sigma^2: the posterior value or (1 - alpha_t)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if kind == "cosine":
        s = 0.008
        grid = np.arange(steps + 1) / steps
        f = np.cos((grid + s) / (1 + s) * math.pi / 2) ** 2
        beta = np.clip(1.0 - f[1:] / f[:-1], 0.0, 0.999)
    elif kind == "linear":
        scale = 1000.0 / steps
        beta = np.linspace(1e-4 * scale, 0.02 * scale, steps)
    else:
        raise ValueError(f"unknown schedule kind: {kind!r}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    abar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    if variance == "posterior":
        sigma2 = (1.0 - abar_prev) * (1.0 - alpha) / (1.0 - alpha_bar)
    elif variance == "beta":
        sigma2 = beta.copy()
        sigma2[0] = 0.0
    else:
        raise ValueError(f"unknown variance choice: {variance!r}")
    return DiffusionSchedule(alpha=alpha, alpha_bar=alpha_bar, sigma2=sigma2)


def q_sample(schedule: DiffusionSchedule, x0: torch.Tensor, t,
             noise: torch.Tensor) -> torch.Tensor:
    """Closed form of the forward chain: sqrt(abar_t) x0 + sqrt(1-abar_t) eps.

    `t` is an int or a [B] tensor of ints; x0 and noise share shape, with the
    batch dimension first when t is batched.
    """
    abar = _gather(schedule.alpha_bar, t, x0)
    return torch.sqrt(abar) * x0 + torch.sqrt(1.0 - abar) * noise


def posterior_mean(schedule: DiffusionSchedule, x_t: torch.Tensor,
                   x0_hat: torch.Tensor, t: int) -> torch.Tensor:
    """mu = (sqrt(a_t)(1-abar_{t-1}) x_t + sqrt(abar_{t-1})(1-a_t) x0_hat)
    / (1-abar_t); at t == 0 the chain terminates in x0_hat itself."""
    if not 0 <= t < schedule.steps:
        raise ValueError(f"step {t} out of range [0, {schedule.steps})")
    if t == 0:
        return x0_hat
    a_t = float(schedule.alpha[t])
    abar_t = float(schedule.alpha_bar[t])
    abar_prev = schedule.alpha_bar_prev(t)
    coef_xt = math.sqrt(a_t) * (1.0 - abar_prev) / (1.0 - abar_t)
    coef_x0 = math.sqrt(abar_prev) * (1.0 - a_t) / (1.0 - abar_t)
    return coef_xt * x_t + coef_x0 * x0_hat


def guided_denoise(model, x_t: torch.Tensor, t: int,
                   cond: ConditionEmbedding, scale: float) -> torch.Tensor:
    """Shape-anchored guidance: (1-s) * shape-only branch + s * full branch.

    s=1 short-circuits to the conditional branch (bit-exact); s=0 to the
    shape-only branch, making the output independent of the text.
    """
    if scale == 1.0:
        return model.denoise(x_t, t, cond)
    uncond = model.denoise(x_t, t, cond.shape_only())
    if scale == 0.0:
        return uncond
    full = model.denoise(x_t, t, cond)
    return (1.0 - scale) * uncond + scale * full


def sample_loop(model, schedule: DiffusionSchedule, cond: ConditionEmbedding,
                shape: tuple[int, ...], scale: float = DEFAULT_GUIDANCE,
                generator: torch.Generator | None = None,
                dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Ancestral sampling from pure noise down to the final x0 prediction.

    The last step returns x0_hat without adding noise.  Deterministic given
    the generator state.  Raises NumericalError naming the offending step if
    the iterate goes non-finite.
    """
    x = torch.randn(shape, generator=generator, dtype=dtype)
    for t in range(schedule.steps - 1, -1, -1):
        x0_hat = guided_denoise(model, x, t, cond, scale)
        if not torch.isfinite(x0_hat).all():
            raise NumericalError(f"non-finite denoiser output at step {t}")
        if t == 0:
            return x0_hat
        mean = posterior_mean(schedule, x, x0_hat, t)
        noise = torch.randn(shape, generator=generator, dtype=dtype)
        x = mean + math.sqrt(float(schedule.sigma2[t])) * noise
        if not torch.isfinite(x).all():
            raise NumericalError(f"non-finite iterate at step {t}")
    return x


def _gather(values: np.ndarray, t, like: torch.Tensor) -> torch.Tensor:
    if isinstance(t, int):
        if not 0 <= t < len(values):
            raise ValueError(f"step {t} out of range [0, {len(values)})")
        return torch.as_tensor(values[t], dtype=like.dtype, device=like.device)
    t = torch.as_tensor(t)
    if t.min() < 0 or t.max() >= len(values):
        raise ValueError("step index out of range")
    out = torch.as_tensor(values, dtype=like.dtype, device=like.device)[t]
    return out.reshape((-1,) + (1,) * (like.ndim - 1))
