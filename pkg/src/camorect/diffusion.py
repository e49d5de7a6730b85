"""Gaussian diffusion over segmentation masks.

Forward noising, the closed-form posterior of the forward chain, ancestral
sampling with an x0-predicting denoiser, and a diagonal-Gaussian KL.

Timesteps are 1-based throughout: ``t`` ranges over ``1..T`` and
``alpha_bar`` at ``t = 0`` is taken to be 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch

__all__ = [
    "NoiseSchedule",
    "NoisyMask",
    "make_schedule",
    "forward_noise",
    "posterior_params",
    "ancestral_step",
    "sampling_timesteps",
    "sample",
    "kl_gaussian",
    "mask_to_signal",
    "signal_to_mask",
]

SCHEDULE_KINDS = ("linear", "cosine")


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    kind: str
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def abar(self, t: int) -> float:
        """alpha_bar at 1-based ``t``; ``abar(0) == 1``."""
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def check_t(self, t) -> None:
        if isinstance(t, torch.Tensor):
            lo, hi = int(t.min()), int(t.max())
        else:
            lo = hi = int(t)
        if lo < 1 or hi > self.T:
            raise ValueError(f"timestep out of range [1, {self.T}]: {t}")


@dataclass
class NoisyMask:
    values: torch.Tensor
    t: int | torch.Tensor


def make_schedule(
    T: int, kind: str = "linear", beta_min: float = 1e-4, beta_max: float = 0.02
) -> NoiseSchedule:
    """Build a noise schedule.

    ``linear`` spaces beta evenly over ``[beta_min, beta_max]``; ``cosine``
    uses the squared-cosine alpha_bar curve with offset 0.008 and betas
    capped at 0.999.
    """
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if kind == "linear":
        if not 0 < beta_min <= beta_max < 1:
            raise ValueError("need 0 < beta_min <= beta_max < 1")
        beta = np.linspace(beta_min, beta_max, T, dtype=np.float64)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        ab = f / f[0]
        beta = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(T=int(T), kind=kind, beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def _gather(values: np.ndarray, t, like: torch.Tensor) -> torch.Tensor | float:
    # per-sample timesteps broadcast over trailing dims of ``like``
    if isinstance(t, torch.Tensor):
        v = torch.tensor(np.asarray(values), dtype=like.dtype, device=like.device)[t.long() - 1]
        return v.reshape(-1, *([1] * (like.dim() - 1)))
    return float(values[int(t) - 1])


def forward_noise(x0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> NoisyMask:
    """Sample q(x_t | x_0) given the Gaussian draw ``eps``.

    ``t`` is either an int or a LongTensor with one timestep per batch
    element (leading dim of ``x0``).
    """
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    schedule.check_t(t)
    ab = _gather(schedule.alpha_bar, t, x0)
    if isinstance(ab, float):
        values = math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
    else:
        values = ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps
    return NoisyMask(values=values, t=t)


def _posterior_coefs(t: int, prev_t: int, schedule: NoiseSchedule) -> tuple[float, float, float]:
    ab_t = schedule.abar(t)
    ab_s = schedule.abar(prev_t)
    a_ts = ab_t / ab_s
    b_ts = 1.0 - a_ts
    c_x0 = math.sqrt(ab_s) * b_ts / (1.0 - ab_t)
    c_xt = math.sqrt(a_ts) * (1.0 - ab_s) / (1.0 - ab_t)
    var = b_ts * (1.0 - ab_s) / (1.0 - ab_t)
    return float(c_x0), float(c_xt), float(var)


def posterior_params(
    x0: torch.Tensor,
    xt: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    prev_t: int | None = None,
) -> tuple[torch.Tensor, float]:
    """Mean and variance of q(x_{prev_t} | x_t, x_0).

    ``prev_t`` defaults to ``t - 1``; a smaller value gives the posterior
    used when sampling on a strided subset of timesteps.
    """
    t = int(t)
    if t < 2:
        raise ValueError(f"posterior_params needs t >= 2, got {t}")
    schedule.check_t(t)
    prev_t = t - 1 if prev_t is None else int(prev_t)
    if not 1 <= prev_t < t:
        raise ValueError(f"prev_t must lie in [1, t), got {prev_t}")
    if x0.shape != xt.shape:
        raise ValueError(f"x0 shape {tuple(x0.shape)} != xt shape {tuple(xt.shape)}")
    c_x0, c_xt, var = _posterior_coefs(t, prev_t, schedule)
    return c_x0 * x0 + c_xt * xt, var


def ancestral_step(
    xt: torch.Tensor,
    x0_pred: torch.Tensor,
    t: int,
    schedule: NoiseSchedule,
    noise: torch.Tensor,
    prev_t: int | None = None,
) -> torch.Tensor:
    """One reverse step x_t -> x_{prev_t}; at ``t == 1`` returns ``x0_pred``."""
    if noise.shape != xt.shape or x0_pred.shape != xt.shape:
        raise ValueError("xt, x0_pred and noise must share a shape")
    schedule.check_t(t)
    if int(t) == 1:
        return x0_pred
    mean, var = posterior_params(x0_pred, xt, t, schedule, prev_t)
    return mean + math.sqrt(var) * noise


def sampling_timesteps(steps: int, T: int) -> list[int]:
    """Evenly spaced decreasing timesteps from T down to 1 (inclusive)."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if steps > T:
        raise ValueError(f"steps ({steps}) exceeds T ({T})")
    if steps == 1:
        return [T]
    grid = np.linspace(T, 1, steps)
    return [int(v) for v in np.floor(grid + 0.5)]


def mask_to_signal(mask: torch.Tensor) -> torch.Tensor:
    """{0,1} masks to the [-1, 1] diffusion domain."""
    return mask * 2.0 - 1.0


def signal_to_mask(x: torch.Tensor) -> torch.Tensor:
    return ((x + 1.0) / 2.0).clamp(0.0, 1.0)


@torch.no_grad()
def sample(
    denoiser: Callable,
    condition,
    steps: int,
    shape: Sequence[int],
    rng_seed: int,
    schedule: NoiseSchedule,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Mask-free ancestral sampling.

    ``denoiser(x_t, t, condition)`` must return the x0 estimate in the
    [-1, 1] signal domain. The chain starts from standard normal noise drawn
    from a generator seeded with ``rng_seed``; the result is mapped back to
    a [0, 1] probability map.
    """
    ts = sampling_timesteps(steps, schedule.T)
    gen = torch.Generator().manual_seed(int(rng_seed))
    x = torch.randn(tuple(shape), generator=gen, dtype=dtype)
    x0_pred = x
    for i, t in enumerate(ts):
        x0_pred = denoiser(x, t, condition)
        if i == len(ts) - 1:
            break
        noise = torch.randn(tuple(shape), generator=gen, dtype=dtype)
        x = ancestral_step(x, x0_pred, t, schedule, noise, prev_t=ts[i + 1])
    return signal_to_mask(x0_pred)


def kl_gaussian(mu1, var1, mu2, var2) -> torch.Tensor:
    """KL(N(mu1, var1) || N(mu2, var2)) for diagonal Gaussians, summed."""
    mu1, var1, mu2, var2 = (torch.as_tensor(v, dtype=torch.float64) for v in (mu1, var1, mu2, var2))
    mu1, var1, mu2, var2 = torch.broadcast_tensors(mu1, var1, mu2, var2)
    if (var1 <= 0).any() or (var2 <= 0).any():
        raise ValueError("variances must be strictly positive")
    kl = 0.5 * (torch.log(var2 / var1) + (var1 + (mu1 - mu2) ** 2) / var2 - 1.0)
    return kl.sum()
