"""Forward-diffusion schedule and the deterministic reverse sampler.

Timesteps are 1-indexed: step t in [1, T] uses the t-th beta, and the
cumulative product array keeps slot 0 = 1 so "no noise yet" is addressable.
The sampler is the zero-noise deterministic update (predict the clean latent
from the model's noise estimate, re-noise to the previous grid point), which
makes a planted perfect denoiser recover its latent exactly.
"""

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import ShapeError


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray          # (T,), float64
    alpha_bars: np.ndarray     # (T+1,), float64, alpha_bars[0] == 1.0

    @staticmethod
    def linear(timesteps: int = 1000, beta_start: float = 1e-4, beta_end: float = 2e-2) -> "NoiseSchedule":
        if timesteps < 1:
            raise ShapeError(f"schedule needs at least one step, got {timesteps}")
        if not (0.0 < beta_start <= beta_end < 1.0):
            raise ShapeError(
                f"betas must satisfy 0 < start <= end < 1, got ({beta_start}, {beta_end})"
            )
        betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
        alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return NoiseSchedule(betas=betas, alpha_bars=alpha_bars)

    @staticmethod
    def from_betas(betas: np.ndarray) -> "NoiseSchedule":
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ShapeError("betas must be a non-empty 1-d array")
        if not ((betas > 0).all() and (betas < 1).all() and (np.diff(betas) >= 0).all()):
            raise ShapeError("betas must be nondecreasing and inside (0, 1)")
        alpha_bars = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
        return NoiseSchedule(betas=betas, alpha_bars=alpha_bars)

    @property
    def timesteps(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t) -> np.ndarray:
        """Cumulative signal fraction at step t (scalar or integer array)."""
        t = np.asarray(t)
        if ((t < 0) | (t > self.timesteps)).any():
            raise ShapeError(f"timestep out of range [0, {self.timesteps}]: {t}")
        return self.alpha_bars[t]


def forward_diffuse(z0: torch.Tensor, t, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, t in [1, T]."""
    if eps.shape != z0.shape:
        raise ShapeError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.int64))
    if ((t_arr < 1) | (t_arr > schedule.timesteps)).any():
        raise ShapeError(f"timestep must be in [1, {schedule.timesteps}], got {t}")
    abar = schedule.alpha_bars[t_arr]
    shape = (-1,) + (1,) * (z0.ndim - 1) if t_arr.size > 1 else ()
    sa = torch.from_numpy(np.sqrt(abar)).to(z0.dtype)
    sn = torch.from_numpy(np.sqrt(1.0 - abar)).to(z0.dtype)
    if shape:
        sa, sn = sa.reshape(shape), sn.reshape(shape)
    return sa * z0 + sn * eps


def ddim_timesteps(timesteps: int, steps: int) -> list[int]:
    """Descending grid from T toward 1, `steps` points, endpoints included."""
    if steps < 1:
        raise ShapeError(f"sampler needs steps >= 1, got {steps}")
    grid = np.linspace(timesteps, 1, num=min(steps, timesteps))
    out = []
    for v in np.round(grid).astype(int):
        if not out or v < out[-1]:
            out.append(int(v))
    return out


def ddim_sample(
    denoise_fn,
    z_init: torch.Tensor,
    schedule: NoiseSchedule,
    steps: int,
) -> torch.Tensor:
    """Run the deterministic reverse process from z_T = z_init.

    denoise_fn(z_t, t:int) must return the noise estimate with z_t's shape.
    """
    z = z_init
    ts = ddim_timesteps(schedule.timesteps, steps)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        eps = denoise_fn(z, t)
        if eps.shape != z.shape:
            raise ShapeError(
                f"denoiser returned shape {tuple(eps.shape)}, expected {tuple(z.shape)}"
            )
        ab_t = float(schedule.alpha_bars[t])
        ab_p = float(schedule.alpha_bars[t_prev])
        z0_hat = (z - np.sqrt(1.0 - ab_t) * eps) / np.sqrt(ab_t)
        z = np.sqrt(ab_p) * z0_hat + np.sqrt(1.0 - ab_p) * eps
    return z


def diffusion_loss(eps: torch.Tensor, eps_hat: torch.Tensor) -> torch.Tensor:
    """Mean squared error between true and estimated noise."""
    if eps.shape != eps_hat.shape:
        raise ShapeError(f"shape mismatch: {tuple(eps.shape)} vs {tuple(eps_hat.shape)}")
    return torch.mean((eps - eps_hat) ** 2)
