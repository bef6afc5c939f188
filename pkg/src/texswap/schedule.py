"""Discrete diffusion timestep table and the forward noising process."""

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class NoiseSchedule:
    T: int
    beta: np.ndarray  # (T,)
    alpha_bar: np.ndarray  # (T,) cumulative products of (1 - beta)

    def alpha_bar_t(self, t):
        """alpha_bar for 1-based timesteps ``t`` (int, array, or tensor)."""
        if torch.is_tensor(t):
            ab = torch.from_numpy(self.alpha_bar).to(t.device)
            return ab[t.long() - 1]
        return self.alpha_bar[np.asarray(t) - 1]


def make_schedule(T=1000, beta_start=1e-4, beta_end=0.02):
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"invalid beta range ({beta_start}, {beta_end})")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - beta)
    return NoiseSchedule(T=T, beta=beta, alpha_bar=alpha_bar)


def forward_diffuse(z0, t, eps, sched):
    """z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) eps, t one-based.

    ``t`` may be a scalar or a per-item tensor of shape (B,).
    """
    if eps.shape != z0.shape:
        raise ValueError(f"noise shape {tuple(eps.shape)} != target shape {tuple(z0.shape)}")
    if torch.is_tensor(t):
        if torch.any(t < 1) or torch.any(t > sched.T):
            raise ValueError("t outside [1, T]")
        ab = sched.alpha_bar_t(t).to(z0.dtype)
        while ab.dim() < z0.dim():
            ab = ab.unsqueeze(-1)
    else:
        if not (1 <= int(t) <= sched.T):
            raise ValueError(f"t={t} outside [1, {sched.T}]")
        ab = torch.tensor(float(sched.alpha_bar[int(t) - 1]), dtype=z0.dtype)
    return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps
