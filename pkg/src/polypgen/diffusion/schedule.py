"""Variance-preserving noise schedule and the closed-form forward jump."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Schedule:
    betas: np.ndarray
    alphas: np.ndarray = field(init=False)
    alpha_bar: np.ndarray = field(init=False)
    step_alpha: np.ndarray = field(init=False)  # sqrt(1 - beta_t), single-step gain
    step_sigma: np.ndarray = field(init=False)  # sqrt(beta_t), single-step noise scale

    def __post_init__(self):
        self.betas = np.asarray(self.betas, dtype=np.float64)
        self.alphas = 1.0 - self.betas
        self.alpha_bar = np.cumprod(self.alphas)
        self.step_alpha = np.sqrt(self.alphas)
        self.step_sigma = np.sqrt(self.betas)

    @property
    def T(self) -> int:
        return len(self.betas)


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> Schedule:
    """Linear beta schedule with cumulative-product alpha_bar."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    return Schedule(np.linspace(beta_start, beta_end, T))


def forward_diffuse(z0: np.ndarray, t: int, eps: np.ndarray, sched: Schedule) -> np.ndarray:
    """Jump straight to step t: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.

    Algebraically equal to composing the per-step recursion
    z_t = step_alpha[t] z_{t-1} + step_sigma[t] eps_t over t+1 steps.
    """
    if eps.shape != z0.shape:
        raise ValueError(f"noise shape {eps.shape} != latent shape {z0.shape}")
    if not 0 <= t < sched.T:
        raise ValueError(f"t={t} outside [0, {sched.T})")
    abar = sched.alpha_bar[t]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps
