"""Mask-conditioned inpainting samplers.

Both samplers walk an evenly strided subset of the schedule. The masked
image latent and the latent mask are computed once and held fixed as
conditioning; after decoding, every pixel outside the mask is restored
from the input image, so the background is preserved bit-exactly.
"""

import numpy as np

from ..codec import decode, downsample_mask, encode, latent_bounds
from .model import DenoiserModel
from .schedule import Schedule

_Z0_LO, _Z0_HI = latent_bounds()


def timestep_subset(T: int, steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if steps > T:
        raise ValueError(f"steps {steps} exceeds schedule length {T}")
    return np.floor(np.arange(steps) * (T / steps)).astype(int)


def reverse_step(z, eps_hat, a_t, a_prev, sigma=0.0, noise=0.0):
    """One reverse update from alpha_bar a_t to a_prev.

    With sigma=0 this is the deterministic update; a_prev=1 inverts the
    forward jump exactly when eps_hat is the true noise. The predicted
    clean latent is clamped to the coefficient range reachable by valid
    images, which keeps early-step trajectories from blowing up through
    the 1/sqrt(a_t) factor.
    """
    z0_hat = (z - np.sqrt(1.0 - a_t) * eps_hat) / np.sqrt(a_t)
    z0_hat = np.clip(z0_hat, _Z0_LO, _Z0_HI)
    dir_coeff = np.sqrt(max(1.0 - a_prev - sigma**2, 0.0))
    return np.sqrt(a_prev) * z0_hat + dir_coeff * eps_hat + sigma * noise


def _sample(model: DenoiserModel, sched: Schedule, image, mask, prompt,
            steps: int, seed: int, eta: float) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != image.shape:
        raise ValueError(f"mask shape {mask.shape} != image shape {image.shape}")
    if not mask.any():
        return image.copy()

    z_masked = encode(image * ~mask)
    m_lat = downsample_mask(mask)
    rng = np.random.Generator(np.random.PCG64(seed))
    z = rng.standard_normal((4,) + m_lat.shape)

    ts = timestep_subset(sched.T, steps)
    for i in range(steps - 1, -1, -1):
        t = int(ts[i])
        a_t = sched.alpha_bar[t]
        a_prev = sched.alpha_bar[int(ts[i - 1])] if i > 0 else 1.0
        eps_hat = model.forward(z, z_masked, m_lat, prompt, t)
        if eta > 0.0 and i > 0:
            sigma = eta * np.sqrt((1.0 - a_prev) / (1.0 - a_t)) * np.sqrt(1.0 - a_t / a_prev)
            noise = rng.standard_normal(z.shape)
        else:
            sigma, noise = 0.0, 0.0
        z = reverse_step(z, eps_hat, a_t, a_prev, sigma, noise)

    generated = decode(z, clip=True)
    return np.where(mask, generated, image)


def ddim_sample(model, sched, image, mask, prompt, steps: int = 50, seed: int = 0):
    """Deterministic sampler (no per-step noise)."""
    return _sample(model, sched, image, mask, prompt, steps, seed, eta=0.0)


def ddpm_sample(model, sched, image, mask, prompt, steps: int = 0, seed: int = 0):
    """Stochastic ancestral sampler; steps=0 means every schedule step."""
    return _sample(model, sched, image, mask, prompt, steps or sched.T, seed, eta=1.0)
