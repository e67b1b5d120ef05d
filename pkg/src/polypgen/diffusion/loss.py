"""Noise-prediction training loss with the mask-weighted lesion term.

L_mse averages the squared prediction error over every latent entry.
L_lg applies the latent mask inside the norm before averaging over the
same entry count, so it amplifies masked regions without changing the
denominator. The combined loss is L_mse + lam * L_lg.
"""

import numpy as np


def compute_loss(pred: np.ndarray, eps_true: np.ndarray, m: np.ndarray, lam: float):
    """Returns (L_mse, L_lg, L_total); total is affine in lam with slope L_lg."""
    if pred.shape != eps_true.shape:
        raise ValueError(f"prediction shape {pred.shape} != noise shape {eps_true.shape}")
    if lam < 0:
        raise ValueError(f"lesion weight must be >= 0, got {lam}")
    mb = np.asarray(m, dtype=np.float64)
    if mb.shape != pred.shape[-2:]:
        raise ValueError(f"mask shape {mb.shape} not broadcastable over {pred.shape}")
    diff = eps_true - pred
    l_mse = float(np.mean(diff**2))
    l_lg = float(np.mean((mb * diff) ** 2))
    return l_mse, l_lg, l_mse + lam * l_lg


def loss_output_grad(pred: np.ndarray, eps_true: np.ndarray, m: np.ndarray, lam: float):
    """d(L_total)/d(pred) for a single sample."""
    mb = np.asarray(m, dtype=np.float64)
    n = pred.size
    return (2.0 / n) * (1.0 + lam * mb * mb) * (pred - eps_true)
