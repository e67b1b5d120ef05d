"""Built-in feature sources for desk-scale runs.

patch_features turns an image into a dense grid of per-patch transform
coefficients (zigzag-ordered, so channel 0 is the patch mean scale). The
probability classifier is a tiny logistic model over three whole-image
statistics, good enough to score class clarity and variety on synthetic
data.
"""

from dataclasses import dataclass

import numpy as np

from .codec import _dct_matrix
from .featstore import FeatureGrid
from .synth import Label


def zigzag_indices(n: int) -> list[tuple[int, int]]:
    """Antidiagonal traversal of an n x n grid, alternating direction."""
    out = []
    for s in range(2 * n - 1):
        cells = [(i, s - i) for i in range(max(0, s - n + 1), min(s, n - 1) + 1)]
        out.extend(cells if s % 2 else cells[::-1])
    return out


def patch_features(image: np.ndarray, image_id: str, patch_size: int = 8,
                   channels: int = 8) -> FeatureGrid:
    """Per-patch orthonormal transform coefficients, lowest frequencies first."""
    image = np.asarray(image, dtype=np.float64)
    p = patch_size
    h, w = image.shape
    if p < 1 or h % p or w % p:
        raise ValueError(f"image dims {h}x{w} not divisible by patch {p}")
    if not 1 <= channels <= p * p:
        raise ValueError(f"channels must lie in [1, {p * p}]")
    mat = _dct_matrix(p)
    blocks = image.reshape(h // p, p, w // p, p).transpose(0, 2, 1, 3)
    spectra = np.einsum("ab,ijbc,dc->ijad", mat, blocks, mat, optimize=True)
    order = zigzag_indices(p)[:channels]
    grid = np.stack([spectra[:, :, r, c] for r, c in order], axis=-1)
    return FeatureGrid(image_id, p, grid.astype(np.float32), (h, w))


def _image_stats(image: np.ndarray) -> np.ndarray:
    """(mean, variance, brightest-block contrast) for one image."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    p = 8 if (h % 8 == 0 and w % 8 == 0) else 1
    block_means = image.reshape(h // p, p, w // p, p).mean(axis=(1, 3))
    return np.array([image.mean(), image.var(), block_means.max() - image.mean()])


@dataclass
class ProbClassifier:
    weights: np.ndarray  # (3,)
    bias: float
    feat_mean: np.ndarray
    feat_scale: np.ndarray

    def probs(self, image: np.ndarray) -> np.ndarray:
        """[p_polyp, p_normal] for one image."""
        z = (_image_stats(image) - self.feat_mean) / self.feat_scale
        logit = float(self.weights @ z + self.bias)
        p = 1.0 / (1.0 + np.exp(-logit))
        return np.array([p, 1.0 - p])


def fit_prob_classifier(samples, iters: int = 500, lr: float = 0.5) -> ProbClassifier:
    """Gradient-descent logistic fit (polyp=1) on labeled samples."""
    feats = np.array([_image_stats(s.image) for s in samples])
    y = np.array([1.0 if s.label is Label.POLYP else 0.0 for s in samples])
    mean = feats.mean(axis=0)
    scale = feats.std(axis=0)
    scale[scale < 1e-9] = 1.0
    z = (feats - mean) / scale
    w = np.zeros(3)
    b = 0.0
    n = len(samples)
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(z @ w + b)))
        grad_logit = (p - y) / n
        w -= lr * (z.T @ grad_logit)
        b -= lr * float(grad_logit.sum())
    return ProbClassifier(w, b, mean, scale)
