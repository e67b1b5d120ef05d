"""Fixed latent codec: 8x downsampling to 4 channels via block transform.

Each non-overlapping 8x8 block is mapped through the orthonormal 2-D
DCT-II and only the four lowest coefficients (0,0), (0,1), (1,0), (1,1)
are kept, giving an (4, H/8, W/8) latent. Decoding inverts the transform
with the discarded coefficients at zero, so decode(encode(x)) is the
orthogonal projection of x onto the retained subspace.
"""

import numpy as np

BLOCK = 8
CHANNELS = 4
_COEFFS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _dct_matrix(n: int) -> np.ndarray:
    k = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    mat = np.cos(np.pi * (2 * x + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    return mat


_DCT = _dct_matrix(BLOCK)


def _blocks(image: np.ndarray) -> np.ndarray:
    h, w = image.shape
    return image.reshape(h // BLOCK, BLOCK, w // BLOCK, BLOCK).transpose(0, 2, 1, 3)


def encode(image: np.ndarray) -> np.ndarray:
    """Image (H, W) -> latent (4, H/8, W/8)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or image.shape[0] % BLOCK or image.shape[1] % BLOCK:
        raise ValueError(f"image dims {image.shape} must be 2-d and divisible by {BLOCK}")
    spectra = np.einsum("ab,ijbc,dc->ijad", _DCT, _blocks(image), _DCT, optimize=True)
    return np.ascontiguousarray(
        np.stack([spectra[:, :, r, c] for r, c in _COEFFS], axis=0)
    )


def decode(latent: np.ndarray, clip: bool = True) -> np.ndarray:
    """Latent (4, h, w) -> image (8h, 8w), clamped to [0, 1] unless clip=False."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 3 or latent.shape[0] != CHANNELS:
        raise ValueError(f"latent shape {latent.shape} must be (4, h, w)")
    _, hb, wb = latent.shape
    spectra = np.zeros((hb, wb, BLOCK, BLOCK))
    for ch, (r, c) in enumerate(_COEFFS):
        spectra[:, :, r, c] = latent[ch]
    blocks = np.einsum("ba,ijbc,cd->ijad", _DCT, spectra, _DCT, optimize=True)
    image = blocks.transpose(0, 2, 1, 3).reshape(hb * BLOCK, wb * BLOCK)
    if clip:
        image = np.clip(image, 0.0, 1.0)
    return image


def latent_bounds() -> tuple[np.ndarray, np.ndarray]:
    """Per-channel coefficient range achievable by any image in [0, 1].

    Every encode() output lies inside this box, so clamping to it never
    disturbs a latent that came from a valid image.
    """
    lo = np.empty((CHANNELS, 1, 1))
    hi = np.empty((CHANNELS, 1, 1))
    for ch, (r, c) in enumerate(_COEFFS):
        basis = np.outer(_DCT[r], _DCT[c])
        hi[ch] = basis[basis > 0].sum()
        lo[ch] = basis[basis < 0].sum() if (basis < 0).any() else 0.0
    return lo, hi


def downsample_mask(mask: np.ndarray) -> np.ndarray:
    """Pixel mask -> latent-grid mask; a cell is set iff any pixel of its
    8x8 block is set (conservative: no inpainting region is lost)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.shape[0] % BLOCK or mask.shape[1] % BLOCK:
        raise ValueError(f"mask dims {mask.shape} must be 2-d and divisible by {BLOCK}")
    return _blocks(mask).any(axis=(2, 3))
