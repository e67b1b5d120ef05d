"""Binary portable graymap (P5, 8-bit) reading and writing.

Images are float rasters in [0, 1]; on disk each pixel is round(v * 255).
Masks use the two values {0, 255}.
"""

import numpy as np

from .errors import FormatError
from .util import atomic_write_bytes


def encode_pgm(image: np.ndarray) -> bytes:
    if image.ndim != 2:
        raise ValueError(f"expected a 2-d raster, got shape {image.shape}")
    data = np.rint(np.asarray(image, dtype=np.float64) * 255.0)
    if data.min() < 0 or data.max() > 255:
        raise ValueError("pixel values must lie in [0, 1]")
    h, w = image.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + data.astype(np.uint8).tobytes()


def write_pgm(path, image: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pgm(image))


def write_mask_pgm(path, mask: np.ndarray) -> None:
    write_pgm(path, np.asarray(mask, dtype=bool).astype(np.float64))


def _tokens(data: bytes, path):
    """Yield whitespace-separated header tokens, skipping '#' comments."""
    i = 0
    n = len(data)
    while True:
        while i < n and data[i : i + 1].isspace():
            i += 1
        if i < n and data[i : i + 1] == b"#":
            while i < n and data[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not data[i : i + 1].isspace():
            i += 1
        if start == i:
            raise FormatError(f"{path}: truncated graymap header")
        yield data[start:i], i


def read_pgm(path) -> np.ndarray:
    """Read a P5 graymap into a float64 raster in [0, 1]."""
    with open(path, "rb") as fh:
        data = fh.read()
    toks = _tokens(data, path)
    magic, _ = next(toks)
    if magic != b"P5":
        raise FormatError(f"{path}: not a binary graymap (magic {magic!r})")
    try:
        w = int(next(toks)[0])
        h = int(next(toks)[0])
        maxval, end = next(toks)
        maxval = int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: bad graymap header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval}")
    pixels = data[end + 1 : end + 1 + h * w]
    if len(pixels) != h * w:
        raise FormatError(f"{path}: expected {h * w} pixel bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def read_mask_pgm(path) -> np.ndarray:
    return read_pgm(path) > 0.5
