"""Procedural stand-in dataset: smooth textures with bright lesion blobs.

Every sample is a grayscale raster in [0, 1] whose values are exact
multiples of 1/255, so graymap round-trips are bit-exact. Polyp samples
carry an axis-aligned bounding box around the blob and satisfy a
separability guarantee: mean intensity inside the box exceeds the mean
outside by at least half the blob intensity.
"""

import enum
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigurationError, ManifestError
from .pgm import read_pgm, write_pgm
from .util import atomic_write_text


class Label(str, enum.Enum):
    POLYP = "polyp"
    NORMAL = "normal"


@dataclass
class DatasetSample:
    image_id: str
    image: np.ndarray  # (H, W) float64 in [0, 1]
    label: Label
    bbox: Optional[tuple[int, int, int, int]] = None  # (x0, y0, x1, y1)

    def validate(self) -> None:
        h, w = self.image.shape
        if self.image.min() < 0.0 or self.image.max() > 1.0:
            raise ValueError(f"{self.image_id}: pixel values outside [0, 1]")
        if self.label is Label.NORMAL:
            if self.bbox is not None:
                raise ValueError(f"{self.image_id}: normal sample with a bbox")
            return
        if self.bbox is None:
            raise ValueError(f"{self.image_id}: polyp sample without a bbox")
        x0, y0, x1, y1 = self.bbox
        if not (0 <= x0 < x1 <= w and 0 <= y0 < y1 <= h):
            raise ValueError(f"{self.image_id}: bbox {self.bbox} outside {w}x{h} raster")


@dataclass
class SynthConfig:
    count: int
    resolution: tuple[int, int] = (64, 64)  # (H, W), multiples of 8
    polyp_fraction: float = 0.5
    seed: int = 0
    blob_intensity: float = 0.35
    texture_smoothness: int = 3

    def validate(self) -> None:
        h, w = self.resolution
        if h % 8 or w % 8:
            raise ConfigurationError(f"resolution {h}x{w} must be divisible by 8")
        if self.count < 1:
            raise ConfigurationError("count must be >= 1")
        if not 0.0 <= self.polyp_fraction <= 1.0:
            raise ConfigurationError("polyp_fraction must lie in [0, 1]")
        if self.blob_intensity <= 0:
            raise ConfigurationError("blob_intensity must be positive")
        if self.texture_smoothness < 1:
            raise ConfigurationError("texture_smoothness must be >= 1")


def _background(rng, h, w, cutoff):
    """Low-pass filtered white noise rescaled to [0.15, 0.6]."""
    noise = rng.standard_normal((h, w))
    spec = np.fft.fft2(noise)
    fy = np.minimum(np.arange(h), h - np.arange(h))
    fx = np.minimum(np.arange(w), w - np.arange(w))
    keep = (fy[:, None] <= cutoff) & (fx[None, :] <= cutoff)
    tex = np.fft.ifft2(spec * keep).real
    lo, hi = tex.min(), tex.max()
    if hi - lo < 1e-12:
        tex = np.zeros_like(tex)
    else:
        tex = (tex - lo) / (hi - lo)
    return 0.15 + 0.45 * tex


def _blob(rng, h, w, intensity):
    """Render one plateau-profile anisotropic bump; returns (field, bbox)."""
    side = min(h, w)
    cy = rng.uniform(0.25, 0.75) * h
    cx = rng.uniform(0.25, 0.75) * w
    sy = rng.uniform(max(side / 16.0, 1.2), max(side / 9.0, 1.6))
    sx = rng.uniform(max(side / 16.0, 1.2), max(side / 9.0, 1.6))
    theta = rng.uniform(0.0, math.pi)
    ct, st = math.cos(theta), math.sin(theta)

    ys = np.arange(h)[:, None] + 0.5 - cy
    xs = np.arange(w)[None, :] + 0.5 - cx
    u = (ct * xs + st * ys) / sx
    v = (-st * xs + ct * ys) / sy
    r2 = u * u + v * v
    field = intensity * np.exp(-((r2 / 4.0) ** 3))

    # 2-sigma extent of the rotated ellipse, clipped to the raster.
    ex = 2.0 * math.sqrt((sx * ct) ** 2 + (sy * st) ** 2)
    ey = 2.0 * math.sqrt((sx * st) ** 2 + (sy * ct) ** 2)
    x0 = max(int(math.floor(cx - ex)), 0)
    x1 = min(int(math.ceil(cx + ex)), w)
    y0 = max(int(math.floor(cy - ey)), 0)
    y1 = min(int(math.ceil(cy + ey)), h)
    if x1 <= x0 or y1 <= y0:
        return None, None
    return field, (x0, y0, x1, y1)


def _separable(image, bbox, margin):
    x0, y0, x1, y1 = bbox
    inside = image[y0:y1, x0:x1]
    total = image.sum()
    n_in = inside.size
    n_out = image.size - n_in
    if n_out == 0:
        return False
    mean_in = inside.mean()
    mean_out = (total - inside.sum()) / n_out
    return mean_in - mean_out >= margin


def generate_dataset(cfg: SynthConfig) -> list[DatasetSample]:
    """Generate cfg.count samples; a pure function of cfg."""
    cfg.validate()
    h, w = cfg.resolution
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n_polyp = int(round(cfg.count * cfg.polyp_fraction))
    is_polyp = np.zeros(cfg.count, dtype=bool)
    is_polyp[rng.permutation(cfg.count)[:n_polyp]] = True

    samples = []
    width = len(str(max(cfg.count - 1, 1)))
    for i in range(cfg.count):
        for attempt in range(50):
            bg = _background(rng, h, w, cfg.texture_smoothness)
            if not is_polyp[i]:
                image = np.rint(bg * 255.0) / 255.0
                bbox = None
                break
            field, bbox = _blob(rng, h, w, cfg.blob_intensity)
            if field is None:
                continue
            image = np.rint(np.clip(bg + field, 0.0, 1.0) * 255.0) / 255.0
            if _separable(image, bbox, cfg.blob_intensity / 2.0):
                break
        else:
            raise ConfigurationError(
                f"could not render a separable blob at {h}x{w} after 50 attempts"
            )
        label = Label.POLYP if is_polyp[i] else Label.NORMAL
        sample = DatasetSample(f"s{i:0{width}d}", image, label, bbox)
        sample.validate()
        samples.append(sample)
    return samples


def write_manifest(samples, out_dir) -> str:
    """Write graymaps plus a line-per-sample manifest; returns the manifest path.

    Record layout: id, relative image path, label, and for polyp samples a
    fourth field ``x0,y0,x1,y1``. Fields are tab-separated.
    """
    out_dir = os.fspath(out_dir)
    img_dir = os.path.join(out_dir, "images")
    os.makedirs(img_dir, exist_ok=True)
    lines = []
    for s in samples:
        s.validate()
        rel = os.path.join("images", f"{s.image_id}.pgm")
        write_pgm(os.path.join(out_dir, rel), s.image)
        fields = [s.image_id, rel, s.label.value]
        if s.bbox is not None:
            fields.append(",".join(str(v) for v in s.bbox))
        lines.append("\t".join(fields))
    path = os.path.join(out_dir, "manifest.txt")
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return path


def read_manifest(path) -> list[DatasetSample]:
    """Parse a manifest and load its images; empty file gives an empty list."""
    base = os.path.dirname(os.path.abspath(os.fspath(path)))
    samples = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) not in (3, 4):
                raise ManifestError(f"{path}:{lineno}: expected 3 or 4 fields, got {len(fields)}")
            image_id, rel, label_str = fields[:3]
            try:
                label = Label(label_str)
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: unknown label {label_str!r}") from None
            bbox = None
            if len(fields) == 4:
                try:
                    parts = tuple(int(v) for v in fields[3].split(","))
                except ValueError:
                    raise ManifestError(f"{path}:{lineno}: malformed bbox {fields[3]!r}") from None
                if len(parts) != 4:
                    raise ManifestError(f"{path}:{lineno}: bbox needs 4 coordinates")
                bbox = parts
            image = read_pgm(os.path.join(base, rel))
            sample = DatasetSample(image_id, image, label, bbox)
            try:
                sample.validate()
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            samples.append(sample)
    return samples
