"""Pseudo-mask geometry: inscribed convex polygons, rasterization, and the
three training-pair mask modes (polygon inside the box for polyp prompts,
rectangles away from or anywhere on the raster for normal prompts)."""

from dataclasses import dataclass

import numpy as np

from .errors import PlacementError
from .synth import DatasetSample, Label

Prompt = Label  # the text condition takes the same two values as the label


def cross2(a, b) -> float:
    """z component of the 2-d cross product."""
    return float(a[0] * b[1] - a[1] * b[0])


@dataclass
class Polygon:
    vertices: np.ndarray  # (n, 2) float64, ordered (x, y)

    def validate(self) -> None:
        v = self.vertices
        if v.ndim != 2 or v.shape[1] != 2 or v.shape[0] < 3:
            raise ValueError("polygon needs at least 3 (x, y) vertices")
        n = v.shape[0]
        crosses = []
        for i in range(n):
            a, b, c = v[i], v[(i + 1) % n], v[(i + 2) % n]
            if np.array_equal(a, b):
                raise ValueError("polygon has repeated vertices")
            crosses.append(cross2(b - a, c - b))
        if any(c == 0.0 for c in crosses):
            raise ValueError("polygon has collinear vertices")
        if not (all(c > 0 for c in crosses) or all(c < 0 for c in crosses)):
            raise ValueError("polygon is not strictly convex")


@dataclass
class TrainingPair:
    image: np.ndarray
    mask: np.ndarray  # (H, W) bool, True = inpaint
    prompt: Prompt


def polygon_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, CCW, collinear points dropped."""
    pts = np.unique(points, axis=0)
    if pts.shape[0] < 3:
        return pts

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and cross2(out[-1] - out[-2], p - out[-2]) <= 0:
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _polygon_from_angles(bbox, angles, radii) -> np.ndarray:
    """Vertices on the bbox-inscribed ellipse at the given angles, scaled by
    the per-vertex radius factors."""
    x0, y0, x1, y1 = bbox
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    rx, ry = (x1 - x0) / 2.0, (y1 - y0) / 2.0
    angles = np.asarray(angles, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    return np.column_stack(
        (cx + radii * rx * np.cos(angles), cy + radii * ry * np.sin(angles))
    )


def sample_inscribed_convex_polygon(
    bbox, n_vertices: int, rng, min_area_frac: float = 0.1, max_tries: int = 64
) -> Polygon:
    """Random strictly convex polygon inside bbox covering >= 10% of its area."""
    x0, y0, x1, y1 = bbox
    if n_vertices < 3:
        raise ValueError(f"need at least 3 vertices, got {n_vertices}")
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"degenerate bbox {bbox}")
    box_area = (x1 - x0) * (y1 - y0)
    for _ in range(max_tries):
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, n_vertices))
        radii = rng.uniform(0.4, 0.95, n_vertices)
        hull = convex_hull(_polygon_from_angles(bbox, angles, radii))
        if hull.shape[0] < 3 or polygon_area(hull) < min_area_frac * box_area:
            continue
        poly = Polygon(hull)
        poly.validate()
        return poly
    raise PlacementError(f"no polygon with area >= {min_area_frac:.0%} of bbox in {max_tries} tries")


def rasterize_polygon(poly: Polygon, h: int, w: int) -> np.ndarray:
    """Scanline fill: a pixel is set iff its center lies in the polygon
    (boundary inclusive). Polygons outside the raster give an empty mask."""
    poly.validate()
    if h < 1 or w < 1:
        raise ValueError("raster dims must be >= 1")
    v = poly.vertices
    n = v.shape[0]
    mask = np.zeros((h, w), dtype=bool)
    ymin, ymax = v[:, 1].min(), v[:, 1].max()
    for row in range(h):
        yc = row + 0.5
        if yc < ymin or yc > ymax:
            continue
        xs = []
        for i in range(n):
            (px, py), (qx, qy) = v[i], v[(i + 1) % n]
            if py == qy:
                if py == yc:
                    xs.extend((px, qx))
                continue
            if min(py, qy) <= yc <= max(py, qy):
                xs.append(px + (yc - py) * (qx - px) / (qy - py))
        if not xs:
            continue
        lo, hi = min(xs), max(xs)
        first = int(np.ceil(lo - 0.5))
        last = int(np.floor(hi - 0.5))
        if last < 0 or first > w - 1:
            continue
        mask[row, max(first, 0) : min(last, w - 1) + 1] = True
    return mask


def bbox_mask(bbox, h: int, w: int) -> np.ndarray:
    x0, y0, x1, y1 = bbox
    mask = np.zeros((h, w), dtype=bool)
    mask[max(y0, 0) : min(y1, h), max(x0, 0) : min(x1, w)] = True
    return mask


def _random_rect_mask(rng, h, w):
    rh = int(round(rng.uniform(0.1, 0.4) * h))
    rw = int(round(rng.uniform(0.1, 0.4) * w))
    rh, rw = max(rh, 1), max(rw, 1)
    y = int(rng.integers(0, h - rh + 1))
    x = int(rng.integers(0, w - rw + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[y : y + rh, x : x + rw] = True
    return mask


def sample_training_pair(
    sample: DatasetSample, prompt: Prompt, rng, n_vertex_range=(5, 12), retries: int = 20
) -> TrainingPair:
    """Draw one (image, mask, prompt) pair.

    polyp prompt: convex polygon inscribed in the sample's bbox. normal
    prompt on a polyp sample: random rectangle disjoint from the bbox.
    normal prompt on a normal sample: random rectangle anywhere.
    """
    h, w = sample.image.shape
    if prompt is Prompt.POLYP:
        if sample.label is not Label.POLYP:
            raise ValueError("polyp prompt requires a polyp sample")
        for _ in range(retries):
            n = int(rng.integers(n_vertex_range[0], n_vertex_range[1] + 1))
            poly = sample_inscribed_convex_polygon(sample.bbox, n, rng)
            mask = rasterize_polygon(poly, h, w)
            if mask.any():  # a thin polygon can miss every pixel center
                return TrainingPair(sample.image, mask, prompt)
        raise PlacementError(f"no polygon covering a pixel center in bbox {sample.bbox}")
    if sample.label is Label.POLYP:
        box = bbox_mask(sample.bbox, h, w)
        for _ in range(retries):
            mask = _random_rect_mask(rng, h, w)
            if not (mask & box).any():
                return TrainingPair(sample.image, mask, prompt)
        raise PlacementError(f"no rectangle outside bbox {sample.bbox} in {retries} tries")
    return TrainingPair(sample.image, _random_rect_mask(rng, h, w), prompt)
