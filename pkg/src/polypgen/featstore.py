"""Dense patch-feature grids and the retrieval database file format.

An entry pairs the feature grid of a converted-to-normal image with the
polyp mask of its source image. Grids are stored at 32-bit precision,
row-major in (patch row, patch column, channel) order; masks are packed
row-major, most significant bit first, padded to a byte boundary at the
end of the raster.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .util import atomic_write_bytes

_MAGIC = b"PGFS"
_VERSION = 1


@dataclass
class FeatureGrid:
    image_id: str
    patch_size: int
    grid: np.ndarray  # (H_p, W_p, C) float32
    image_dims: tuple[int, int]  # (H, W)

    def __post_init__(self):
        self.grid = np.ascontiguousarray(self.grid, dtype=np.float32)

    def validate(self) -> None:
        h, w = self.image_dims
        p = self.patch_size
        if p < 1 or h % p or w % p:
            raise ValueError(f"{self.image_id}: dims {h}x{w} not divisible by patch {p}")
        hp, wp, c = self.grid.shape
        if (hp, wp) != (h // p, w // p):
            raise ValueError(f"{self.image_id}: grid {hp}x{wp} != {h // p}x{w // p}")
        if c < 1:
            raise ValueError(f"{self.image_id}: need at least one channel")
        if not np.isfinite(self.grid).all():
            raise ValueError(f"{self.image_id}: non-finite feature values")

    @property
    def n_patches(self) -> int:
        return self.grid.shape[0] * self.grid.shape[1]

    def vectors(self) -> np.ndarray:
        """Patches as an (N, C) float64 matrix, row-major patch order."""
        hp, wp, c = self.grid.shape
        return np.ascontiguousarray(self.grid.reshape(hp * wp, c), dtype=np.float64)


def global_feature(grid: FeatureGrid) -> np.ndarray:
    """Coordinate-wise mean over all patches (float64)."""
    return grid.grid.astype(np.float64).mean(axis=(0, 1))


@dataclass
class DatabaseEntry:
    entry_id: str
    features: FeatureGrid
    polyp_mask: np.ndarray  # (H, W) bool at pixel resolution
    global_feature: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.polyp_mask = np.asarray(self.polyp_mask, dtype=bool)
        if self.global_feature is None:
            self.global_feature = global_feature(self.features)

    def validate(self) -> None:
        self.features.validate()
        if self.polyp_mask.shape != self.features.image_dims:
            raise ValueError(
                f"{self.entry_id}: mask {self.polyp_mask.shape} != image dims "
                f"{self.features.image_dims}"
            )
        if not self.polyp_mask.any():
            raise ValueError(f"{self.entry_id}: empty polyp mask")
        if np.abs(self.global_feature - global_feature(self.features)).max() > 1e-6:
            raise ValueError(f"{self.entry_id}: cached global feature is stale")


@dataclass
class FeatureDB:
    entries: list[DatabaseEntry]

    def validate(self) -> None:
        ids = set()
        for e in self.entries:
            e.validate()
            if e.entry_id in ids:
                raise ValueError(f"duplicate entry id {e.entry_id!r}")
            ids.add(e.entry_id)
        if self.entries:
            c, p = self.channels, self.patch_size
            for e in self.entries:
                if e.features.grid.shape[2] != c or e.features.patch_size != p:
                    raise ValueError(f"{e.entry_id}: inconsistent C or P")

    @property
    def channels(self) -> int:
        return self.entries[0].features.grid.shape[2] if self.entries else 0

    @property
    def patch_size(self) -> int:
        return self.entries[0].features.patch_size if self.entries else 0

    def by_id(self, entry_id: str) -> DatabaseEntry:
        for e in self.entries:
            if e.entry_id == entry_id:
                return e
        raise KeyError(entry_id)


def masked_patch_indices(mask: np.ndarray, patch_size: int) -> list[int]:
    """Row-major indices of patches whose block is at least half set."""
    mask = np.asarray(mask, dtype=bool)
    p = patch_size
    if mask.shape[0] % p or mask.shape[1] % p:
        raise ValueError(f"mask dims {mask.shape} not divisible by patch {p}")
    hp, wp = mask.shape[0] // p, mask.shape[1] // p
    counts = mask.reshape(hp, p, wp, p).sum(axis=(1, 3))
    rows, cols = np.nonzero(2 * counts >= p * p)
    return [int(r) * wp + int(c) for r, c in zip(rows, cols)]


def encode_store(db: FeatureDB, channels: int = 0, patch_size: int = 0) -> bytes:
    """Serialize; channels/patch_size seed the header for empty stores."""
    db.validate()
    c = db.channels or channels
    p = db.patch_size or patch_size
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<IIII", _VERSION, len(db.entries), c, p)
    for e in db.entries:
        ident = e.entry_id.encode("utf-8")
        h, w = e.features.image_dims
        out += struct.pack("<I", len(ident)) + ident
        out += struct.pack("<II", h, w)
        out += e.features.grid.astype("<f4").tobytes()
        out += np.packbits(e.polyp_mask.reshape(-1)).tobytes()
    return bytes(out)


def write_store(db: FeatureDB, path, channels: int = 0, patch_size: int = 0) -> None:
    atomic_write_bytes(path, encode_store(db, channels, patch_size))


def read_store(path) -> FeatureDB:
    with open(path, "rb") as fh:
        data = fh.read()

    def take(off, size, what):
        if off + size > len(data):
            raise FormatError(f"{path}: truncated {what} at byte {off}")
        return data[off : off + size], off + size

    chunk, off = take(0, 4, "magic")
    if chunk != _MAGIC:
        raise FormatError(f"{path}: bad magic {chunk!r}, expected {_MAGIC!r}")
    chunk, off = take(off, 16, "header")
    version, count, c, p = struct.unpack("<IIII", chunk)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported store version {version}")
    entries = []
    for i in range(count):
        chunk, off = take(off, 4, f"entry {i} id length")
        (id_len,) = struct.unpack("<I", chunk)
        chunk, off = take(off, id_len, f"entry {i} id")
        entry_id = chunk.decode("utf-8")
        chunk, off = take(off, 8, f"entry {i} dims")
        h, w = struct.unpack("<II", chunk)
        if p < 1 or h % p or w % p:
            raise FormatError(f"{path}: entry {entry_id!r} dims {h}x{w} not divisible by {p}")
        hp, wp = h // p, w // p
        n_floats = hp * wp * c
        chunk, off = take(off, 4 * n_floats, f"entry {i} grid")
        grid = np.frombuffer(chunk, dtype="<f4").reshape(hp, wp, c)
        n_bytes = (h * w + 7) // 8
        chunk, off = take(off, n_bytes, f"entry {i} mask")
        bits = np.unpackbits(np.frombuffer(chunk, dtype=np.uint8))[: h * w]
        mask = bits.reshape(h, w).astype(bool)
        entries.append(
            DatabaseEntry(entry_id, FeatureGrid(entry_id, p, grid.copy(), (h, w)), mask)
        )
    if off != len(data):
        raise FormatError(f"{path}: {len(data) - off} trailing bytes at offset {off}")
    db = FeatureDB(entries)
    try:
        db.validate()
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return db
