"""Shared plumbing: per-stage rng streams and atomic file writes."""

import hashlib
import os

import numpy as np

_U64 = 2**64 - 1


def stage_seed(seed: int, tag: str) -> int:
    """Derive a stream seed as ``seed XOR sha256(tag)[:8]`` (little-endian).

    One pipeline seed fans out into independent, reproducible streams, one
    per stage tag.
    """
    h = hashlib.sha256(tag.encode("utf-8")).digest()
    return (int(seed) ^ int.from_bytes(h[:8], "little")) & _U64


def stage_rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(stage_seed(seed, tag)))


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temp name in the same directory, then rename into place."""
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def fmt(x: float) -> str:
    """Shortest round-trip decimal form, used in all text outputs."""
    return repr(float(x))
