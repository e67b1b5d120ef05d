"""Conditional noise-prediction network.

Three 3x3 convolutions (9 -> hidden -> hidden -> 4) with tanh between. The
9 input channels are the noisy latent (4), the masked-image latent (4) and
the latent mask (1), concatenated in that order. A sinusoidal time
embedding is projected to one scalar per hidden channel and added after
layer 1, as is the learned row for the active text prompt. Small enough
that every gradient can be validated against finite differences.
"""

import json
import struct
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .. import kernels
from ..errors import FormatError
from ..synth import Label

PROMPT_INDEX = {Label.POLYP: 0, Label.NORMAL: 1}

_MAGIC = b"PGCK"
_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    in_channels: int = 9
    hidden: int = 32
    out_channels: int = 4
    time_dim: int = 8
    n_prompts: int = 2


@dataclass
class Tape:
    """Intermediates recorded by a forward pass, consumed by backward."""

    x9: np.ndarray
    temb: np.ndarray
    a1: np.ndarray
    a2: np.ndarray
    prompt_id: int


def time_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    if half < 1 or dim % 2:
        raise ValueError("time embedding dim must be even and >= 2")
    freqs = 10000.0 ** (-np.arange(half) / max(half - 1, 1))
    ang = float(t) * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


def _layout(spec: ModelSpec):
    h, ci, co, td = spec.hidden, spec.in_channels, spec.out_channels, spec.time_dim
    return [
        ("w1", (h, ci, 3, 3)),
        ("b1", (h,)),
        ("t_proj", (h, td)),
        ("t_bias", (h,)),
        ("prompt_table", (spec.n_prompts, h)),
        ("w2", (h, h, 3, 3)),
        ("b2", (h,)),
        ("w3", (co, h, 3, 3)),
        ("b3", (co,)),
    ]


class DenoiserModel:
    """Flat float64 parameter vector with named views per layer."""

    def __init__(self, spec: ModelSpec, params: Optional[np.ndarray] = None):
        self.spec = spec
        self._layout = _layout(spec)
        self.n_params = sum(int(np.prod(shape)) for _, shape in self._layout)
        if params is None:
            params = np.zeros(self.n_params)
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        self.params = params
        self.views = {}
        off = 0
        for name, shape in self._layout:
            size = int(np.prod(shape))
            self.views[name] = self.params[off : off + size].reshape(shape)
            off += size

    @classmethod
    def initialize(cls, spec: ModelSpec, rng) -> "DenoiserModel":
        model = cls(spec)
        v = model.views
        v["w1"][:] = rng.standard_normal(v["w1"].shape) / np.sqrt(9 * spec.in_channels)
        v["w2"][:] = rng.standard_normal(v["w2"].shape) / np.sqrt(9 * spec.hidden)
        # small but nonzero head so every input is wired from step 0
        v["w3"][:] = rng.standard_normal(v["w3"].shape) * (0.01 / np.sqrt(9 * spec.hidden))
        v["t_proj"][:] = rng.standard_normal(v["t_proj"].shape) / np.sqrt(spec.time_dim)
        v["prompt_table"][:] = rng.standard_normal(v["prompt_table"].shape) * 0.1
        return model

    def _check_inputs(self, z_t, z_masked, m):
        lat = self.spec.out_channels
        if z_t.ndim != 3 or z_t.shape[0] != lat:
            raise ValueError(f"noisy latent shape {z_t.shape} must be ({lat}, h, w)")
        if z_masked.shape != z_t.shape:
            raise ValueError(f"masked latent shape {z_masked.shape} != {z_t.shape}")
        if m.shape != z_t.shape[1:]:
            raise ValueError(f"latent mask shape {m.shape} != {z_t.shape[1:]}")
        if 2 * lat + 1 != self.spec.in_channels:
            raise ValueError("input channel count inconsistent with model spec")

    def forward(self, z_t, z_masked, m, prompt, t: int, record: bool = False):
        """Predict noise from [z_t, z_masked, m] conditioned on prompt and t."""
        z_t = np.asarray(z_t, dtype=np.float64)
        z_masked = np.asarray(z_masked, dtype=np.float64)
        m = np.asarray(m)
        self._check_inputs(z_t, z_masked, m)
        pid = PROMPT_INDEX[prompt] if isinstance(prompt, Label) else int(prompt)
        v = self.views
        x9 = np.ascontiguousarray(
            np.concatenate([z_t, z_masked, m[None].astype(np.float64)], axis=0)
        )
        temb = time_embedding(t, self.spec.time_dim)
        cond = v["t_proj"] @ temb + v["t_bias"] + v["prompt_table"][pid]
        h1 = kernels.conv3x3_forward(x9, v["w1"], v["b1"]) + cond[:, None, None]
        a1 = np.tanh(h1)
        a2 = np.tanh(kernels.conv3x3_forward(a1, v["w2"], v["b2"]))
        out = kernels.conv3x3_forward(a2, v["w3"], v["b3"])
        if record:
            return out, Tape(x9=x9, temb=temb, a1=a1, a2=a2, prompt_id=pid)
        return out

    def backward(self, tape: Optional[Tape], gout: np.ndarray) -> np.ndarray:
        """Exact gradients w.r.t. every parameter, given dLoss/dOutput."""
        if tape is None:
            raise RuntimeError("backward called without a recorded forward pass")
        v = self.views
        gout = np.ascontiguousarray(gout, dtype=np.float64)
        ga2, gw3, gb3 = kernels.conv3x3_backward(tape.a2, v["w3"], gout)
        gh2 = np.ascontiguousarray(ga2 * (1.0 - tape.a2**2))
        ga1, gw2, gb2 = kernels.conv3x3_backward(tape.a1, v["w2"], gh2)
        gh1 = np.ascontiguousarray(ga1 * (1.0 - tape.a1**2))
        _, gw1, gb1 = kernels.conv3x3_backward(tape.x9, v["w1"], gh1)
        gcond = gh1.sum(axis=(1, 2))
        gprompt = np.zeros_like(v["prompt_table"])
        gprompt[tape.prompt_id] = gcond
        parts = {
            "w1": gw1,
            "b1": gb1,
            "t_proj": np.outer(gcond, tape.temb),
            "t_bias": gcond,
            "prompt_table": gprompt,
            "w2": gw2,
            "b2": gb2,
            "w3": gw3,
            "b3": gb3,
        }
        return np.concatenate([parts[name].ravel() for name, _ in self._layout])


def save_checkpoint(path, model: DenoiserModel, schedule: Optional[dict] = None,
                    moments=None, step: int = 0) -> None:
    """Binary checkpoint: magic, version, JSON descriptor, f32 parameters,
    optional optimizer-moment section."""
    desc = asdict(model.spec)
    if schedule is not None:
        desc["schedule"] = schedule
    desc_bytes = json.dumps(desc, sort_keys=True).encode("utf-8")
    out = bytearray()
    out += _MAGIC
    out += struct.pack("<I", _VERSION)
    out += struct.pack("<I", len(desc_bytes)) + desc_bytes
    out += struct.pack("<Q", model.n_params)
    out += model.params.astype("<f4").tobytes()
    if moments is None:
        out += struct.pack("<B", 0)
    else:
        m, vv = moments
        out += struct.pack("<B", 1)
        out += struct.pack("<Q", step)
        out += np.asarray(m).astype("<f4").tobytes()
        out += np.asarray(vv).astype("<f4").tobytes()
    from ..util import atomic_write_bytes

    atomic_write_bytes(path, bytes(out))


@dataclass
class Checkpoint:
    model: DenoiserModel
    schedule: Optional[dict]
    moments: Optional[tuple[np.ndarray, np.ndarray]]
    step: int


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        data = fh.read()

    def take(offset, size, what):
        if offset + size > len(data):
            raise FormatError(f"{path}: truncated {what} at byte {offset}")
        return data[offset : offset + size], offset + size

    chunk, off = take(0, 4, "magic")
    if chunk != _MAGIC:
        raise FormatError(f"{path}: bad magic {chunk!r}, expected {_MAGIC!r}")
    chunk, off = take(off, 4, "version")
    version = struct.unpack("<I", chunk)[0]
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    chunk, off = take(off, 4, "descriptor length")
    desc_len = struct.unpack("<I", chunk)[0]
    chunk, off = take(off, desc_len, "descriptor")
    desc = json.loads(chunk.decode("utf-8"))
    schedule = desc.pop("schedule", None)
    spec = ModelSpec(**desc)
    chunk, off = take(off, 8, "parameter count")
    n = struct.unpack("<Q", chunk)[0]
    expected = sum(int(np.prod(shape)) for _, shape in _layout(spec))
    if n != expected:
        raise FormatError(f"{path}: descriptor implies {expected} params, file has {n}")
    chunk, off = take(off, 4 * n, "parameters")
    params = np.frombuffer(chunk, dtype="<f4").astype(np.float64)
    model = DenoiserModel(spec, params)
    chunk, off = take(off, 1, "moments flag")
    moments = None
    step = 0
    if chunk[0] == 1:
        chunk, off = take(off, 8, "step counter")
        step = struct.unpack("<Q", chunk)[0]
        chunk, off = take(off, 4 * n, "first moments")
        m = np.frombuffer(chunk, dtype="<f4").astype(np.float64)
        chunk, off = take(off, 4 * n, "second moments")
        vv = np.frombuffer(chunk, dtype="<f4").astype(np.float64)
        moments = (m, vv)
    elif chunk[0] != 0:
        raise FormatError(f"{path}: bad moments flag {chunk[0]}")
    return Checkpoint(model=model, schedule=schedule, moments=moments, step=step)
