"""Training loop: masked-pair sampling, forward diffusion, gradient
accumulation and moment updates, with a per-step loss log."""

import os
from dataclasses import dataclass, field

import numpy as np

from ..codec import downsample_mask, encode
from ..errors import ConfigurationError, PlacementError
from ..masks import Prompt, sample_training_pair
from ..synth import Label, read_manifest
from ..util import atomic_write_text, fmt, stage_rng
from .loss import compute_loss, loss_output_grad
from .model import DenoiserModel, ModelSpec
from .optim import OptimizerParams, TrainState, optimizer_step
from .schedule import forward_diffuse, make_schedule


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 2
    accum_steps: int = 4
    seed: int = 0
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    hidden: int = 32
    time_dim: int = 8
    polyp_prompt_prob: float = 0.5
    opt: OptimizerParams = field(default_factory=OptimizerParams)

    def validate(self):
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")
        if self.batch_size < 1 or self.accum_steps < 1:
            raise ConfigurationError("batch_size and accum_steps must be >= 1")
        self.opt.validate()


def _draw_pair(samples, rng, polyp_prompt_prob):
    for _ in range(10):
        sample = samples[int(rng.integers(len(samples)))]
        if sample.label is Label.POLYP and rng.uniform() < polyp_prompt_prob:
            prompt = Prompt.POLYP
        else:
            prompt = Prompt.NORMAL
        try:
            return sample_training_pair(sample, prompt, rng)
        except PlacementError:
            continue  # rare: bbox leaves no room for an outside rectangle
    raise PlacementError("could not place a training mask after 10 sample redraws")


def train(manifest, cfg: TrainConfig):
    """Run cfg.steps optimizer updates; returns (TrainState, loss records).

    ``manifest`` is a manifest path or an in-memory sample list. Each
    record is (step, L_mse, L_lg, L_total) averaged over the step's
    accumulated draws. Deterministic for a fixed config.
    """
    cfg.validate()
    if isinstance(manifest, (str, os.PathLike)):
        samples = read_manifest(manifest)
    else:
        samples = list(manifest)
    if not samples:
        raise ConfigurationError("training manifest is empty")

    rng = stage_rng(cfg.seed, "train")
    model = DenoiserModel.initialize(
        ModelSpec(hidden=cfg.hidden, time_dim=cfg.time_dim), rng
    )
    state = TrainState(model, cfg.opt)
    sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    lam = cfg.opt.lam
    draws = cfg.batch_size * cfg.accum_steps

    records = []
    for step in range(cfg.steps):
        gsum = np.zeros_like(model.params)
        losses = np.zeros(3)
        for _ in range(draws):
            pair = _draw_pair(samples, rng, cfg.polyp_prompt_prob)
            z0 = encode(pair.image)
            z_masked = encode(pair.image * ~pair.mask)
            m_lat = downsample_mask(pair.mask)
            t = int(rng.integers(cfg.T))
            eps = rng.standard_normal(z0.shape)
            z_t = forward_diffuse(z0, t, eps, sched)
            pred, tape = model.forward(z_t, z_masked, m_lat, pair.prompt, t, record=True)
            losses += compute_loss(pred, eps, m_lat, lam)
            gsum += model.backward(tape, loss_output_grad(pred, eps, m_lat, lam))
        optimizer_step(state, gsum / draws)
        l_mse, l_lg, l_total = losses / draws
        records.append((step, float(l_mse), float(l_lg), float(l_total)))
    return state, records


def write_loss_log(path, records) -> None:
    lines = [
        "\t".join([str(step), fmt(mse), fmt(lg), fmt(total)])
        for step, mse, lg, total in records
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
