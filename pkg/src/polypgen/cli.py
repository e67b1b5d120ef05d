"""Command-line pipeline: synth-data, train, build-db, propose, generate,
evaluate.

Configuration comes from an INI-style file of key=value pairs grouped in
sections; command-line flags override file values. One seed drives every
stage through tagged rng streams. Exit codes: 0 success, 1 usage or
configuration error, 2 data or format error, 3 numerical failure.
"""

import argparse
import configparser
import glob
import os
import sys
from dataclasses import dataclass, replace

import numpy as np

from .diffusion import (
    OptimizerParams,
    TrainConfig,
    ddim_sample,
    ddpm_sample,
    load_checkpoint,
    make_schedule,
    save_checkpoint,
    train,
)
from .diffusion.train import write_loss_log
from .errors import (
    ConfigurationError,
    FormatError,
    IngestionError,
    ManifestError,
    PlacementError,
    PolypGenError,
    TrainingError,
)
from .featstore import global_feature, read_store
from .featurize import fit_prob_classifier, patch_features
from .masks import Prompt, bbox_mask
from .metrics import (
    ProbRecord,
    detection_metrics,
    fid,
    gaussian_stats,
    inception_score,
    read_detections,
)
from .pgm import read_mask_pgm, read_pgm, write_pgm
from .retrieval import ClusterParams, build_database, feature_lookup_from_store, propose_masks
from .synth import Label, SynthConfig, generate_dataset, read_manifest, write_manifest
from .util import atomic_write_text, fmt, stage_seed


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # data
    count: int = 64
    resolution: tuple = (64, 64)
    polyp_fraction: float = 0.5
    blob_intensity: float = 0.35
    texture_smoothness: int = 3
    # training
    train_steps: int = 500
    batch_size: int = 2
    accum_steps: int = 4
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    lam: float = 0.5
    hidden: int = 32
    time_dim: int = 8
    t_steps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    polyp_prompt_prob: float = 0.5
    # sampling
    sampler: str = "ddim"
    sample_steps: int = 50
    # retrieval
    k: int = 3
    min_points: int = 3
    patch_size: int = 8
    feature_channels: int = 8
    # metrics
    iou_threshold: float = 0.5

    def validate(self):
        if self.lam < 0:
            raise ConfigurationError("train.lam must be >= 0")
        if self.sampler not in ("ddim", "ddpm"):
            raise ConfigurationError(f"sample.sampler must be ddim or ddpm, not {self.sampler!r}")
        if self.sample_steps > self.t_steps:
            raise ConfigurationError(
                f"sample.steps ({self.sample_steps}) exceeds schedule length ({self.t_steps})"
            )
        if self.k < 1 or self.min_points < 1:
            raise ConfigurationError("retrieval.k and retrieval.min_points must be >= 1")
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigurationError("metrics.iou_threshold must lie in (0, 1)")


def _parse_resolution(text: str) -> tuple:
    try:
        h, w = text.lower().split("x")
        return (int(h), int(w))
    except ValueError:
        raise ConfigurationError(f"resolution must look like 64x64, got {text!r}") from None


_CONFIG_KEYS = {
    "run.seed": ("seed", int),
    "data.count": ("count", int),
    "data.resolution": ("resolution", _parse_resolution),
    "data.polyp_fraction": ("polyp_fraction", float),
    "data.blob_intensity": ("blob_intensity", float),
    "data.texture_smoothness": ("texture_smoothness", int),
    "train.steps": ("train_steps", int),
    "train.batch_size": ("batch_size", int),
    "train.accum_steps": ("accum_steps", int),
    "train.lr": ("lr", float),
    "train.beta1": ("beta1", float),
    "train.beta2": ("beta2", float),
    "train.weight_decay": ("weight_decay", float),
    "train.lam": ("lam", float),
    "train.hidden": ("hidden", int),
    "train.time_dim": ("time_dim", int),
    "train.t": ("t_steps", int),
    "train.beta_start": ("beta_start", float),
    "train.beta_end": ("beta_end", float),
    "train.polyp_prompt_prob": ("polyp_prompt_prob", float),
    "sample.sampler": ("sampler", str),
    "sample.steps": ("sample_steps", int),
    "retrieval.k": ("k", int),
    "retrieval.min_points": ("min_points", int),
    "retrieval.patch_size": ("patch_size", int),
    "retrieval.channels": ("feature_channels", int),
    "metrics.iou_threshold": ("iou_threshold", float),
}


def load_config(path) -> tuple[RunConfig, dict]:
    """Returns (RunConfig, paths) from an INI file; [paths] keys are resolved
    relative to the file's directory."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise FileNotFoundError(f"config file not found: {path}")
    cfg = RunConfig()
    paths = {}
    base = os.path.dirname(os.path.abspath(path))
    for section in parser.sections():
        for key, value in parser[section].items():
            if section == "paths":
                paths[key] = value if os.path.isabs(value) else os.path.join(base, value)
                continue
            full = f"{section}.{key}"
            if full not in _CONFIG_KEYS:
                raise ConfigurationError(f"{path}: unknown config key {full}")
            attr, conv = _CONFIG_KEYS[full]
            try:
                cfg = replace(cfg, **{attr: conv(value)})
            except ValueError:
                raise ConfigurationError(f"{path}: bad value for {full}: {value!r}") from None
    return cfg, paths


def _setup(args) -> tuple[RunConfig, dict]:
    if args.config:
        cfg, paths = load_config(args.config)
    else:
        cfg, paths = RunConfig(), {}
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, k=args.k)
    cfg.validate()
    return cfg, paths


def _path(args, paths, flag, key, what) -> str:
    value = getattr(args, flag, None) or paths.get(key)
    if not value:
        raise UsageError(f"missing --{flag.replace('_', '-')} (or [paths] {key}) for {what}")
    return value


def _require_file(path) -> str:
    if not os.path.exists(path):
        raise FileNotFoundError(f"input not found: {path}")
    return path


def cmd_synth_data(args) -> int:
    cfg, paths = _setup(args)
    out_dir = _path(args, paths, "out", "out_dir", "synth-data")
    synth_cfg = SynthConfig(
        count=args.count if args.count is not None else cfg.count,
        resolution=cfg.resolution,
        polyp_fraction=(
            args.polyp_fraction if args.polyp_fraction is not None else cfg.polyp_fraction
        ),
        seed=cfg.seed,
        blob_intensity=cfg.blob_intensity,
        texture_smoothness=cfg.texture_smoothness,
    )
    samples = generate_dataset(synth_cfg)
    manifest = write_manifest(samples, out_dir)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    cfg, paths = _setup(args)
    manifest = _require_file(_path(args, paths, "manifest", "manifest", "train"))
    ckpt = _path(args, paths, "checkpoint", "checkpoint", "train")
    steps = args.steps if args.steps is not None else cfg.train_steps
    tc = TrainConfig(
        steps=steps,
        batch_size=cfg.batch_size,
        accum_steps=cfg.accum_steps,
        seed=cfg.seed,
        T=cfg.t_steps,
        beta_start=cfg.beta_start,
        beta_end=cfg.beta_end,
        hidden=cfg.hidden,
        time_dim=cfg.time_dim,
        polyp_prompt_prob=cfg.polyp_prompt_prob,
        opt=OptimizerParams(
            lr=cfg.lr,
            beta1=cfg.beta1,
            beta2=cfg.beta2,
            weight_decay=cfg.weight_decay,
            lam=cfg.lam,
        ),
    )
    state, records = train(manifest, tc)
    sched_meta = {"T": cfg.t_steps, "beta_start": cfg.beta_start, "beta_end": cfg.beta_end}
    os.makedirs(os.path.dirname(os.path.abspath(ckpt)), exist_ok=True)
    save_checkpoint(ckpt, state.model, schedule=sched_meta,
                    moments=(state.m, state.v), step=state.step)
    loss_log = args.loss_log or f"{ckpt}.loss.txt"
    write_loss_log(loss_log, records)
    if records:
        print(f"{ckpt}: {len(records)} steps, final L_total {records[-1][3]:.4f}")
    else:
        print(f"{ckpt}: 0 steps")
    return 0


def _load_model(path):
    ckpt = load_checkpoint(_require_file(path))
    meta = ckpt.schedule or {}
    sched = make_schedule(
        int(meta.get("T", 1000)),
        float(meta.get("beta_start", 1e-4)),
        float(meta.get("beta_end", 0.02)),
    )
    return ckpt.model, sched


def cmd_build_db(args) -> int:
    cfg, paths = _setup(args)
    manifest = _require_file(_path(args, paths, "manifest", "manifest", "build-db"))
    store = _path(args, paths, "out", "store", "build-db")
    model, sched = _load_model(_path(args, paths, "checkpoint", "checkpoint", "build-db"))
    samples = read_manifest(manifest)
    lookup = None
    if args.features:
        lookup = feature_lookup_from_store(read_store(_require_file(args.features)))
    if cfg.sample_steps > sched.T:
        raise ConfigurationError("sample.steps exceeds the checkpoint schedule length")
    db = build_database(
        samples,
        model,
        sched,
        store,
        patch_size=cfg.patch_size,
        channels=cfg.feature_channels,
        ddim_steps=cfg.sample_steps,
        seed=cfg.seed,
        feature_lookup=lookup,
    )
    print(f"{store}: {len(db.entries)} entries")
    return 0


def _query_grid(args, cfg, db):
    if args.query_features:
        qdb = read_store(_require_file(args.query_features))
        if args.query_id:
            try:
                return qdb.by_id(args.query_id).features
            except KeyError:
                raise IngestionError(f"id {args.query_id!r} not in {args.query_features}") from None
        if len(qdb.entries) == 1:
            return qdb.entries[0].features
        raise UsageError("--query-id is required when the query store has several entries")
    image_path = _require_file(args.image)
    image = read_pgm(image_path)
    image_id = os.path.splitext(os.path.basename(image_path))[0]
    p = db.patch_size or cfg.patch_size
    c = db.channels or cfg.feature_channels
    return patch_features(image, image_id, p, c)


def _proposal_lines(query_id, proposals):
    lines = []
    for p in proposals:
        rect = ",".join(str(v) for v in p.rect)
        lines.append(
            "\t".join([query_id, rect, p.source_entry_id, str(p.cluster_size), fmt(p.score)])
        )
    return "".join(line + "\n" for line in lines)


def cmd_propose(args) -> int:
    cfg, paths = _setup(args)
    db = read_store(_require_file(_path(args, paths, "db", "store", "propose")))
    grid = _query_grid(args, cfg, db)
    params = ClusterParams(eps_radius=2 * (db.patch_size or cfg.patch_size) + 1,
                           min_points=cfg.min_points)
    proposals = propose_masks(grid, db, cfg.k, params)
    text = _proposal_lines(grid.image_id, proposals)
    if args.out:
        atomic_write_text(args.out, text)
        print(f"{args.out}: {len(proposals)} proposals")
    else:
        sys.stdout.write(text)
    return 0


def cmd_generate(args) -> int:
    cfg, paths = _setup(args)
    model, sched = _load_model(_path(args, paths, "checkpoint", "checkpoint", "generate"))
    image_path = _require_file(args.image)
    image = read_pgm(image_path)
    prompt = Prompt(args.prompt)
    if cfg.sample_steps > sched.T:
        raise ConfigurationError("sample.steps exceeds the checkpoint schedule length")

    if args.auto_mask:
        db = read_store(_require_file(_path(args, paths, "db", "store", "--auto-mask")))
        grid = _query_grid(args, cfg, db)
        if grid.image_dims != image.shape:
            raise IngestionError(
                f"query features cover {grid.image_dims}, image is {image.shape}"
            )
        params = ClusterParams(eps_radius=2 * db.patch_size + 1, min_points=cfg.min_points)
        proposals = propose_masks(grid, db, cfg.k, params)
        if not proposals:
            raise PlacementError("no mask proposal found; supply --mask explicitly")
        mask = bbox_mask(proposals[0].rect, *image.shape)
    elif args.mask:
        mask = read_mask_pgm(_require_file(args.mask))
    else:
        raise UsageError("generate needs --mask or --auto-mask")

    steps = args.steps if args.steps is not None else cfg.sample_steps
    image_id = os.path.splitext(os.path.basename(image_path))[0]
    seed = stage_seed(cfg.seed, f"generate:{image_id}")
    sampler = ddim_sample if cfg.sampler == "ddim" else ddpm_sample
    out = sampler(model, sched, image, mask, prompt, steps=steps, seed=seed)
    write_pgm(args.out, out)
    print(args.out)
    return 0


def _load_image_set(path):
    """A manifest file or a directory of graymaps -> list of (id, image)."""
    if os.path.isdir(path):
        files = sorted(glob.glob(os.path.join(path, "*.pgm")))
        return [(os.path.splitext(os.path.basename(f))[0], read_pgm(f)) for f in files]
    samples = read_manifest(_require_file(path))
    return [(s.image_id, s.image) for s in samples]


def cmd_evaluate(args) -> int:
    cfg, paths = _setup(args)
    real_manifest = _require_file(_path(args, paths, "real", "manifest", "evaluate"))
    real_samples = read_manifest(real_manifest)
    generated = _load_image_set(_path(args, paths, "generated", "generated", "evaluate"))
    if len(real_samples) < 2 or len(generated) < 2:
        raise ConfigurationError("evaluate needs at least 2 images per set")

    def feats(pairs):
        return np.array(
            [
                global_feature(
                    patch_features(img, image_id, cfg.patch_size, cfg.feature_channels)
                )
                for image_id, img in pairs
            ]
        )

    stats_real = gaussian_stats(feats([(s.image_id, s.image) for s in real_samples]))
    stats_gen = gaussian_stats(feats(generated))
    fid_value = fid(stats_real, stats_gen)

    clf = fit_prob_classifier(real_samples)
    records = [ProbRecord(image_id, clf.probs(img)) for image_id, img in generated]
    is_value = inception_score(records, splits=args.splits)

    lines = [
        "[generation]",
        f"fid = {fmt(fid_value)}",
        f"is = {fmt(is_value)}",
        f"n_real = {len(real_samples)}",
        f"n_generated = {len(generated)}",
    ]
    if args.pred_boxes or args.gt_boxes:
        if not (args.pred_boxes and args.gt_boxes):
            raise UsageError("detection scoring needs both --pred-boxes and --gt-boxes")
        det = read_detections(_require_file(args.pred_boxes), _require_file(args.gt_boxes))
        ap, precision, recall, f1 = detection_metrics(det, cfg.iou_threshold)
        lines += [
            "",
            "[detection]",
            f"ap = {fmt(ap)}",
            f"precision = {fmt(precision)}",
            f"recall = {fmt(recall)}",
            f"f1 = {fmt(f1)}",
        ]
    report = "".join(line + "\n" for line in lines)
    if args.out:
        atomic_write_text(args.out, report)
    sys.stdout.write(report)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polypgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="override the pipeline seed")

    p = sub.add_parser("synth-data", help="generate a synthetic dataset manifest")
    common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--count", type=int)
    p.add_argument("--polyp-fraction", type=float, dest="polyp_fraction")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train the inpainting denoiser")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint", help="output checkpoint path")
    p.add_argument("--steps", type=int, help="optimizer steps")
    p.add_argument("--loss-log", dest="loss_log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build-db", help="build the retrieval database")
    common(p)
    p.add_argument("--manifest")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="output feature store")
    p.add_argument("--features", help="external feature store keyed by image id")
    p.set_defaults(func=cmd_build_db)

    p = sub.add_parser("propose", help="propose masks for a query image")
    common(p)
    p.add_argument("--db", help="feature store file")
    p.add_argument("--image", help="query graymap")
    p.add_argument("--query-features", dest="query_features", help="store with query features")
    p.add_argument("--query-id", dest="query_id")
    p.add_argument("--k", type=int)
    p.add_argument("--out", help="proposal records file")
    p.set_defaults(func=cmd_propose)

    p = sub.add_parser("generate", help="inpaint an image region")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--image", required=True)
    p.add_argument("--mask", help="mask graymap (255 = inpaint)")
    p.add_argument("--auto-mask", action="store_true", dest="auto_mask")
    p.add_argument("--db", help="feature store for --auto-mask")
    p.add_argument("--query-features", dest="query_features")
    p.add_argument("--query-id", dest="query_id")
    p.add_argument("--k", type=int)
    p.add_argument("--prompt", required=True, choices=[l.value for l in Label])
    p.add_argument("--steps", type=int, help="sampler steps")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated images against a real set")
    common(p)
    p.add_argument("--real", help="manifest of real samples")
    p.add_argument("--generated", help="manifest or directory of generated graymaps")
    p.add_argument("--pred-boxes", dest="pred_boxes")
    p.add_argument("--gt-boxes", dest="gt_boxes")
    p.add_argument("--splits", type=int, default=1)
    p.add_argument("--out", help="report file")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ManifestError, FormatError, IngestionError, PlacementError,
            FileNotFoundError, KeyError, PolypGenError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
