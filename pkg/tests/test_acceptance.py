"""Acceptance gate: one test per release criterion, each printing a
PASS/FAIL line (run with -s to see them on success).

Tolerances are stated inline next to each assertion. Expected values come
from independent oracles: central finite differences, exhaustive search,
an O(n^2) clustering reference, scipy's Schur-based matrix square root,
hand-computed staircases, and extended-precision products.
"""

import glob
import math
import os
import time

import numpy as np
import pytest
import scipy.linalg

from polypgen.cli import main as cli_main
from polypgen.codec import decode, encode
from polypgen.diffusion.loss import compute_loss, loss_output_grad
from polypgen.diffusion.model import DenoiserModel, ModelSpec
from polypgen.diffusion.sample import ddim_sample, reverse_step
from polypgen.diffusion.schedule import forward_diffuse, make_schedule
from polypgen.diffusion.train import TrainConfig, train
from polypgen.featstore import DatabaseEntry, FeatureDB, FeatureGrid, global_feature
from polypgen.masks import bbox_mask
from polypgen.metrics import (
    DetectionSet,
    GaussianStats,
    ProbRecord,
    detection_metrics,
    fid,
    inception_score,
    iou,
)
from polypgen.retrieval import ClusterParams, dbscan, match_patches, propose_masks, top_k_global
from polypgen.synth import Label, SynthConfig, generate_dataset
from polypgen.util import stage_rng


def _report(name: str, passed: bool, detail: str = ""):
    tag = "PASS" if passed else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[ACCEPT] {name}: {tag}{suffix}")
    assert passed, f"{name}{suffix}"


# --- gradient correctness -------------------------------------------------


def test_gradient_correctness_against_finite_differences():
    start = time.perf_counter()
    rng = np.random.default_rng(1001)
    worst = 0.0
    draws = 0
    while draws < 100:
        hidden = int(rng.integers(2, 5))
        spec = ModelSpec(hidden=hidden)
        model = DenoiserModel.initialize(spec, rng)
        assert model.n_params <= 2000
        # draw scale keeps tanh curvature low enough that the oracle's own
        # h^2 truncation stays inside the 1e-4 budget on tiny coordinates
        model.params[:] = rng.standard_normal(model.n_params) * 0.25
        side = int(rng.choice([2, 3]))
        z_t = rng.standard_normal((4, side, side))
        z_m = rng.standard_normal((4, side, side))
        m = rng.random((side, side)) > 0.5
        eps = rng.standard_normal(z_t.shape)
        lam = float(rng.choice([0.0, 0.5, 1.0]))
        prompt = Label.POLYP if rng.random() < 0.5 else Label.NORMAL
        t = int(rng.integers(0, 1000))

        pred, tape = model.forward(z_t, z_m, m, prompt, t, record=True)
        grad = model.backward(tape, loss_output_grad(pred, eps, m, lam))

        step = 1e-4
        for i in range(model.n_params):
            orig = model.params[i]
            model.params[i] = orig + step
            up = compute_loss(model.forward(z_t, z_m, m, prompt, t), eps, m, lam)[2]
            model.params[i] = orig - step
            down = compute_loss(model.forward(z_t, z_m, m, prompt, t), eps, m, lam)[2]
            model.params[i] = orig
            fd = (up - down) / (2 * step)
            rel = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-6)
            worst = max(worst, rel)
        draws += 1
    elapsed = time.perf_counter() - start
    _report(
        "gradient-correctness",
        worst <= 1e-4 and elapsed <= 120.0,
        f"100 draws, worst rel err {worst:.2e}, {elapsed:.1f}s",
    )


# --- loss identities ------------------------------------------------------


def test_loss_identities():
    rng = np.random.default_rng(1002)
    pred = rng.standard_normal((4, 4, 4))
    eps = rng.standard_normal((4, 4, 4))
    m = rng.random((4, 4)) > 0.5
    ok = compute_loss(pred, pred.copy(), m, 0.5) == (0.0, 0.0, 0.0)

    ones = np.ones((4, 4), dtype=bool)
    l_mse, l_lg, l_total = compute_loss(pred, eps, ones, 0.5)
    ok &= l_lg == l_mse and abs(l_total - 1.5 * l_mse) <= 1e-12

    base_mse, base_lg, _ = compute_loss(pred, eps, m, 0.0)
    affine = all(
        compute_loss(pred, eps, m, lam) == (base_mse, base_lg, base_mse + lam * base_lg)
        for lam in (0.0, 0.25, 0.5, 1.0, 3.0)
    )
    ok &= affine
    _report("loss-identities", bool(ok))


# --- sampler inversion and background restore -----------------------------


def test_sampler_inversion_and_background_restore():
    rng = np.random.default_rng(1003)
    sched = make_schedule(1000, 1e-4, 0.02)
    worst = 0.0
    for _ in range(20):
        image = np.rint(rng.random((16, 16)) * 255) / 255
        z0 = encode(image)
        eps = rng.standard_normal(z0.shape)
        t = int(rng.integers(1, 1000))
        z_t = forward_diffuse(z0, t, eps, sched)
        # oracle noise predictor: one step straight to alpha_bar = 1
        back = reverse_step(z_t, eps, sched.alpha_bar[t], 1.0)
        worst = max(worst, float(np.abs(back - z0).max()))
    inversion_ok = worst <= 1e-9

    model = DenoiserModel.initialize(ModelSpec(hidden=6), rng)
    restore_ok = True
    for trial in range(50):
        image = np.rint(rng.random((16, 24)) * 255) / 255
        mask = np.zeros_like(image, dtype=bool)
        y, x = int(rng.integers(0, 9)), int(rng.integers(0, 13))
        mask[y : y + 8, x : x + 12] = True
        out = ddim_sample(model, sched, image, mask, Label.POLYP, steps=5, seed=trial)
        restore_ok &= bool(np.array_equal(out[~mask], image[~mask]))
    _report(
        "sampler-inversion",
        inversion_ok and restore_ok,
        f"inversion max err {worst:.1e}, 50/50 backgrounds bit-exact={restore_ok}",
    )


# --- training progress ----------------------------------------------------


def test_training_progress_and_inpainting_beats_noise():
    start = time.perf_counter()
    samples = generate_dataset(
        SynthConfig(count=64, resolution=(32, 32), polyp_fraction=0.5, seed=11)
    )
    cfg = TrainConfig(steps=500, seed=3)  # defaults: lr 1e-4, lam 0.5, hidden 32
    state, records = train(samples, cfg)
    totals = [r[3] for r in records]
    first, last = float(np.mean(totals[:50])), float(np.mean(totals[-50:]))

    held = generate_dataset(
        SynthConfig(count=16, resolution=(32, 32), polyp_fraction=1.0, seed=99)
    )
    sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    rng = stage_rng(123, "noise-baseline")
    mse_gen, mse_base = [], []
    for i, s in enumerate(held):
        mask = bbox_mask(s.bbox, *s.image.shape)
        out = ddim_sample(state.model, sched, s.image, mask, Label.POLYP,
                          steps=50, seed=1000 + i)
        mse_gen.append(float(np.mean((out[mask] - s.image[mask]) ** 2)))
        noise_img = decode(rng.standard_normal((4, 4, 4)))
        mse_base.append(float(np.mean((noise_img[mask] - s.image[mask]) ** 2)))
    ratio = float(np.mean(mse_gen) / np.mean(mse_base))
    elapsed = time.perf_counter() - start
    _report(
        "training-progress",
        last < first and ratio <= 0.7 and elapsed <= 600.0,
        f"loss {first:.3f}->{last:.3f}, masked-MSE ratio {ratio:.3f}, {elapsed:.0f}s",
    )


# --- retrieval exactness --------------------------------------------------


def _tiny_entry(entry_id, rng, c):
    grid = FeatureGrid(entry_id, 4, rng.standard_normal((1, 2, c)).astype(np.float32), (4, 8))
    mask = np.zeros((4, 8), dtype=bool)
    mask[:, :4] = True
    return DatabaseEntry(entry_id, grid, mask)


def test_retrieval_exactness():
    rng = np.random.default_rng(1005)
    ok = True
    for _ in range(200):
        n = int(rng.integers(1, 1001))
        c = int(rng.integers(2, 6))
        db = FeatureDB([_tiny_entry(f"e{i:05d}", rng, c) for i in range(n)])
        query = FeatureGrid("q", 4, rng.standard_normal((1, 2, c)).astype(np.float32), (4, 8))
        k = int(rng.choice([1, max(n // 2, 1), n, n + 7]))
        got = top_k_global(query, db, k)
        q = global_feature(query)
        want = [
            e
            for _, e in sorted(
                (float(np.linalg.norm(entry.global_feature - q)), entry.entry_id)
                for entry in db.entries
            )
        ][:k]
        ok &= got == want
    top_k_ok = ok

    ok = True
    for trial in range(100):
        hp = int(rng.integers(1, 9))
        wp = int(rng.integers(1, 9))
        c = 3
        p = 4
        q_vals = rng.standard_normal((hp, wp, c)).astype(np.float32)
        c_vals = rng.standard_normal((hp, wp, c)).astype(np.float32)
        # force ties: clone a random query patch and plant it as a candidate
        n_patches = hp * wp
        if n_patches >= 2:
            dup = sorted(rng.choice(n_patches, size=2, replace=False))
            q_flat = q_vals.reshape(n_patches, c)
            q_flat[dup[1]] = q_flat[dup[0]]
            c_vals.reshape(n_patches, c)[int(rng.integers(n_patches))] = q_flat[dup[0]]
        masked = sorted(int(v) for v in rng.choice(n_patches, size=min(3, n_patches),
                                                   replace=False))
        mask = np.zeros((hp * p, wp * p), dtype=bool)
        for idx in masked:
            r, col = idx // wp, idx % wp
            mask[r * p : (r + 1) * p, col * p : (col + 1) * p] = True
        query = FeatureGrid("q", p, q_vals, (hp * p, wp * p))
        cand = DatabaseEntry("c", FeatureGrid("c", p, c_vals, (hp * p, wp * p)), mask)
        got = match_patches(query, cand)
        qv = q_vals.astype(np.float64).reshape(n_patches, c)
        cv = c_vals.astype(np.float64).reshape(n_patches, c)
        ok &= len(got) == len(masked)
        for mt, v in zip(got, masked):
            d2 = ((qv - cv[v]) ** 2).sum(axis=1)
            best = min(range(n_patches), key=lambda u: (d2[u], u))
            ok &= mt.cand_patch == v and mt.query_patch == best
            ok &= abs(mt.distance - math.sqrt(d2[best])) <= 1e-12 * max(1.0, mt.distance)
    _report("retrieval-exactness", top_k_ok and ok,
            f"top-k on 200 stores={top_k_ok}, matching on 100 grids={ok}")


# --- DBSCAN oracle equivalence ---------------------------------------------


def _dbscan_oracle(points, eps, min_points):
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    adj = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1) <= eps * eps
    core = adj.sum(1) >= min_points
    labels = [-1] * n
    cluster = 0
    for s in range(n):
        if labels[s] != -1 or not core[s]:
            continue
        labels[s] = cluster
        frontier = [s]
        while frontier:
            nxt = []
            for j in frontier:
                if not core[j]:
                    continue
                for k2 in range(n):
                    if adj[j, k2] and labels[k2] == -1:
                        labels[k2] = cluster
                        nxt.append(k2)
            frontier = nxt
        cluster += 1
    return labels


def _partition(labels):
    groups: dict = {}
    parts = []
    for i, lab in enumerate(labels):
        if lab == -1:
            parts.append(frozenset([i]))
        else:
            groups.setdefault(lab, set()).add(i)
    return frozenset(parts + [frozenset(g) for g in groups.values()])


def test_dbscan_oracle_equivalence():
    rng = np.random.default_rng(1006)
    ok = True
    for trial in range(100):
        n = int(rng.integers(1, 201))
        pts = rng.uniform(0, 280, (n, 2))
        min_points = int(rng.choice([1, 3, 5]))
        got = dbscan(pts, ClusterParams(eps_radius=29.0, min_points=min_points))
        ok &= _partition(got) == _partition(_dbscan_oracle(pts, 29.0, min_points))
    _report("dbscan-oracle-equivalence", ok, "100 point sets, eps 29, min_points {1,3,5}")


# --- planted-proposal recovery ---------------------------------------------


def test_planted_proposal_recovery():
    rng = np.random.default_rng(1007)
    hits = 0
    p = 8
    for _ in range(50):
        hp = wp = int(rng.integers(6, 9))
        c = 6
        block = int(rng.integers(2, 4))
        db_entries = []
        # distractor entries
        for d in range(3):
            grid = rng.standard_normal((hp, wp, c)).astype(np.float32)
            mask = np.zeros((hp * p, wp * p), dtype=bool)
            r0, c0 = rng.integers(0, hp - block + 1, 2)
            mask[r0 * p : (r0 + block) * p, c0 * p : (c0 + block) * p] = True
            db_entries.append(
                DatabaseEntry(f"d{d}", FeatureGrid(f"d{d}", p, grid, (hp * p, wp * p)), mask)
            )
        # planted entry: its masked block reappears somewhere in the query
        planted = rng.standard_normal((hp, wp, c)).astype(np.float32)
        pr, pc = (int(v) for v in rng.integers(0, hp - block + 1, 2))
        mask = np.zeros((hp * p, wp * p), dtype=bool)
        mask[pr * p : (pr + block) * p, pc * p : (pc + block) * p] = True
        db_entries.append(
            DatabaseEntry("planted", FeatureGrid("planted", p, planted, (hp * p, wp * p)), mask)
        )
        query_vals = rng.standard_normal((hp, wp, c)).astype(np.float32)
        qr, qc = (int(v) for v in rng.integers(0, hp - block + 1, 2))
        query_vals[qr : qr + block, qc : qc + block] = planted[pr : pr + block, pc : pc + block]
        query = FeatureGrid("q", p, query_vals, (hp * p, wp * p))

        params = ClusterParams(eps_radius=2 * p + 1, min_points=3)
        proposals = propose_masks(query, FeatureDB(db_entries), 4, params)
        if not proposals:
            continue
        target = (qc * p, qr * p, (qc + block) * p, (qr + block) * p)
        if iou(proposals[0].rect, target) >= 0.3:
            hits += 1
    _report("planted-proposal-recovery", hits >= 45, f"{hits}/50 fixtures at IoU >= 0.3")


# --- FID correctness --------------------------------------------------------


def test_fid_correctness():
    rng = np.random.default_rng(1008)

    def spd(dim):
        a = rng.standard_normal((dim, dim))
        return a @ a.T + 0.2 * dim * np.eye(dim)

    stats = GaussianStats(rng.standard_normal(5), spd(5), 10)
    self_ok = abs(fid(stats, stats)) <= 1e-9

    a1 = GaussianStats(np.array([0.0]), np.array([[1.0]]), 10)
    b1 = GaussianStats(np.array([1.0]), np.array([[1.0]]), 10)
    analytic_ok = abs(fid(a1, b1) - 1.0) <= 1e-9

    oracle_ok = sym_ok = True
    for _ in range(50):
        dim = int(rng.integers(2, 7))
        a = GaussianStats(rng.standard_normal(dim), spd(dim), 10)
        b = GaussianStats(rng.standard_normal(dim), spd(dim), 10)
        diff = a.mean - b.mean
        cross = np.real(scipy.linalg.sqrtm(a.cov @ b.cov))
        want = float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2 * np.trace(cross))
        got = fid(a, b)
        oracle_ok &= abs(got - want) <= 1e-6
        sym_ok &= abs(got - fid(b, a)) <= 1e-6
        oracle_ok &= got >= -1e-9
    _report("fid-correctness", self_ok and analytic_ok and oracle_ok and sym_ok)


# --- IS correctness ----------------------------------------------------------


def test_is_correctness():
    rng = np.random.default_rng(1009)
    uniform = [ProbRecord(f"u{k}", np.full(7, 1.0 / 7)) for k in range(11)]
    uniform_ok = inception_score(uniform) == 1.0

    n = 9
    onehot = [ProbRecord(f"o{k}", np.eye(n)[k]) for k in range(n)]
    onehot_ok = abs(inception_score(onehot) - n) <= 1e-9

    probs = rng.dirichlet(np.ones(5), size=50)
    records = [ProbRecord(f"r{k}", p) for k, p in enumerate(probs)]
    marginal = probs.mean(axis=0)
    kls = [
        sum(p[c] * math.log(p[c] / marginal[c]) for c in range(5) if p[c] > 0) for p in probs
    ]
    want = math.exp(sum(kls) / len(kls))
    oracle_ok = abs(inception_score(records) - want) <= 1e-9
    _report("is-correctness", uniform_ok and onehot_ok and oracle_ok)


# --- detection metrics -------------------------------------------------------


def test_detection_metrics_criterion():
    gts = [
        ("img1", (0.0, 0.0, 10.0, 10.0)),
        ("img1", (20.0, 20.0, 30.0, 30.0)),
        ("img2", (0.0, 0.0, 10.0, 10.0)),
    ]
    preds = [
        ("img1", 0.9, (0.0, 0.0, 10.0, 10.0)),
        ("img1", 0.8, (20.0, 20.0, 30.0, 30.0)),
        ("img2", 0.7, (100.0, 100.0, 110.0, 110.0)),
        ("img2", 0.6, (0.0, 0.0, 10.0, 10.0)),
        ("img1", 0.5, (0.0, 0.0, 10.0, 10.0)),
    ]
    ap, p, r, f1 = detection_metrics(DetectionSet(preds, gts), 0.5)
    staircase_ok = (
        abs(ap - 11 / 12) <= 1e-12 and p == 0.6 and r == 1.0 and abs(f1 - 0.75) <= 1e-12
    )

    perfect = DetectionSet([(i, 1.0, b) for i, b in gts], gts)
    perfect_ok = detection_metrics(perfect, 0.5) == (1.0, 1.0, 1.0, 1.0)

    empty = DetectionSet([], gts)
    empty_ok = detection_metrics(empty, 0.5) == (0.0, 0.0, 0.0, 0.0)
    _report("detection-metrics", staircase_ok and perfect_ok and empty_ok)


# --- determinism and formats -------------------------------------------------


def _run_pipeline(root):
    os.makedirs(root, exist_ok=True)
    data = os.path.join(root, "data")
    ckpt = os.path.join(root, "model.pgck")
    db = os.path.join(root, "db.pgfs")
    props = os.path.join(root, "props.txt")
    gen = os.path.join(root, "gen.pgm")
    report = os.path.join(root, "report.txt")
    cfg = os.path.join(root, "run.ini")
    # 64x64 keeps the patch grid 8x8, large enough for clusters of >= 3
    with open(cfg, "w") as fh:
        fh.write("[run]\nseed = 17\n[data]\ncount = 64\nresolution = 64x64\n")
    assert cli_main(["synth-data", "--config", cfg, "--out", data]) == 0
    manifest = os.path.join(data, "manifest.txt")
    assert cli_main(["train", "--config", cfg, "--manifest", manifest,
                     "--checkpoint", ckpt, "--steps", "200"]) == 0
    assert cli_main(["build-db", "--config", cfg, "--manifest", manifest,
                     "--checkpoint", ckpt, "--out", db]) == 0
    from polypgen.synth import read_manifest

    normal = next(s for s in read_manifest(manifest) if s.bbox is None)
    image = os.path.join(data, "images", f"{normal.image_id}.pgm")
    assert cli_main(["propose", "--config", cfg, "--db", db, "--image", image,
                     "--out", props]) == 0
    assert cli_main(["generate", "--config", cfg, "--checkpoint", ckpt, "--image", image,
                     "--auto-mask", "--db", db, "--prompt", "polyp", "--out", gen]) == 0
    assert cli_main(["evaluate", "--config", cfg, "--real", manifest,
                     "--generated", os.path.join(data, "images"), "--out", report]) == 0
    return root


def test_determinism_and_formats(tmp_path):
    run_a = _run_pipeline(str(tmp_path / "a"))
    run_b = _run_pipeline(str(tmp_path / "b"))

    files_a = sorted(
        os.path.relpath(f, run_a)
        for f in glob.glob(os.path.join(run_a, "**", "*"), recursive=True)
        if os.path.isfile(f)
    )
    files_b = sorted(
        os.path.relpath(f, run_b)
        for f in glob.glob(os.path.join(run_b, "**", "*"), recursive=True)
        if os.path.isfile(f)
    )
    same_tree = files_a == files_b
    same_bytes = same_tree and all(
        open(os.path.join(run_a, f), "rb").read() == open(os.path.join(run_b, f), "rb").read()
        for f in files_a
    )

    # roundtrips are bit-exact
    from polypgen.diffusion.model import load_checkpoint, save_checkpoint
    from polypgen.featstore import read_store, write_store
    from polypgen.synth import read_manifest, write_manifest

    ckpt = os.path.join(run_a, "model.pgck")
    ck = load_checkpoint(ckpt)
    save_checkpoint(str(tmp_path / "rt.pgck"), ck.model, schedule=ck.schedule,
                    moments=ck.moments, step=ck.step)
    ckpt_rt = (tmp_path / "rt.pgck").read_bytes() == open(ckpt, "rb").read()

    store = os.path.join(run_a, "db.pgfs")
    write_store(read_store(store), str(tmp_path / "rt.pgfs"))
    store_rt = (tmp_path / "rt.pgfs").read_bytes() == open(store, "rb").read()

    manifest = os.path.join(run_a, "data", "manifest.txt")
    rt_dir = tmp_path / "manifest_rt"
    write_manifest(read_manifest(manifest), rt_dir)
    manifest_rt = (rt_dir / "manifest.txt").read_bytes() == open(manifest, "rb").read()

    # corrupted magics are rejected with exit code 2
    bad_ckpt = tmp_path / "bad.pgck"
    data = bytearray(open(ckpt, "rb").read())
    data[:4] = b"XXXX"
    bad_ckpt.write_bytes(bytes(data))
    bad_store = tmp_path / "bad.pgfs"
    data = bytearray(open(store, "rb").read())
    data[:4] = b"XXXX"
    bad_store.write_bytes(bytes(data))
    image = glob.glob(os.path.join(run_a, "data", "images", "*.pgm"))[0]
    exit_ckpt = cli_main(["build-db", "--manifest", manifest, "--checkpoint", str(bad_ckpt),
                          "--out", str(tmp_path / "x.pgfs")])
    exit_store = cli_main(["propose", "--db", str(bad_store), "--image", image,
                           "--out", str(tmp_path / "x.txt")])
    rejects_ok = exit_ckpt == 2 and exit_store == 2

    _report(
        "determinism-and-formats",
        same_bytes and ckpt_rt and store_rt and manifest_rt and rejects_ok,
        f"double-run byte-equal={same_bytes}, roundtrips={ckpt_rt and store_rt and manifest_rt}, "
        f"magic-rejects={rejects_ok}",
    )
