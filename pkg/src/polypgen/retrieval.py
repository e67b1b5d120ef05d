"""Hierarchical retrieval-based mask proposer.

Stage one ranks database entries by L2 distance between mean-pooled
global features. Stage two matches each sufficiently masked candidate
patch to its nearest query patch, clusters the matched query locations
with DBSCAN, and turns the largest cluster into a patch-aligned
rectangle proposal.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import kernels
from .diffusion.model import DenoiserModel
from .diffusion.sample import ddim_sample
from .diffusion.schedule import Schedule
from .errors import IngestionError
from .featstore import DatabaseEntry, FeatureDB, FeatureGrid, masked_patch_indices, write_store
from .featurize import patch_features
from .masks import Prompt, bbox_mask
from .synth import Label
from .util import stage_seed


@dataclass
class Match:
    query_patch: int
    cand_patch: int
    distance: float
    query_center: tuple[float, float]  # (x, y) pixels


@dataclass
class ClusterParams:
    eps_radius: float  # neighborhood radius in pixels, conventionally 2P+1
    min_points: int = 3

    def validate(self):
        if self.eps_radius <= 0:
            raise ValueError("eps_radius must be positive")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")


@dataclass
class MaskProposal:
    rect: tuple[int, int, int, int]  # (x0, y0, x1, y1) pixels
    source_entry_id: str
    cluster_size: int
    score: float  # mean match distance, lower is better


def top_k_global(query: FeatureGrid, db: FeatureDB, k: int) -> list[str]:
    """Entry ids sorted by ascending global-feature distance, ties by id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not db.entries:
        raise ValueError("database is empty")
    if db.channels != query.grid.shape[2]:
        raise ValueError(f"channel mismatch: query {query.grid.shape[2]}, db {db.channels}")
    from .featstore import global_feature

    q = global_feature(query)
    ranked = sorted(
        (float(np.sqrt(np.sum((e.global_feature - q) ** 2))), e.entry_id)
        for e in db.entries
    )
    return [entry_id for _, entry_id in ranked[:k]]


def match_patches(query: FeatureGrid, cand: DatabaseEntry) -> list[Match]:
    """One match per masked candidate patch: the nearest query patch,
    ties broken by the smallest query index."""
    grid_c = cand.features
    if grid_c.grid.shape[2] != query.grid.shape[2] or grid_c.patch_size != query.patch_size:
        raise ValueError("query and candidate disagree on C or P")
    masked = masked_patch_indices(cand.polyp_mask, grid_c.patch_size)
    if not masked:
        return []
    d2 = kernels.pairwise_sqdist(grid_c.vectors()[masked], query.vectors())
    p_size = query.patch_size
    wp = query.grid.shape[1]
    out = []
    for row, v in enumerate(masked):
        u = int(np.argmin(d2[row]))
        center = ((u % wp) * p_size + p_size / 2.0, (u // wp) * p_size + p_size / 2.0)
        out.append(Match(u, int(v), float(np.sqrt(d2[row, u])), center))
    return out


def dbscan(points, params: ClusterParams) -> np.ndarray:
    """Euclidean DBSCAN labels; -1 marks noise.

    A point is core iff its eps-neighborhood (inclusive, counting itself)
    holds at least min_points points. Seeds expand in input order, so
    labels are deterministic.
    """
    params.validate()
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    n = pts.shape[0]
    labels = np.full(n, -1, dtype=int)
    if n == 0:
        return labels
    within = kernels.pairwise_sqdist(pts, pts) <= params.eps_radius**2
    core = within.sum(axis=1) >= params.min_points
    cluster = 0
    for seed in range(n):
        if labels[seed] != -1 or not core[seed]:
            continue
        labels[seed] = cluster
        queue = [seed]
        while queue:
            j = queue.pop(0)
            if not core[j]:
                continue
            for k in np.nonzero(within[j])[0]:
                if labels[k] == -1:
                    labels[k] = cluster
                    queue.append(int(k))
        cluster += 1
    return labels


def _cluster_rect(centers, patch_size, image_dims):
    """Minimal patch-aligned rectangle containing the given patch centers."""
    h, w = image_dims
    cols = np.floor(np.asarray([c[0] for c in centers]) / patch_size).astype(int)
    rows = np.floor(np.asarray([c[1] for c in centers]) / patch_size).astype(int)
    x0 = max(int(cols.min()) * patch_size, 0)
    y0 = max(int(rows.min()) * patch_size, 0)
    x1 = min((int(cols.max()) + 1) * patch_size, w)
    y1 = min((int(rows.max()) + 1) * patch_size, h)
    return (x0, y0, x1, y1)


def propose_masks(query: FeatureGrid, db: FeatureDB, k: int,
                  params: ClusterParams) -> list[MaskProposal]:
    """At most one proposal per top-k candidate, ranked by
    (cluster size desc, mean match distance asc)."""
    query.validate()
    proposals = []
    for entry_id in top_k_global(query, db, k):
        cand = db.by_id(entry_id)
        matches = match_patches(query, cand)
        if not matches:
            continue
        labels = dbscan([m.query_center for m in matches], params)
        best = None  # (size, mean_distance, members)
        for lab in range(labels.max() + 1):
            members = [m for m, l in zip(matches, labels) if l == lab]
            mean_d = float(np.mean([m.distance for m in members]))
            key = (-len(members), mean_d)
            if best is None or key < best[0]:
                best = (key, members)
        if best is None:
            continue
        (neg_size, mean_d), members = best
        rect = _cluster_rect(
            [m.query_center for m in members], query.patch_size, query.image_dims
        )
        proposals.append(MaskProposal(rect, entry_id, -neg_size, mean_d))
    proposals.sort(key=lambda p: (-p.cluster_size, p.score))
    return proposals


def build_database(
    samples,
    model: DenoiserModel,
    sched: Schedule,
    out_path,
    patch_size: int = 8,
    channels: int = 8,
    ddim_steps: int = 50,
    seed: int = 0,
    feature_lookup: Optional[Callable[[str, np.ndarray], FeatureGrid]] = None,
) -> FeatureDB:
    """Convert each polyp sample to a normal image, featurize it, and store
    it with the source polyp mask. Deterministic for fixed inputs."""
    entries = []
    for s in samples:
        if s.label is not Label.POLYP:
            continue
        h, w = s.image.shape
        mask = bbox_mask(s.bbox, h, w)
        normal = ddim_sample(
            model, sched, s.image, mask, Prompt.NORMAL,
            steps=ddim_steps, seed=stage_seed(seed, f"build-db:{s.image_id}"),
        )
        if feature_lookup is not None:
            grid = feature_lookup(s.image_id, normal)
        else:
            grid = patch_features(normal, s.image_id, patch_size, channels)
        entries.append(DatabaseEntry(s.image_id, grid, mask))
    db = FeatureDB(entries)
    write_store(db, out_path, channels=channels, patch_size=patch_size)
    return db


def feature_lookup_from_store(db: FeatureDB) -> Callable[[str, np.ndarray], FeatureGrid]:
    """Adapter-exported grids: resolve features by image id, ignoring pixels."""
    index = {e.entry_id: e.features for e in db.entries}

    def lookup(image_id: str, _image) -> FeatureGrid:
        if image_id not in index:
            raise IngestionError(f"no exported features for image {image_id!r}")
        return index[image_id]

    return lookup
