"""Evaluation metrics: Frechet distance between feature Gaussians,
inception-style score from class-probability records, and detection
AP / precision / recall / F1."""

from dataclasses import dataclass

import numpy as np

from .errors import ManifestError
from .util import atomic_write_text, fmt


@dataclass
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    sample_count: int


def gaussian_stats(features) -> GaussianStats:
    """Sample mean and covariance (1/(n-1) normalization)."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least 2 feature vectors")
    mean = x.mean(axis=0)
    d = x - mean
    cov = d.T @ d / (x.shape[0] - 1)
    return GaussianStats(mean, cov, x.shape[0])


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix, eigenvalues clamped at 0."""
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term uses the symmetric similarity
    (S_a^{1/2} S_b S_a^{1/2})^{1/2}, whose trace equals Tr((S_a S_b)^{1/2}).
    """
    if a.mean.shape != b.mean.shape:
        raise ValueError("dimension mismatch between the two statistics")
    for s in (a, b):
        if not (np.isfinite(s.mean).all() and np.isfinite(s.cov).all()):
            raise ValueError("non-finite Gaussian statistics")
    root_a = _sym_sqrt(a.cov)
    inner = _sym_sqrt(root_a @ b.cov @ root_a)
    diff = a.mean - b.mean
    return float(diff @ diff + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(inner))


@dataclass
class ProbRecord:
    image_id: str
    probs: np.ndarray

    def validate(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
            raise ValueError(f"{self.image_id}: probabilities must form a simplex vector")


def _is_of(probs: np.ndarray) -> float:
    if (probs == probs[0]).all():
        marginal = probs[0]  # the mean of identical rows is the row, exactly
    else:
        marginal = probs.mean(axis=0)
    # 0 * log(0/q) = 0; p > 0 with marginal 0 cannot happen since the
    # marginal averages the rows
    ratio = np.where(probs > 0, probs / np.where(marginal > 0, marginal, 1.0), 1.0)
    kl = (probs * np.log(ratio)).sum(axis=1)
    return float(np.exp(kl.mean()))


def inception_score(records, splits: int = 1) -> float:
    """exp(mean KL(p_i || marginal)); mean over equal record splits if > 1."""
    if not records:
        raise ValueError("need at least one probability record")
    for r in records:
        r.validate()
    probs = np.array([np.asarray(r.probs, dtype=np.float64) for r in records])
    if splits <= 1:
        return _is_of(probs)
    chunks = np.array_split(probs, splits)
    return float(np.mean([_is_of(c) for c in chunks if len(c)]))


def iou(rect_a, rect_b) -> float:
    ax0, ay0, ax1, ay1 = rect_a
    bx0, by0, bx1, by1 = rect_b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return float(inter / union)


@dataclass
class DetectionSet:
    predictions: list  # (image_id, confidence, (x0, y0, x1, y1))
    ground_truth: list  # (image_id, (x0, y0, x1, y1))

    def validate(self):
        for image_id, conf, box in self.predictions:
            if not 0.0 <= conf <= 1.0:
                raise ValueError(f"{image_id}: confidence {conf} outside [0, 1]")
            x0, y0, x1, y1 = box
            if not (x1 > x0 and y1 > y0):
                raise ValueError(f"{image_id}: degenerate predicted box {box}")
        for image_id, box in self.ground_truth:
            x0, y0, x1, y1 = box
            if not (x1 > x0 and y1 > y0):
                raise ValueError(f"{image_id}: degenerate ground-truth box {box}")


def detection_metrics(det: DetectionSet, iou_threshold: float = 0.5):
    """(AP, precision, recall, F1) with greedy best-IoU matching.

    Predictions are ranked by confidence (ties: image id, then insertion
    order); each matches the best unmatched ground-truth box in its image
    when IoU clears the threshold. AP integrates the all-point
    interpolated precision envelope over recall. The operating point
    includes every prediction; empty-prediction precision is 0.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    det.validate()
    n_gt = len(det.ground_truth)
    if n_gt == 0:
        raise ValueError("no ground-truth boxes; recall is undefined")

    gt_by_image: dict = {}
    for image_id, box in det.ground_truth:
        gt_by_image.setdefault(image_id, []).append([box, False])

    order = sorted(
        range(len(det.predictions)),
        key=lambda i: (-det.predictions[i][1], det.predictions[i][0], i),
    )
    tp_flags = []
    for i in order:
        image_id, _conf, box = det.predictions[i]
        best_iou, best = 0.0, None
        for slot in gt_by_image.get(image_id, []):
            if slot[1]:
                continue
            v = iou(box, slot[0])
            if v > best_iou:
                best_iou, best = v, slot
        if best is not None and best_iou >= iou_threshold:
            best[1] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)

    if not tp_flags:
        return 0.0, 0.0, 0.0, 0.0
    tp_cum = np.cumsum(tp_flags)
    fp_cum = np.cumsum([not f for f in tp_flags])
    recall = tp_cum / n_gt
    precision = tp_cum / (tp_cum + fp_cum)

    # precision envelope: best precision at any recall >= r
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recall, envelope):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r

    p_final = float(precision[-1])
    r_final = float(recall[-1])
    f1 = 0.0 if p_final * r_final == 0 else 2 * p_final * r_final / (p_final + r_final)
    return float(ap), p_final, r_final, f1


def write_prob_records(path, records) -> None:
    lines = [
        "\t".join([r.image_id] + [fmt(p) for p in np.asarray(r.probs, dtype=np.float64)])
        for r in records
    ]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_prob_records(path) -> list[ProbRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) < 2:
                raise ManifestError(f"{path}:{lineno}: expected id and probabilities")
            try:
                probs = np.array([float(v) for v in fields[1:]])
            except ValueError:
                raise ManifestError(f"{path}:{lineno}: malformed probability") from None
            rec = ProbRecord(fields[0], probs)
            try:
                rec.validate()
            except ValueError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            records.append(rec)
    return records


def read_detections(pred_path, gt_path) -> DetectionSet:
    """Predictions: ``id conf x0 y0 x1 y1``; ground truth: ``id x0 y0 x1 y1``."""
    preds = []
    with open(pred_path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise ManifestError(f"{pred_path}:{lineno}: expected 6 fields")
            try:
                conf = float(fields[1])
                box = tuple(float(v) for v in fields[2:])
            except ValueError:
                raise ManifestError(f"{pred_path}:{lineno}: malformed number") from None
            preds.append((fields[0], conf, box))
    gts = []
    with open(gt_path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != 5:
                raise ManifestError(f"{gt_path}:{lineno}: expected 5 fields")
            try:
                box = tuple(float(v) for v in fields[1:])
            except ValueError:
                raise ManifestError(f"{gt_path}:{lineno}: malformed number") from None
            gts.append((fields[0], box))
    return DetectionSet(preds, gts)
