"""Clustering/localization metrics and the classical baselines they compare
against (connected components over positive edges; spectral clustering with
eigen-gap model selection).

Label-based metrics work on arbitrary integer labelings and are invariant to
relabeling of the prediction. NMI normalizes mutual information by the
geometric mean of the entropies; ARI is the standard pair-counting adjusted
index with the degenerate-denominator case (two identical trivial labelings)
defined as 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .affinity import NCUT, AffinityMatrix
from .errors import ArgumentError, NumericError
from .kernels import positive_components
from .masks import BBox, LabelMask


@dataclass(frozen=True)
class MetricReport:
    n_images: int
    corloc: float | None = None
    miou: float | None = None
    nmi: float | None = None
    ari: float | None = None
    purity: float | None = None

    def to_json(self) -> dict:
        obj = {"n_images": self.n_images}
        for name in ("corloc", "miou", "nmi", "ari", "purity"):
            value = getattr(self, name)
            if value is not None:
                obj[name] = float(value)
        return obj


def iou_bbox(a: BBox, b: BBox) -> float:
    """Intersection over union with inclusive integer coordinates."""
    ih = min(a.row1, b.row1) - max(a.row0, b.row0) + 1
    iw = min(a.col1, b.col1) - max(a.col0, b.col0) + 1
    inter = max(ih, 0) * max(iw, 0)
    union = a.area + b.area - inter
    return inter / union


def corloc(preds: list[BBox], truths: list[BBox]) -> float:
    """Fraction of pairs with IoU strictly above 0.5."""
    if len(preds) != len(truths):
        raise ArgumentError(
            f"{len(preds)} predictions vs {len(truths)} ground-truth boxes"
        )
    if not preds:
        raise ArgumentError("corloc needs at least one box pair")
    hits = sum(1 for p, t in zip(preds, truths) if iou_bbox(p, t) > 0.5)
    return hits / len(preds)


def miou_mask(pred: LabelMask, truth: LabelMask) -> float:
    """Mean of foreground and background IoU for binary masks.

    A class absent from both masks contributes nothing (avoids 0/0).
    """
    if (pred.grid_h, pred.grid_w) != (truth.grid_h, truth.grid_w):
        raise ArgumentError(
            f"mask dims {pred.grid_h}x{pred.grid_w} vs "
            f"{truth.grid_h}x{truth.grid_w}"
        )
    p = pred.labels != 0
    t = truth.labels != 0
    ious = []
    for cls_p, cls_t in ((p, t), (~p, ~t)):
        union = (cls_p | cls_t).sum()
        if union == 0:
            continue
        ious.append((cls_p & cls_t).sum() / union)
    return float(np.mean(ious))


def _contingency(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def _as_labels(a, b, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.size != b.size:
        raise ArgumentError(f"labelings differ in length: {a.size} vs {b.size}")
    if a.size < min_len:
        raise ArgumentError(f"labelings need length >= {min_len}, got {a.size}")
    return a, b


def nmi(a, b) -> float:
    """Mutual information over the geometric mean of entropies, natural logs.

    Two constant labelings agree perfectly (1.0); exactly one constant
    labeling carries no information (0.0).
    """
    a, b = _as_labels(a, b, 1)
    table = _contingency(a, b)
    n = table.sum()
    pa = table.sum(axis=1) / n
    pb = table.sum(axis=0) / n
    ha = float(-(pa * np.log(pa)).sum())
    hb = float(-(pb * np.log(pb)).sum())
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    nonzero = table > 0
    if (nonzero.sum(axis=0) == 1).all() and (nonzero.sum(axis=1) == 1).all():
        # identical partitions up to relabeling: exactly 1 by definition
        return 1.0
    pij = table / n
    mask = pij > 0
    outer = np.outer(pa, pb)
    info = float((pij[mask] * np.log(pij[mask] / outer[mask])).sum())
    return float(min(max(info / np.sqrt(ha * hb), 0.0), 1.0))


def ari(a, b) -> float:
    """Adjusted Rand index by pair counting."""
    a, b = _as_labels(a, b, 2)
    table = _contingency(a, b)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table.astype(np.float64)).sum()
    sum_a = comb2(table.sum(axis=1).astype(np.float64)).sum()
    sum_b = comb2(table.sum(axis=0).astype(np.float64)).sum()
    total = comb2(float(a.size))
    expected = sum_a * sum_b / total
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        # both labelings are the same trivial partition
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def purity(pred, truth) -> float:
    """Fraction of items in the majority truth class of their predicted cluster."""
    pred, truth = _as_labels(pred, truth, 1)
    table = _contingency(pred, truth)
    return float(table.max(axis=1).sum() / pred.size)


def _kmeans(points: np.ndarray, k: int, restarts: int, seed: int) -> np.ndarray:
    """Seeded Lloyd iterations with farthest-point init; best of `restarts`."""
    n = points.shape[0]
    best_labels = None
    best_inertia = np.inf
    for restart in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence((seed, restart)))
        centers = np.empty((k, points.shape[1]))
        centers[0] = points[rng.integers(n)]
        dists = ((points - centers[0]) ** 2).sum(axis=1)
        for j in range(1, k):
            centers[j] = points[int(np.argmax(dists))]
            dists = np.minimum(dists, ((points - centers[j]) ** 2).sum(axis=1))
        labels = np.zeros(n, dtype=np.int64)
        for _ in range(100):
            sq = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = np.argmin(sq, axis=1)
            for j in range(k):
                members = new_labels == j
                if members.any():
                    centers[j] = points[members].mean(axis=0)
                else:
                    # revive an empty cluster at the worst-fit point
                    farthest = int(np.argmax(sq[np.arange(n), new_labels]))
                    centers[j] = points[farthest]
                    new_labels[farthest] = j
            if (new_labels == labels).all():
                break
            labels = new_labels
        inertia = float(((points - centers[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels
    return best_labels


def spectral_baseline(
    w: AffinityMatrix,
    k: int | None = None,
    k_max: int = 10,
    seed: int = 0,
    restarts: int = 20,
) -> np.ndarray:
    """Normalized-Laplacian spectral clustering.

    With k unset, picks k in [2, k_max] at the largest gap in the ascending
    eigenvalue sequence. Rows of the k-dimensional spectral embedding are
    unit-normalized and clustered by seeded k-means.
    """
    if w.kind != NCUT:
        raise ArgumentError("spectral baseline needs a nonnegative graph")
    inv_sqrt = 1.0 / np.sqrt(w.degree)
    lap = np.eye(w.n) - inv_sqrt[:, None] * w.weights * inv_sqrt[None, :]
    try:
        evals, evecs = scipy.linalg.eigh(lap)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from exc
    if k is None:
        top = min(k_max, w.n - 1)
        if top < 2:
            k = 1
        else:
            gaps = [evals[kk] - evals[kk - 1] for kk in range(2, top + 1)]
            k = 2 + int(np.argmax(gaps))
    if not 1 <= k <= w.n:
        raise ArgumentError(f"k={k} outside [1, {w.n}]")
    emb = evecs[:, :k].copy()
    norms = np.linalg.norm(emb, axis=1)
    emb[norms > 0] /= norms[norms > 0, None]
    return _kmeans(emb, k, restarts, seed)


def cc_components_baseline(w: AffinityMatrix) -> np.ndarray:
    """Connected components over strictly positive off-diagonal weights."""
    return np.asarray(positive_components(w.weights), dtype=np.int64)
