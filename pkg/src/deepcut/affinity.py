"""Dense patch-affinity graphs built from feature dot products.

Two flavours share the raw correlation ff^T:

  * normalized-cut graphs keep only nonnegative weights (threshold at zero),
  * correlation-clustering graphs keep sign and optionally subtract a uniform
    shift max(ff^T) / alpha, where a lower "k sensitivity" alpha means more
    repulsion and therefore more emergent clusters.

Graphs are complete by construction, so storage is dense; self-loops (the
squared row norms on the diagonal) are kept, which also keeps every degree
positive for thresholded graphs built from nonzero features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import ArgumentError, DegenerateGraphError
from .feature_io import FeatureField, GeometryMeta, l2_normalize

NCUT: Literal["ncut"] = "ncut"
CC: Literal["cc"] = "cc"

Kind = Literal["ncut", "cc"]


@dataclass(frozen=True)
class AffinityConfig:
    """Graph-construction knobs.

    alpha: uniform-shift sensitivity in [1, inf); None or inf disables the
    shift. normalize_features: L2-normalize rows before the dot products
    (off by default; the raw products are the reference behaviour).
    """

    alpha: float | None = None
    normalize_features: bool = False

    def __post_init__(self):
        if self.alpha is not None and not (
            math.isinf(self.alpha) or self.alpha >= 1.0
        ):
            raise ArgumentError(f"alpha must be >= 1 or infinite, got {self.alpha}")

    @property
    def shift_enabled(self) -> bool:
        return self.alpha is not None and math.isfinite(self.alpha)


@dataclass(frozen=True)
class AffinityMatrix:
    """Symmetric dense weight matrix with its cached row-sum degree vector."""

    n: int
    weights: np.ndarray  # (n, n) float64, symmetric
    degree: np.ndarray  # (n,) float64, degree[i] = sum_j weights[i, j]
    kind: Kind

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.shape != (self.n, self.n):
            raise ArgumentError(f"weights shape {w.shape} != ({self.n}, {self.n})")
        scale = max(np.abs(w).max(initial=0.0), 1.0)
        if np.abs(w - w.T).max(initial=0.0) > 1e-6 * scale:
            raise ArgumentError("weight matrix is not symmetric")
        if self.kind == NCUT:
            if w.min(initial=0.0) < 0.0:
                raise ArgumentError("ncut graph has negative weights")
            if (self.degree <= 0.0).any():
                node = int(np.argmax(self.degree <= 0.0))
                raise DegenerateGraphError(
                    f"ncut graph has nonpositive degree at node {node}"
                )
        row_sums = w.sum(axis=1)
        deg_scale = np.maximum(np.abs(row_sums), 1e-30)
        if (np.abs(row_sums - self.degree) > 1e-9 * deg_scale + 1e-12).any():
            raise ArgumentError("cached degree vector does not match row sums")
        w.flags.writeable = False
        deg = np.ascontiguousarray(self.degree, dtype=np.float64)
        deg.flags.writeable = False
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "degree", deg)

    @classmethod
    def from_weights(cls, weights: np.ndarray, kind: Kind) -> "AffinityMatrix":
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
            raise ArgumentError(f"weights must be square, got {weights.shape}")
        return cls(
            n=weights.shape[0],
            weights=weights,
            degree=weights.sum(axis=1),
            kind=kind,
        )


def _correlation(field: FeatureField, cfg: AffinityConfig) -> np.ndarray:
    if cfg.normalize_features:
        field = l2_normalize(field)
    f = field.feature_matrix()
    w = f @ f.T
    return (w + w.T) / 2.0  # exact symmetry despite fp summation order


def build_ncut_affinity(field: FeatureField, cfg: AffinityConfig) -> AffinityMatrix:
    """Nonnegative graph: raw correlations thresholded at zero.

    The self-loop keeps rows alive after thresholding; only an all-zero
    feature row (hence a zero diagonal) leaves a node isolated, which is an
    error because the degree matrix must stay invertible downstream.
    """
    w = _correlation(field, cfg)
    np.maximum(w, 0.0, out=w)
    diag = np.diagonal(w)
    if (diag == 0.0).any():
        node = int(np.argmax(diag == 0.0))
        raise DegenerateGraphError(
            f"node {node} has a zero feature vector and thresholds to an "
            "isolated node"
        )
    return AffinityMatrix.from_weights(w, NCUT)


def build_cc_affinity(field: FeatureField, cfg: AffinityConfig) -> AffinityMatrix:
    """Signed graph: raw correlations, optionally shifted down by max/alpha."""
    w = _correlation(field, cfg)
    if cfg.shift_enabled:
        w -= w.max() / cfg.alpha
    return AffinityMatrix.from_weights(w, CC)


def degree_vector(w: AffinityMatrix) -> np.ndarray:
    """Cached row sums of the weight matrix."""
    return w.degree


def induced_subfield(
    field: FeatureField, keep: np.ndarray
) -> tuple[FeatureField, np.ndarray]:
    """Restrict a field to a subset of patches.

    Returns the sub-field (an n_keep x 1 grid, flattened order preserved) and
    the kept flat indices mapping rows back to original grid positions.
    Downstream affinities must be rebuilt from the returned features so a
    shifted graph uses the subgraph's own maximum entry.
    """
    keep = np.asarray(keep, dtype=np.int64).ravel()
    if keep.size == 0:
        raise ArgumentError("keep subset is empty")
    n = field.n_patches
    if keep.min() < 0 or keep.max() >= n:
        raise ArgumentError(f"keep indices out of range [0, {n})")
    if len(np.unique(keep)) != keep.size:
        raise ArgumentError("keep indices contain duplicates")
    keep = np.sort(keep)
    sub = FeatureField(
        grid_h=int(keep.size),
        grid_w=1,
        embed_dim=field.embed_dim,
        features=field.features[keep],
        meta=GeometryMeta(
            image_h=int(keep.size),
            image_w=1,
            patch_size=1,
            stride=1,
            source_id=f"{field.meta.source_id}#subfield[{keep.size}]",
        ),
    )
    return sub, keep


def dump_weights(w: AffinityMatrix, sink) -> int:
    """Diagnostic-only dump of W in the DCUT payload layout.

    The n x n matrix is stored as a field with grid n x n and embed_dim 1;
    this is a debugging artifact, not a feature file.
    """
    from .feature_io import write_feature_field

    field = FeatureField(
        grid_h=w.n,
        grid_w=w.n,
        embed_dim=1,
        features=w.weights.reshape(-1, 1).astype(np.float32),
        meta=GeometryMeta(
            image_h=w.n,
            image_w=w.n,
            patch_size=1,
            stride=1,
            source_id=f"affinity-debug:{w.kind}",
        ),
    )
    return write_feature_field(field, sink)
