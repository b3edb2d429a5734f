"""Clustering objectives: relaxed losses with exact gradients, and their
discrete counterparts with brute-force minimizers for testing.

The normalized-cut relaxation is, for assignment S, weights W and degree
diagonal D:

    L = sign * Tr(S^T W S) / Tr(S^T D S)
        + || S^T S / ||S^T S||_F  -  I_K / sqrt(K) ||_F

with sign = -1 by default: minimizing the association ratio with a plus sign
would penalize strongly connected clusters, so the default rewards them. The
plus-sign variant stays available via literal_sign=True for comparison.

The correlation-clustering loss is L = -Tr(W S S^T); on a signed graph its
hard-assignment value equals the discrete functional below, so the two are
cross-checked in tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .affinity import CC, NCUT, AffinityMatrix
from .errors import (
    ArgumentError,
    DegeneratePartitionError,
    NumericError,
    SizeError,
)


@dataclass(frozen=True)
class LossValue:
    value: float
    dL_dS: np.ndarray  # (n, K)

    def __post_init__(self):
        if not np.isfinite(self.value) or not np.isfinite(self.dL_dS).all():
            raise NumericError("loss or gradient is non-finite")


@dataclass(frozen=True)
class Partition:
    """Hard labeling with labels in [0, k)."""

    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if labels.ndim != 1:
            raise ArgumentError("partition labels must be 1-D")
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ArgumentError(f"labels outside [0, {self.k})")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels: np.ndarray) -> "Partition":
        """Compact arbitrary nonnegative labels to canonical [0, k) ids."""
        labels = np.asarray(labels, dtype=np.int64).ravel()
        _, compact = np.unique(labels, return_inverse=True)
        return cls(labels=compact, k=int(compact.max()) + 1 if compact.size else 0)

    def one_hot(self) -> np.ndarray:
        s = np.zeros((self.labels.size, self.k), dtype=np.float64)
        s[np.arange(self.labels.size), self.labels] = 1.0
        return s


def _check_shapes(s: np.ndarray, w: AffinityMatrix) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != w.n:
        raise ArgumentError(
            f"assignment shape {s.shape} does not match graph with n={w.n}"
        )
    return s


def ncut_loss(
    s: np.ndarray, w: AffinityMatrix, literal_sign: bool = False
) -> LossValue:
    """Relaxed normalized cut plus the orthogonality/balance penalty."""
    if w.kind != NCUT:
        raise ArgumentError(f"ncut_loss needs an ncut graph, got kind={w.kind!r}")
    s = _check_shapes(s, w)
    k = s.shape[1]
    sign = 1.0 if literal_sign else -1.0

    ws = w.weights @ s
    num = float(np.sum(s * ws))  # Tr(S^T W S)
    ds = w.degree[:, None] * s
    den = float(np.sum(s * ds))  # Tr(S^T D S)
    if den <= 1e-12:
        raise DegeneratePartitionError(
            f"degenerate denominator Tr(S^T D S) = {den:.3e}"
        )
    ratio_grad = (2.0 / den) * ws - (2.0 * num / den**2) * ds
    value = sign * num / den
    grad = sign * ratio_grad

    # Balance term: distance of the normalized Gram matrix from I_K / sqrt(K).
    gram = s.T @ s
    gram_norm = float(np.linalg.norm(gram))
    if gram_norm <= 0.0:
        raise DegeneratePartitionError("assignment matrix is identically zero")
    target = np.eye(k) / np.sqrt(k)
    diff = gram / gram_norm - target
    penalty = float(np.linalg.norm(diff))
    value += penalty
    if penalty > 1e-30:
        # d||T||_F/dGram with T = Gram/||Gram|| - target, then dGram/dS = 2 S.
        dpen_dgram = diff / (penalty * gram_norm) - (
            float(np.sum(diff * gram)) / (penalty * gram_norm**3)
        ) * gram
        grad = grad + 2.0 * (s @ dpen_dgram)
    return LossValue(value=value, dL_dS=grad)


def cc_loss(s: np.ndarray, w: AffinityMatrix) -> LossValue:
    """Correlation-clustering loss -Tr(W S S^T) and its gradient -(W + W^T) S."""
    s = _check_shapes(s, w)
    ws = w.weights @ s
    value = -float(np.sum(s * ws))
    grad = -(ws + w.weights.T @ s)
    return LossValue(value=value, dL_dS=grad)


def discrete_ncut(p: Partition, w: AffinityMatrix) -> float:
    """K-way normalized cut: sum over clusters of cut/assoc."""
    if w.kind != NCUT:
        raise ArgumentError(f"discrete_ncut needs an ncut graph, got {w.kind!r}")
    if p.labels.size != w.n:
        raise ArgumentError(f"partition over {p.labels.size} nodes, graph has {w.n}")
    value = 0.0
    for c in range(p.k):
        members = p.labels == c
        if not members.any():
            continue
        assoc = float(w.degree[members].sum())
        if assoc <= 0.0:
            raise DegeneratePartitionError(
                f"cluster {c} has zero association mass"
            )
        cut = float(w.weights[np.ix_(members, ~members)].sum())
        value += cut / assoc
    return value


def discrete_cc(p: Partition, w: AffinityMatrix) -> float:
    """-sum of weights over ordered same-cluster pairs (diagonal included)."""
    if p.labels.size != w.n:
        raise ArgumentError(f"partition over {p.labels.size} nodes, graph has {w.n}")
    total = 0.0
    for c in range(max(p.k, 1)):
        members = p.labels == c
        if members.any():
            total += float(w.weights[np.ix_(members, members)].sum())
    return -total


def brute_force_cc(w: AffinityMatrix, n_max: int = 10) -> Partition:
    """Exact correlation-clustering minimizer over all set partitions."""
    if w.n > n_max:
        raise SizeError(f"exact enumeration capped at n={n_max}, graph has {w.n}")
    labels, _ = kernels.rgs_min_cc(w.weights)
    return Partition(labels=np.asarray(labels), k=int(labels.max()) + 1)


def brute_force_ncut(w: AffinityMatrix, k: int, n_max: int = 10) -> Partition:
    """Exact normalized-cut minimizer over surjective k-labelings."""
    if w.n > n_max:
        raise SizeError(f"exact enumeration capped at n={n_max}, graph has {w.n}")
    if not 1 <= k <= w.n:
        raise ArgumentError(f"k={k} outside [1, {w.n}]")
    if w.kind != NCUT:
        raise ArgumentError(f"brute_force_ncut needs an ncut graph, got {w.kind!r}")
    labels, value = kernels.rgs_min_ncut(w.weights, w.degree, k)
    if not np.isfinite(value):
        raise DegeneratePartitionError(
            f"every {k}-labeling has a zero-association cluster"
        )
    return Partition(labels=np.asarray(labels), k=k)
