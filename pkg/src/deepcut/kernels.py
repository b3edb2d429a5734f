"""Loop-heavy kernels, JIT-compiled unless DEEPCUT_NUMBA=0.

Each kernel also stays importable as a plain-Python function (`*_py`) so the
benchmark in benchmarks/bench_kernels.py can time both paths in one process.
The matmul-dominated math elsewhere stays on BLAS; only genuine Python loops
live here: restricted-growth-string partition enumeration and breadth-first
component labeling.

Partitions are represented as restricted growth strings: labels[0] == 0 and
labels[i] <= max(labels[:i]) + 1, enumerated in lexicographic order.
"""

from __future__ import annotations

import numpy as np

from ._accel import maybe_njit


def _cc_partition_value_impl(w, labels):
    # -sum of w[i, j] over ordered same-cluster pairs, diagonal included.
    n = w.shape[0]
    total = 0.0
    for i in range(n):
        li = labels[i]
        for j in range(n):
            if labels[j] == li:
                total += w[i, j]
    return -total


def _ncut_partition_value_impl(w, deg, labels, k):
    # sum over clusters of cut(cluster, rest) / assoc(cluster, all).
    # Returns +inf for a zero-association cluster so callers can skip it.
    n = w.shape[0]
    value = 0.0
    for c in range(k):
        cut = 0.0
        assoc = 0.0
        for i in range(n):
            if labels[i] == c:
                assoc += deg[i]
                for j in range(n):
                    if labels[j] != c:
                        cut += w[i, j]
        # a cluster with no association mass makes the functional undefined
        if assoc <= 0.0:
            return np.inf
        value += cut / assoc
    return value


def _advance_rgs(a, m):
    # In-place step to the next restricted growth string; False when done.
    n = a.shape[0]
    i = n - 1
    while i > 0 and a[i] > m[i - 1]:
        i -= 1
    if i == 0:
        return False
    a[i] += 1
    m[i] = a[i] if a[i] > m[i - 1] else m[i - 1]
    for j in range(i + 1, n):
        a[j] = 0
        m[j] = m[i]
    return True


def _lex_smaller(a, b):
    for t in range(a.shape[0]):
        if a[t] != b[t]:
            return a[t] < b[t]
    return False


def _rgs_min_cc_impl(w):
    """Exact minimum of the correlation-clustering value over all partitions.

    Ties break to fewer clusters, then to the lexicographically smallest
    growth string. Returns (labels, value).
    """
    n = w.shape[0]
    a = np.zeros(n, np.int64)
    m = np.zeros(n, np.int64)
    best = a.copy()
    best_val = _cc_partition_value_impl(w, a)
    best_k = 1
    while _advance_rgs(a, m):
        v = _cc_partition_value_impl(w, a)
        k = m[n - 1] + 1
        take = False
        if v < best_val:
            take = True
        elif v == best_val:
            if k < best_k:
                take = True
            elif k == best_k and _lex_smaller(a, best):
                take = True
        if take:
            best[:] = a
            best_val = v
            best_k = k
    return best, best_val


def _rgs_min_ncut_impl(w, deg, k):
    """Exact minimum normalized cut over surjective k-labelings.

    Same tie-breaking as the correlation-clustering search (the cluster count
    is fixed, so only the lexicographic rule applies). Returns
    (labels, value); value is +inf if every k-labeling is degenerate.
    """
    n = w.shape[0]
    a = np.zeros(n, np.int64)
    m = np.zeros(n, np.int64)
    best = a.copy()
    best_val = np.inf
    found = False
    if k == 1:
        return a, _ncut_partition_value_impl(w, deg, a, 1)
    while _advance_rgs(a, m):
        if m[n - 1] + 1 != k:
            continue
        v = _ncut_partition_value_impl(w, deg, a, k)
        take = False
        if not found or v < best_val:
            take = True
        elif v == best_val and _lex_smaller(a, best):
            take = True
        if take:
            best[:] = a
            best_val = v
            found = True
    return best, best_val


def _positive_components_impl(w):
    """Connected components over edges with w[i, j] > 0, diagonal ignored.

    Components are numbered by the smallest node index they contain.
    """
    n = w.shape[0]
    labels = np.full(n, -1, np.int64)
    stack = np.empty(n, np.int64)
    comp = 0
    for s in range(n):
        if labels[s] >= 0:
            continue
        labels[s] = comp
        stack[0] = s
        top = 1
        while top > 0:
            top -= 1
            u = stack[top]
            for v in range(n):
                if v != u and labels[v] < 0 and w[u, v] > 0.0:
                    labels[v] = comp
                    stack[top] = v
                    top += 1
        comp += 1
    return labels


def _grid_components_impl(mask):
    """4-connected components of a boolean grid.

    Returns (component map with -1 off-mask, component count).
    """
    h, w = mask.shape
    comp = np.full((h, w), -1, np.int64)
    stack = np.empty((h * w, 2), np.int64)
    count = 0
    for r0 in range(h):
        for c0 in range(w):
            if not mask[r0, c0] or comp[r0, c0] >= 0:
                continue
            comp[r0, c0] = count
            stack[0, 0] = r0
            stack[0, 1] = c0
            top = 1
            while top > 0:
                top -= 1
                r = stack[top, 0]
                c = stack[top, 1]
                if r > 0 and mask[r - 1, c] and comp[r - 1, c] < 0:
                    comp[r - 1, c] = count
                    stack[top, 0] = r - 1
                    stack[top, 1] = c
                    top += 1
                if r + 1 < h and mask[r + 1, c] and comp[r + 1, c] < 0:
                    comp[r + 1, c] = count
                    stack[top, 0] = r + 1
                    stack[top, 1] = c
                    top += 1
                if c > 0 and mask[r, c - 1] and comp[r, c - 1] < 0:
                    comp[r, c - 1] = count
                    stack[top, 0] = r
                    stack[top, 1] = c - 1
                    top += 1
                if c + 1 < w and mask[r, c + 1] and comp[r, c + 1] < 0:
                    comp[r, c + 1] = count
                    stack[top, 0] = r
                    stack[top, 1] = c + 1
                    top += 1
            count += 1
    return comp, count


# Rebind the helper names first so the outer kernels resolve them to the
# jitted dispatchers at compile time. With DEEPCUT_NUMBA=0 every maybe_njit
# is the identity and the whole module runs as plain Python.
_cc_partition_value_impl = maybe_njit(_cc_partition_value_impl)
_ncut_partition_value_impl = maybe_njit(_ncut_partition_value_impl)
_advance_rgs = maybe_njit(_advance_rgs)
_lex_smaller = maybe_njit(_lex_smaller)

cc_partition_value = _cc_partition_value_impl
ncut_partition_value = _ncut_partition_value_impl
rgs_min_cc = maybe_njit(_rgs_min_cc_impl)
rgs_min_ncut = maybe_njit(_rgs_min_ncut_impl)
positive_components = maybe_njit(_positive_components_impl)
grid_components = maybe_njit(_grid_components_impl)
