#!/usr/bin/env python3
"""Timing comparison of the hot kernels with and without numba.

The DEEPCUT_NUMBA flag is read at import time, so each mode runs in its own
subprocess. Besides wall times, every workload's result digest is compared
across modes: the two paths execute the same code and must agree bit for bit.

Usage: python3 benchmarks/bench_kernels.py
"""

import hashlib
import json
import os
import subprocess
import sys
import time

WORKLOADS = ("cc_enumeration", "ncut_enumeration", "graph_components", "grid_components", "localize")


def run_workload(name: str) -> dict:
    import numpy as np

    import deepcut as dc
    from deepcut import kernels

    rng = np.random.default_rng(0)

    if name == "cc_enumeration":
        m = rng.normal(size=(10, 10))
        w = (m + m.T) / 2
        kernels.rgs_min_cc(np.ascontiguousarray(w[:3, :3]))  # compile outside the timed region
        start = time.perf_counter()
        labels, value = kernels.rgs_min_cc(w)
        elapsed = time.perf_counter() - start
        digest = hashlib.sha256(
            np.asarray(labels).tobytes() + np.float64(value).tobytes()
        ).hexdigest()
    elif name == "ncut_enumeration":
        m = np.abs(rng.normal(size=(10, 10))) + 0.1
        w = (m + m.T) / 2
        deg = w.sum(axis=1)
        kernels.rgs_min_ncut(np.ascontiguousarray(w[:3, :3]), deg[:3].copy(), 2)
        start = time.perf_counter()
        labels, value = kernels.rgs_min_ncut(w, deg, 3)
        elapsed = time.perf_counter() - start
        digest = hashlib.sha256(
            np.asarray(labels).tobytes() + np.float64(value).tobytes()
        ).hexdigest()
    elif name == "graph_components":
        n = 1500
        m = rng.normal(size=(n, n)) - 1.2  # sparse positive edges
        w = (m + m.T) / 2
        kernels.positive_components(np.ascontiguousarray(w[:4, :4]))
        start = time.perf_counter()
        labels = kernels.positive_components(w)
        elapsed = time.perf_counter() - start
        digest = hashlib.sha256(np.asarray(labels).tobytes()).hexdigest()
    elif name == "grid_components":
        mask = rng.random((600, 600)) > 0.4
        kernels.grid_components(np.ascontiguousarray(mask[:4, :4]))
        start = time.perf_counter()
        comp, count = kernels.grid_components(mask)
        elapsed = time.perf_counter() - start
        digest = hashlib.sha256(
            np.asarray(comp).tobytes() + str(count).encode()
        ).hexdigest()
    elif name == "localize":
        planted = dc.synth_planted_object(35, 35, (8, 14, 24, 28), 0.05, 3, embed_dim=384)
        cfg = dc.TrainConfig(loss="ncut", k=2, epochs=10, seed=0)
        dc.localize(planted.field, cfg)  # warm BLAS and JIT
        start = time.perf_counter()
        result = dc.localize(planted.field, cfg)
        elapsed = time.perf_counter() - start
        digest = hashlib.sha256(
            json.dumps(result.patch_box.to_json()).encode()
            + result.mask.labels.tobytes()
        ).hexdigest()
    else:
        raise SystemExit(f"unknown workload {name}")
    return {"seconds": elapsed, "digest": digest}


def main() -> int:
    if len(sys.argv) == 2:  # child mode
        print(json.dumps(run_workload(sys.argv[1])))
        return 0

    print(f"{'workload':<20} {'numba':>10} {'python':>10} {'speedup':>9}  agree")
    for name in WORKLOADS:
        results = {}
        for mode, flag in (("numba", "1"), ("python", "0")):
            env = dict(os.environ, DEEPCUT_NUMBA=flag)
            proc = subprocess.run(
                [sys.executable, __file__, name],
                capture_output=True,
                text=True,
                env=env,
                check=True,
            )
            results[mode] = json.loads(proc.stdout.strip().splitlines()[-1])
        agree = results["numba"]["digest"] == results["python"]["digest"]
        speedup = results["python"]["seconds"] / max(results["numba"]["seconds"], 1e-9)
        print(
            f"{name:<20} {results['numba']['seconds']:>9.3f}s "
            f"{results['python']['seconds']:>9.3f}s {speedup:>8.1f}x  "
            f"{'yes' if agree else 'NO'}"
        )
        if not agree:
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
