"""Second-order kernel benchmark: wall time and peak auxiliary memory.

Variants
--------
naive
    materializes every C(i, j | k): O(batch * R * N^3) memory.
efficient
    masked exp factors + one batched matmul: O(batch * R * N^2).
loop-compiled, loop-python
    the triple-loop reference, compiled vs pure-Python backend.
"""
import gc
import time
import tracemalloc

import numpy as np
from threadpoolctl import threadpool_limits

from sorel import kernels
from sorel.pairs import MentionSets, PairIndex
from sorel.second_order import second_order_dense, second_order_fused

VARIANTS = ("naive", "efficient", "loop-compiled", "loop-python")


def make_instance(N, R, batch, mention_size=2, seed=0):
    """Random B [batch, N, R, N] with one candidate pair per batch row."""
    rng = np.random.default_rng(seed)
    B = rng.uniform(-5.0, 5.0, size=(batch, N, R, N))
    entries = []
    for b in range(batch):
        pos = rng.choice(N, size=2 * mention_size, replace=False)
        entries.append((b, MentionSets(pos[:mention_size], pos[mention_size:])))
    index = PairIndex.build(entries, np.ones((batch, N), dtype=bool))
    return B, index


def _loop_runner(impl):
    def run(B, index):
        out = np.empty((len(index), B.shape[2]))
        for p in range(len(index)):
            Bd = B[index.doc[p]]
            out[p] = kernels.second_order_loop(Bd, np.flatnonzero(index.head[p]), np.flatnonzero(index.tail[p]),
                                               np.flatnonzero(index.ctx[p]), impl=impl)
        return out
    return run


def runners():
    found = kernels.backends()
    out = {
        "naive": second_order_dense,
        "efficient": lambda B, index: second_order_fused(B, index)[0],
        "loop-python": _loop_runner(found["python"]),
    }
    if "compiled" in found:
        out["loop-compiled"] = _loop_runner(found["compiled"])
    return out


def measure_peak(fn, *args):
    """Peak bytes allocated above the pre-call baseline while ``fn`` runs."""
    gc.collect()
    tracemalloc.start()
    try:
        tracemalloc.reset_peak()
        base, _ = tracemalloc.get_traced_memory()
        result = fn(*args)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    del result
    return peak - base


def measure_time(fn, *args, inner=1):
    fn(*args)  # warm-up
    t0 = time.perf_counter_ns()
    for _ in range(inner):
        fn(*args)
    return (time.perf_counter_ns() - t0) // inner


def run_benchmark(sizes, variants=("naive", "efficient"), repeats=1, R=4, batch=2, naive_max_n=64,
                  loop_python_max_n=None, seed=0, on_record=None):
    """One record per (N, variant, repeat); naive runs only up to ``naive_max_n``."""
    available = runners()
    records = []
    with threadpool_limits(limits=1):
        for N in sizes:
            B, index = make_instance(N, R, batch, seed=seed)
            for variant in variants:
                if variant not in available:
                    continue
                if variant == "naive" and N > naive_max_n:
                    continue
                if variant == "loop-python" and loop_python_max_n is not None and N > loop_python_max_n:
                    continue
                fn = available[variant]
                for rep in range(repeats):
                    rec = {
                        "N": int(N), "R": int(R), "batch": int(batch), "variant": variant, "repeat": rep,
                        "wall_time_ns": int(measure_time(fn, B, index)),
                        "peak_aux_bytes": int(measure_peak(fn, B, index)),
                    }
                    records.append(rec)
                    if on_record is not None:
                        on_record(rec)
    return records


def loglog_slope(records, variant, field="peak_aux_bytes", sizes=None):
    """Least-squares slope of log(field) against log(N), median over repeats."""
    by_n = {}
    for r in records:
        if r["variant"] == variant and (sizes is None or r["N"] in sizes):
            by_n.setdefault(r["N"], []).append(r[field])
    if len(by_n) < 2:
        raise ValueError(f"need at least two sizes for {variant}")
    ns = np.array(sorted(by_n), dtype=float)
    ys = np.array([np.median(by_n[n]) for n in sorted(by_n)], dtype=float)
    return float(np.polyfit(np.log(ns), np.log(ys), 1)[0])


def median_field(records, variant, N, field="wall_time_ns"):
    return float(np.median([r[field] for r in records if r["variant"] == variant and r["N"] == N]))
