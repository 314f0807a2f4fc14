"""Attention-stage work accounting and wall-clock comparison of LSAP vs full attention.

The ``full`` baseline is two consecutive attention poolings over all ``k``
neighbors with the same MLP widths, i.e. an LSAP block with ``s1 = k`` and
``s2 = 1``; the split is the only difference between the two modes.
"""

from __future__ import annotations

import platform
import statistics
import time
from dataclasses import asdict, dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from .lsap import init_lsap_params, lsap_block, round_macs
from .neighbors import SplitSpec, default_split, knn_table
from .work import WorkCounter, counting

MODES = ("full", "lsap")
REPORT_FIELDS = ("mode", "k", "n", "d", "reps", "threads", "median_ms", "min_ms", "neighbor_slots", "mlp_macs")


def mode_split(mode: str, k: int, spec: SplitSpec | None = None) -> SplitSpec:
    if mode == "full":
        return SplitSpec(k, 1)
    if mode == "lsap":
        return spec if spec is not None else default_split(k)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


def count_work(mode: str, k: int, spec: SplitSpec | None, n: int, d: int) -> WorkCounter:
    """Closed-form work of one ``d -> d`` block over ``n`` points."""
    if k < 1 or n < 1 or d < 1:
        raise ValueError("k, n and d must be positive")
    split = mode_split(mode, k, spec)
    split.check(k)
    r1, r2 = split.slots(k)
    slots = n * (r1 + r2)
    macs = round_macs(n, r1, d, d) + round_macs(n, r2, d, d)
    return WorkCounter(neighbor_slots=slots, mlp_macs=macs, gathers=slots)


@dataclass
class BenchReport:
    mode: str
    k: int
    n: int
    d: int
    reps: int
    threads: int
    median_ms: float
    min_ms: float
    neighbor_slots: int
    mlp_macs: int
    gathers: int = 0
    index_build_ms: float = 0.0
    hardware: str = ""

    def as_text(self) -> str:
        data = asdict(self)
        lines = [f"{key}={_show(data[key])}" for key in REPORT_FIELDS]
        lines.append(f"index_build_ms={_show(self.index_build_ms)}")
        lines.append(f"hardware={self.hardware}")
        return "\n".join(lines)

    def as_csv_row(self) -> str:
        data = asdict(self)
        return ",".join(_show(data[key]) for key in REPORT_FIELDS)


def _show(v) -> str:
    return f"{v:.3f}" if isinstance(v, float) else str(v)


def bench_cloud(n: int, seed: int) -> np.ndarray:
    """Uniform points at roughly one point per 0.01 m^3, the density of a 0.2 m grid."""
    rng = np.random.default_rng(seed)
    side = (n * 0.01) ** (1.0 / 3.0)
    return rng.uniform(0.0, side, size=(n, 3))


def bench(mode: str, k: int, n: int, d: int, reps: int = 5, seed: int = 0,
          spec: SplitSpec | None = None, threads: int = 1) -> BenchReport:
    """Median forward time of one LSAP block; index construction is timed separately."""
    if reps < 5:
        raise ValueError("reps must be >= 5")
    split = mode_split(mode, k, spec)
    expected = count_work(mode, k, split, n, d)
    positions = bench_cloud(n, seed)
    rng = np.random.default_rng(seed + 1)
    features = rng.normal(size=(n, d)).astype(np.float32)
    params = init_lsap_params(rng, d, d)
    with threadpool_limits(threads):
        t0 = time.perf_counter()
        table = knn_table(positions, k)
        build_ms = (time.perf_counter() - t0) * 1e3
        measured = WorkCounter()
        with counting(measured):
            lsap_block(features, positions, table, split, params)  # warm-up, not timed
        if measured != expected:
            raise AssertionError(f"instrumented work {measured} != closed form {expected}")
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            lsap_block(features, positions, table, split, params)
            times.append((time.perf_counter() - t0) * 1e3)
    hardware = f"{platform.machine()} {platform.processor() or platform.system()} python {platform.python_version()}"
    return BenchReport(
        mode=mode,
        k=k,
        n=n,
        d=d,
        reps=reps,
        threads=threads,
        median_ms=statistics.median(times),
        min_ms=min(times),
        neighbor_slots=measured.neighbor_slots,
        mlp_macs=measured.mlp_macs,
        gathers=measured.gathers,
        index_build_ms=build_ms,
        hardware=hardware,
    )


def slots_per_point(mode: str, k: int, spec: SplitSpec | None = None) -> int:
    r1, r2 = mode_split(mode, k, spec).slots(k)
    return r1 + r2


def single_round_ratio(k: int, spec: SplitSpec | None = None) -> float:
    """LSAP slots per point over the slots of one full-k attention round."""
    return slots_per_point("lsap", k, spec) / k

