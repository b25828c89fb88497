"""Attention-complexity accounting and wall-clock benchmark.

Three patterns over the same C x n x d token grid: dense all-pairs attention,
criss-cross row+column attention, and the structured sparse pattern (temporal
groups per channel plus per-segment regional descriptors). Analytic score
counts are verified against instrumented naive implementations; wall clock is
the median of repeated single-threaded runs.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .montage import RegionMap

VARIANTS = ("dense", "criss_cross", "ssa")


class TimerResolutionTooCoarse(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchCell:
    variant: str
    channels: int
    segments: int
    embed_dim: int
    score_entries: int
    est_flops: int
    median_ns: float


@dataclass
class BenchReport:
    cells: list[BenchCell] = field(default_factory=list)
    slopes: dict[str, float] = field(default_factory=dict)        # wall-clock vs N
    count_slopes: dict[str, float] = field(default_factory=dict)  # score entries vs N

    def rows(self) -> list[dict]:
        return [
            {
                "variant": c.variant, "C": c.channels, "n": c.segments, "d": c.embed_dim,
                "score_entries": c.score_entries, "est_flops": c.est_flops,
                "median_ns": c.median_ns,
            }
            for c in self.cells
        ]


def _region_sizes(rm: RegionMap) -> list[int]:
    return rm.sizes()


def temporal_group_sizes(n: int, w: int) -> list[int]:
    return [len(range(g, n, w)) for g in range(w)]


def count_score_entries(variant: str, C: int, n: int, w: int = 5,
                        rm: RegionMap | None = None) -> int:
    """Analytic number of query-key dot products for one attention pass."""
    if C < 1 or n < 1:
        raise ValueError("sizes must be positive")
    N = C * n
    if variant == "dense":
        return N * N
    if variant == "criss_cross":
        # Every token attends its full row (n) and full column (C).
        return N * (n + C)
    if variant == "ssa":
        if rm is None:
            raise ValueError("ssa needs a region map")
        sizes = _region_sizes(rm)
        temporal = C * sum(m * m for m in temporal_group_sizes(n, w))
        G = max(sizes)
        R = len(sizes)
        spatial = n * G * R * R
        return temporal + spatial
    raise ValueError(f"unknown variant {variant!r}")


def instrumented_score_entries(variant: str, C: int, n: int, w: int = 5,
                               rm: RegionMap | None = None) -> int:
    """Count score entries by actually enumerating the attention structure."""
    count = 0
    if variant == "dense":
        for _q in range(C * n):
            for _k in range(C * n):
                count += 1
        return count
    if variant == "criss_cross":
        for _c in range(C):
            for _i in range(n):
                count += n  # row: all segments of this channel
                count += C  # column: all channels at this segment
        return count
    if variant == "ssa":
        if rm is None:
            raise ValueError("ssa needs a region map")
        for _c in range(C):
            for g in range(w):
                m = len(range(g, n, w))
                count += m * m
        sizes = _region_sizes(rm)
        G = max(sizes)
        for _i in range(n):
            for _g in range(G):
                count += len(sizes) * len(sizes)
        return count
    raise ValueError(f"unknown variant {variant!r}")


# -- plain-numpy attention kernels for timing ---------------------------------

def _softmax(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def dense_attention(x: np.ndarray) -> np.ndarray:
    C, n, d = x.shape
    q = x.reshape(C * n, d)
    a = _softmax(q @ q.T / np.sqrt(d))
    return (a @ q).reshape(C, n, d)


def criss_cross_attention(x: np.ndarray) -> np.ndarray:
    C, n, d = x.shape
    scale = 1.0 / np.sqrt(d)
    row_scores = np.einsum("cid,cjd->cij", x, x) * scale
    row_out = np.einsum("cij,cjd->cid", _softmax(row_scores), x)
    col_scores = np.einsum("cid,eid->ice", x, x) * scale
    col_out = np.einsum("ice,eid->cid", _softmax(col_scores), x)
    return row_out + col_out


def ssa_attention(x: np.ndarray, w: int, rm: RegionMap) -> np.ndarray:
    C, n, d = x.shape
    scale = 1.0 / np.sqrt(d)
    out = np.empty_like(x)
    for g in range(w):
        idx = np.arange(g, n, w)
        xg = x[:, idx, :]
        a = _softmax(np.einsum("cmd,ckd->cmk", xg, xg) * scale)
        out[:, idx, :] = np.einsum("cmk,ckd->cmd", a, xg)
    channel_lists = rm.channel_lists()
    G = rm.max_region_size
    means = np.stack([x[ch].mean(axis=0) for ch in channel_lists], axis=1)  # (n, R, d)
    acc = np.zeros_like(x)
    for g in range(G):
        reps = np.array([ch[g % len(ch)] for ch in channel_lists])
        desc = x[reps].transpose(1, 0, 2) + means
        a = _softmax(np.einsum("nrd,nkd->nrk", desc, desc) * scale)
        o = np.einsum("nrk,nkd->nrd", a, desc)
        acc[reps] += o.transpose(1, 0, 2)
    return out + acc


def _time_variant(fn, repeats: int) -> float:
    fn()  # warmup
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        fn()
        times.append(time.perf_counter_ns() - t0)
    median = float(np.median(times))
    if median < 1_000:
        raise TimerResolutionTooCoarse(
            f"median {median} ns is below the trustworthy timer resolution"
        )
    return median


def run_benchmark(
    sizes: list[tuple[int, int]],
    rm_builder,
    variants: tuple[str, ...] = VARIANTS,
    d: int = 200,
    w: int = 5,
    repeats: int = 5,
    seed: int = 0,
) -> BenchReport:
    """Measure every variant at every (C, n) size; fits log-log slopes over N.

    ``rm_builder(C)`` must return the region map for a C-channel montage.
    """
    if repeats < 5:
        raise ValueError("need at least 5 repeats for a stable median")
    if sorted(set(c * n for c, n in sizes)) != [c * n for c, n in sizes]:
        raise ValueError("sizes must be strictly increasing in total tokens")
    rng = np.random.default_rng(seed)
    report = BenchReport()
    for C, n in sizes:
        x = rng.standard_normal((C, n, d))
        rm = rm_builder(C)
        for variant in variants:
            if variant == "dense":
                fn = lambda: dense_attention(x)
            elif variant == "criss_cross":
                fn = lambda: criss_cross_attention(x)
            elif variant == "ssa":
                fn = lambda: ssa_attention(x, w, rm)
            else:
                raise ValueError(f"unknown variant {variant!r}")
            entries = count_score_entries(variant, C, n, w, rm)
            report.cells.append(BenchCell(
                variant=variant, channels=C, segments=n, embed_dim=d,
                score_entries=entries, est_flops=entries * 2 * d,
                median_ns=_time_variant(fn, repeats),
            ))
    for variant in variants:
        cells = [c for c in report.cells if c.variant == variant]
        if len(cells) >= 2:
            logn = np.log([c.channels * c.segments for c in cells])
            report.slopes[variant] = float(np.polyfit(logn, np.log([c.median_ns for c in cells]), 1)[0])
            report.count_slopes[variant] = float(
                np.polyfit(logn, np.log([c.score_entries for c in cells]), 1)[0]
            )
    return report


def write_csv(report: BenchReport, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["variant", "C", "n", "d", "score_entries", "est_flops", "median_ns"]
        )
        writer.writeheader()
        writer.writerows(report.rows())
