"""Dense vs blockwise timing and log-log scaling fit."""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass

import numpy as np

from .spherical import EncodingConfig, apply_blockwise, apply_dense, encoding_from_angles

DEFAULT_DIMS = (48, 96, 192, 384, 768)


@dataclass
class BenchResult:
    dims: list[int]
    dense_median: list[float]  # seconds per apply call
    blockwise_median: list[float]
    dense_slope: float
    blockwise_slope: float
    reps: int
    batch: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("dim,dense_median_s,blockwise_median_s\n")
        for d, a, b in zip(self.dims, self.dense_median, self.blockwise_median):
            buf.write(f"{d},{a!r},{b!r}\n")
        return buf.getvalue()

    def summary(self) -> str:
        lines = [f"{'dim':>6} {'dense us':>12} {'blockwise us':>14}"]
        for d, a, b in zip(self.dims, self.dense_median, self.blockwise_median):
            lines.append(f"{d:>6} {a * 1e6:>12.1f} {b * 1e6:>14.1f}")
        lines.append(
            f"log-log slope: dense {self.dense_slope:.2f}, blockwise {self.blockwise_slope:.2f} "
            f"({self.reps} reps, median, {self.batch} vectors per apply)"
        )
        return "\n".join(lines)


def loglog_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def _time_once(fn, *args) -> float:
    t0 = time.perf_counter()
    fn(*args)
    return time.perf_counter() - t0


def run_bench(dims=DEFAULT_DIMS, reps: int = 30, batch: int = 256, seed: int = 0) -> BenchResult:
    """Median wall time of one apply call per dimension.

    Each call rotates ``batch`` vectors with one encoding; with a single vector
    per call the fixed interpreter cost hides the O(d) vs O(d^2) difference.
    Dense and blockwise calls are interleaved so drift hits both equally.
    """
    if reps < 30:
        raise ValueError(f"need at least 30 repetitions per point, got {reps}")
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 3 or d % 3 for d in dims):
        raise ValueError(f"need at least two dims, each a positive multiple of 3: {dims}")
    rng = np.random.default_rng(seed)
    dense, block = [], []
    for d in dims:
        enc = encoding_from_angles(
            math.asin(rng.uniform(-1, 1)), rng.uniform(-math.pi, math.pi), EncodingConfig(d)
        )
        v = rng.standard_normal((batch, d))
        apply_dense(enc, v)
        apply_blockwise(enc, v)
        td, tb = [], []
        for _ in range(reps):
            td.append(_time_once(apply_dense, enc, v))
            tb.append(_time_once(apply_blockwise, enc, v))
        dense.append(float(np.median(td)))
        block.append(float(np.median(tb)))
    return BenchResult(dims, dense, block, loglog_slope(dims, dense), loglog_slope(dims, block), reps, batch)
