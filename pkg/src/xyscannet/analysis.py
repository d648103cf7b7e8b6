"""Scan-order pathologies and the flatten-and-scan cost baseline.

A scan order turns an H x W grid into 1-D sequences. Flattening the whole
grid row by row puts the last pixel of a row next to the first pixel of the
following row (spatial misalignment) and separates vertical neighbours by W
steps (local pixel forgetting). Slicing the grid into rows or columns avoids
both, at the price of vertical neighbours living in different sequences.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
import tracemalloc
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import blocks, costs
from .autodiff import ops
from .autodiff.tensor import Tensor, as_tensor
from .errors import ContractError, ShapeError
from .scan import ScanParams, init_scan_params, s6_forward

# ------------------------------------------------------------ scan orders


@dataclass
class ScanOrder:
    height: int
    width: int
    sequences: list  # list of [(row, col), ...]
    strategy: str = "custom"

    def validate(self) -> None:
        """Every grid pixel must appear in exactly one sequence, exactly once."""
        seen = np.zeros((self.height, self.width), dtype=np.int64)
        for seq in self.sequences:
            for r, c in seq:
                if not (0 <= r < self.height and 0 <= c < self.width):
                    raise ContractError(f"{self.strategy}: pixel {(r, c)} outside the {self.height}x{self.width} grid")
                seen[r, c] += 1
        if not np.all(seen == 1):
            bad = np.argwhere(seen != 1)[0]
            raise ContractError(
                f"{self.strategy}: pixel {tuple(int(v) for v in bad)} visited {int(seen[tuple(bad)])} times"
            )


def _check_grid(H: int, W: int) -> None:
    if H < 1 or W < 1:
        raise ShapeError(f"grid must be at least 1x1, got {H}x{W}")


def row_major(H: int, W: int) -> ScanOrder:
    _check_grid(H, W)
    return ScanOrder(H, W, [[(r, c) for r in range(H) for c in range(W)]], "flatten-row")


def column_major(H: int, W: int) -> ScanOrder:
    _check_grid(H, W)
    return ScanOrder(H, W, [[(r, c) for c in range(W) for r in range(H)]], "flatten-col")


def intra_rows(H: int, W: int) -> ScanOrder:
    _check_grid(H, W)
    return ScanOrder(H, W, [[(r, c) for c in range(W)] for r in range(H)], "intra-rows")


def intra_cols(H: int, W: int) -> ScanOrder:
    _check_grid(H, W)
    return ScanOrder(H, W, [[(r, c) for r in range(H)] for c in range(W)], "intra-cols")


def flatten4way_orders(H: int, W: int) -> list:
    """The four full-grid routes of the flatten baseline (each a valid order)."""
    rm, cm = row_major(H, W), column_major(H, W)
    return [
        rm,
        ScanOrder(H, W, [rm.sequences[0][::-1]], "flatten-row-rev"),
        cm,
        ScanOrder(H, W, [cm.sequences[0][::-1]], "flatten-col-rev"),
    ]


def misalignment_count(order: ScanOrder) -> int:
    """Sequence-adjacent pixel pairs whose Chebyshev distance exceeds 1."""
    order.validate()
    count = 0
    for seq in order.sequences:
        for (r0, c0), (r1, c1) in zip(seq, seq[1:]):
            if max(abs(r0 - r1), abs(c0 - c1)) > 1:
                count += 1
    return count


@dataclass
class DistanceStats:
    pairs: int
    disconnected: int
    max: float
    mean: float

    @property
    def disconnected_fraction(self) -> float:
        return self.disconnected / self.pairs if self.pairs else 0.0


@dataclass
class ForgettingStats:
    horizontal: DistanceStats
    vertical: DistanceStats
    overall: DistanceStats


def _stats(dists: list, disconnected: int) -> DistanceStats:
    pairs = len(dists) + disconnected
    if not dists:
        return DistanceStats(pairs, disconnected, float("inf") if pairs else 0.0, float("inf") if pairs else 0.0)
    return DistanceStats(pairs, disconnected, float(max(dists)), float(np.mean(dists)))


def forgetting_distance(order: ScanOrder) -> ForgettingStats:
    """Sequence distance between spatially 4-adjacent pixels.

    Pairs that land in different sequences are counted as disconnected and
    excluded from max/mean; when every pair is disconnected both are ``inf``.
    """
    order.validate()
    seq_id = np.empty((order.height, order.width), dtype=np.int64)
    pos = np.empty_like(seq_id)
    for s, seq in enumerate(order.sequences):
        for i, (r, c) in enumerate(seq):
            seq_id[r, c], pos[r, c] = s, i

    def collect(dr: int, dc: int):
        a = (slice(0, order.height - dr), slice(0, order.width - dc))
        b = (slice(dr, order.height), slice(dc, order.width))
        same = seq_id[a] == seq_id[b]
        d = np.abs(pos[a] - pos[b])[same]
        return d.tolist(), int((~same).sum())

    hd, hx = collect(0, 1)
    vd, vx = collect(1, 0)
    return ForgettingStats(_stats(hd, hx), _stats(vd, vx), _stats(hd + vd, hx + vx))


# ---------------------------------------------------- flatten baseline


def flatten4way_scan(F, params: Sequence[ScanParams], chunk: Optional[int] = None) -> Tensor:
    """Scan the row-major and column-major flattenings in both directions
    over all ``D`` channels and sum the four outputs."""
    F = as_tensor(F)
    if F.ndim != 4:
        raise ShapeError(f"flatten4way_scan expects (B, H, W, D), got {F.shape}")
    if len(params) != 4:
        raise ContractError(f"need four parameter sets, got {len(params)}")
    B, H, W, D = F.shape
    for p in params:
        if p.channels != D:
            raise ShapeError(f"scan over {p.channels} channels got {D}")
    rows = ops.reshape(F, (B, H * W, D))
    cols = ops.reshape(ops.permute(F, (0, 2, 1, 3)), (B, H * W, D))

    def from_cols(y):
        return ops.permute(ops.reshape(y, (B, W, H, D)), (0, 2, 1, 3))

    outs = [
        ops.reshape(s6_forward(rows, params[0], chunk=chunk), (B, H, W, D)),
        ops.reshape(ops.flip(s6_forward(ops.flip(rows, 1), params[1], chunk=chunk), 1), (B, H, W, D)),
        from_cols(s6_forward(cols, params[2], chunk=chunk)),
        from_cols(ops.flip(s6_forward(ops.flip(cols, 1), params[3], chunk=chunk), 1)),
    ]
    total = outs[0]
    for o in outs[1:]:
        total = ops.add(total, o)
    return total


@dataclass
class FlattenWeights:
    """Gated scan block whose scanner is the four-way flatten baseline."""

    norm: blocks.Norm
    w_point: object  # (C, 2C)
    w_depth: object  # (3, 3, 2C)
    scan0: ScanParams
    scan1: ScanParams
    scan2: ScanParams
    scan3: ScanParams
    w_out: object = None

    @property
    def scans(self) -> list:
        return [self.scan0, self.scan1, self.scan2, self.scan3]


def init_flatten_block(rng, C: int, state_dim: int = 16, out_proj: bool = True, dtype=np.float32) -> FlattenWeights:
    base = blocks.init_vssm(rng, C, state_dim, out_proj, dtype)
    scans = [init_scan_params(rng, C, state_dim, dtype) for _ in range(4)]
    return FlattenWeights(base.norm, base.w_point, base.w_depth, *scans, w_out=base.w_out)


def flatten_block_forward(X, w: FlattenWeights) -> Tensor:
    return blocks.gated_scan_block(X, w, lambda F: flatten4way_scan(F, w.scans))


# ------------------------------------------------------------- benchmark

STACKS = {
    "inter": ["inter", "inter"],
    "interleaved": ["intra", "inter"],
    "intra": ["intra", "intra"],
    "flatten4way": ["flatten4way", "flatten4way"],
}


def stack_macs(name: str, C: int, N: int, H: int, W: int) -> int:
    return sum(costs.vssm_macs(C, N, H, W, kind) for kind in STACKS[name])


def stack_scan_macs(name: str, C: int, N: int, H: int, W: int) -> int:
    return sum(costs.scanner_scan_macs(C, N, H, W, kind) for kind in STACKS[name])


def build_stack(name: str, C: int, N: int, seed: int = 0, dtype=np.float64):
    """Two-block stack; returns a forward callable ``f(X) -> Tensor``."""
    if name not in STACKS:
        raise ValueError(f"unknown stack {name!r}; expected one of {tuple(STACKS)}")
    rng = np.random.default_rng(seed)
    layers = []
    for kind in STACKS[name]:
        if kind == "flatten4way":
            w = init_flatten_block(rng, C, N, dtype=dtype)
            layers.append(lambda X, w=w: flatten_block_forward(X, w))
        else:
            w = blocks.init_vssm(rng, C, N, dtype=dtype)
            layers.append(lambda X, w=w, k=kind: blocks.vssm_forward(X, w, k))

    def run(X):
        h = as_tensor(X)
        for f in layers:
            h = f(h)
        return h

    return run


@dataclass
class BenchRow:
    name: str
    macs: int
    scan_macs: int
    median_s: float
    iqr_s: float
    peak_bytes: int


@dataclass
class BenchReport:
    channels: int
    state_dim: int
    height: int
    width: int
    repeats: int
    rows: list = field(default_factory=list)

    def row(self, name: str) -> BenchRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stack", "C", "N", "H", "W", "macs", "scan_macs", "median_s", "iqr_s", "peak_bytes"])
        for r in self.rows:
            w.writerow([r.name, self.channels, self.state_dim, self.height, self.width,
                        r.macs, r.scan_macs, f"{r.median_s:.6f}", f"{r.iqr_s:.6f}", r.peak_bytes])
        return buf.getvalue()

    def to_table(self) -> str:
        head = f"{'stack':<12} {'GMACs':>9} {'scan GMACs':>11} {'median ms':>10} {'IQR ms':>8} {'peak MiB':>9}"
        lines = [f"C={self.channels} N={self.state_dim} input={self.height}x{self.width} repeats={self.repeats}", head]
        for r in self.rows:
            lines.append(
                f"{r.name:<12} {r.macs / 1e9:>9.3f} {r.scan_macs / 1e9:>11.4f} "
                f"{r.median_s * 1e3:>10.1f} {r.iqr_s * 1e3:>8.1f} {r.peak_bytes / 2**20:>9.1f}"
            )
        return "\n".join(lines)


def _iqr(xs: Sequence[float]) -> float:
    if len(xs) < 2:
        return 0.0
    q = statistics.quantiles(xs, n=4, method="inclusive")
    return q[2] - q[0]


def bench_compare(
    configs: Sequence[str] = ("inter", "interleaved", "intra", "flatten4way"),
    input_size=(64, 64),
    repeats: int = 3,
    channels: int = 16,
    state_dim: int = 16,
    warmup: int = 1,
    seed: int = 0,
) -> BenchReport:
    """Count MACs and time the forward pass of each two-block stack.

    Timings are the median and IQR of ``repeats`` runs after ``warmup``
    untimed runs; peak bytes come from one extra traced run.
    """
    H, W = input_size
    x = np.random.default_rng(seed).standard_normal((1, H, W, channels))
    report = BenchReport(channels, state_dim, H, W, repeats)
    for name in configs:
        f = build_stack(name, channels, state_dim, seed)
        for _ in range(warmup):
            f(x)
        times = []
        for _ in range(max(repeats, 1)):
            t0 = time.perf_counter()
            f(x)
            times.append(time.perf_counter() - t0)
        tracemalloc.start()
        try:
            f(x)
            _, peak = tracemalloc.get_traced_memory()
        finally:
            tracemalloc.stop()
        report.rows.append(BenchRow(
            name,
            stack_macs(name, channels, state_dim, H, W),
            stack_scan_macs(name, channels, state_dim, H, W),
            statistics.median(times),
            _iqr(times),
            int(peak),
        ))
    return report
