"""Slicing flows into overlapping windows and rendering them as 2D
time x size count histograms.

A window is 60 s of one flow, taken every 15 s (so consecutive windows
overlap and deliberately duplicate packets).  Each window becomes a
300x300 grid: columns are 200 ms time bins, rows are 10-byte size bins
with forward packets in rows 0..149 and backward packets in rows
150..299.  Cell values are packet counts.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .pcap import Direction, Flow, PacketRecord


@dataclass(frozen=True)
class HistogramConfig:
    time_bins: int = 300
    size_bins_per_dir: int = 150
    max_size: int = 1500
    window_s: float = 60.0
    stride_s: float = 15.0

    def __post_init__(self):
        for name in ("time_bins", "size_bins_per_dir", "max_size", "window_s", "stride_s"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def rows(self) -> int:
        return 2 * self.size_bins_per_dir

    @property
    def time_bin_s(self) -> float:
        return self.window_s / self.time_bins


@dataclass
class FlowWindow:
    """One window of a flow; packet timestamps are relative to t0."""

    source_flow: str
    t0: float
    duration: float
    packets: list[PacketRecord]
    label: int | None = None


@dataclass
class FlowHistogram:
    counts: np.ndarray  # int64 [size_row][time_col]
    label: int | None = None

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def windowize(flow: Flow, cfg: HistogramConfig = HistogramConfig()) -> list[FlowWindow]:
    """Cut a flow into windows starting at t0 = k*stride for every k with
    t0 <= last packet time.  A packet at time t lands in every window with
    t0 <= t < t0 + window_s.  Empty windows are dropped.
    """
    if not flow.packets:
        return []
    ts = [p.ts for p in flow.packets]
    first, last = ts[0], ts[-1]
    n_candidates = int(math.floor(last / cfg.stride_s)) + 1
    # skip candidates that end before the first packet (guard band of one
    # stride against float rounding at the boundary)
    k_start = max(0, int(math.floor((first - cfg.window_s) / cfg.stride_s)) - 1)
    windows = []
    for k in range(k_start, n_candidates):
        t0 = k * cfg.stride_s
        lo = bisect.bisect_left(ts, t0)
        hi = bisect.bisect_left(ts, t0 + cfg.window_s)
        if hi <= lo:
            continue
        packets = [
            PacketRecord(p.ts - t0, p.wire_len, p.direction)
            for p in flow.packets[lo:hi]
        ]
        windows.append(FlowWindow(flow.flow_id, t0, cfg.window_s, packets))
    return windows


def candidate_window_starts(last_ts: float, cfg: HistogramConfig = HistogramConfig()) -> int:
    """Closed-form number of candidate window origins for a flow whose last
    packet arrives at last_ts."""
    return int(math.floor(last_ts / cfg.stride_s)) + 1


def build_histogram(window: FlowWindow, cfg: HistogramConfig = HistogramConfig()) -> FlowHistogram:
    """Render one window as a count grid.

    time_col = floor(rel_ts / time_bin);  size rows are 10-byte bins with
    oversize packets clamped into the last row of their direction block.
    Every packet increments exactly one cell, so the grid total equals the
    window's packet count.
    """
    counts = np.zeros((cfg.rows, cfg.time_bins), dtype=np.int64)
    if not window.packets:
        return FlowHistogram(counts, window.label)
    rel = np.array([p.ts for p in window.packets], dtype=np.float64)
    sizes = np.array([p.wire_len for p in window.packets], dtype=np.int64)
    backward = np.array(
        [p.direction is Direction.BACKWARD for p in window.packets], dtype=bool
    )
    cols = np.floor(rel / cfg.time_bin_s).astype(np.int64)
    np.clip(cols, 0, cfg.time_bins - 1, out=cols)
    size_rows = sizes * cfg.size_bins_per_dir // cfg.max_size
    np.minimum(size_rows, cfg.size_bins_per_dir - 1, out=size_rows)
    rows = size_rows + np.where(backward, cfg.size_bins_per_dir, 0)
    np.add.at(counts, (rows, cols), 1)
    return FlowHistogram(counts, window.label)


def shuffle_rows_independent(
    hist: FlowHistogram, seed: int | np.random.SeedSequence
) -> FlowHistogram:
    """Permute every row along the time axis with its own independent
    uniform permutation (all temporal structure destroyed; per-row count
    multisets preserved)."""
    rng = np.random.default_rng(seed)
    return FlowHistogram(rng.permuted(hist.counts, axis=1), hist.label)


def shuffle_columns_shared(
    hist: FlowHistogram, seed: int | np.random.SeedSequence
) -> FlowHistogram:
    """Apply one uniform permutation of the time columns to all rows
    (within-column co-occurrence survives; long-range order does not)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(hist.counts.shape[1])
    return FlowHistogram(hist.counts[:, perm].copy(), hist.label)


def histogram_to_pgm(hist: FlowHistogram) -> bytes:
    """Debug dump: plain (P2) PGM, counts scaled to 0..255."""
    counts = hist.counts
    peak = int(counts.max())
    if peak > 0:
        gray = (counts * 255) // peak
    else:
        gray = counts
    lines = [f"P2 {counts.shape[1]} {counts.shape[0]} 255"]
    for row in gray:
        lines.append(" ".join(str(int(v)) for v in row))
    return ("\n".join(lines) + "\n").encode()
