"""Deterministic synthetic flows with controllable size and timing structure.

Arrivals are homogeneous Poisson per direction, optionally gated by a
periodic on/off burst mask (random phase per stream).  "Synchrony" is the
probability that a forward packet triggers a backward reply at the same
timestamp plus a small jitter, which plants cross-direction co-occurrence
at the histogram's 200 ms column scale - the kind of structure that an
independent per-row shuffle destroys but a shared column shuffle keeps.

The standard suite contains four classes; two of them ("chat-like" and
"browsing-like") share identical size distributions, rates, and burstiness
and differ only in whether the backward traffic is synchronized with the
forward traffic, so they are separable through timing alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pcap import Direction, Flow, PacketRecord

_BURST_DUTY = 0.5


@dataclass(frozen=True)
class SizeBand:
    low: int  # bytes, inclusive
    high: int  # bytes, inclusive
    weight: float


@dataclass(frozen=True)
class ClassProfile:
    name: str
    fwd_sizes: tuple[SizeBand, ...]
    bwd_sizes: tuple[SizeBand, ...]
    rate_fwd: float  # packets/s before burst gating
    rate_bwd: float  # independent backward rate, same units
    synchrony: float  # P(forward packet triggers an echoed backward packet)
    duration: float  # seconds
    burst_period: float | None = None
    sync_jitter_s: float = 0.1  # echo lands within +-jitter of its trigger

    def __post_init__(self):
        if not 0.0 <= self.synchrony <= 1.0:
            raise ValueError("synchrony must be in [0,1]")
        if self.rate_fwd < 0 or self.rate_bwd < 0:
            raise ValueError("rates must be >= 0")
        if self.rate_fwd == 0 and self.rate_bwd == 0 and self.duration > 0:
            pass  # legal: yields an empty flow, dropped downstream
        if self.duration <= 0:
            raise ValueError("duration must be positive")


def _poisson_times(rng: np.random.Generator, rate: float, duration: float) -> np.ndarray:
    n = rng.poisson(rate * duration)
    return np.sort(rng.uniform(0.0, duration, n))


def _burst_mask(
    rng: np.random.Generator, times: np.ndarray, period: float | None
) -> np.ndarray:
    if period is None:
        return np.ones(times.shape, dtype=bool)
    phase = rng.uniform(0.0, period)
    return ((times + phase) % period) < _BURST_DUTY * period


def _sample_sizes(
    rng: np.random.Generator, bands: tuple[SizeBand, ...], n: int
) -> np.ndarray:
    weights = np.array([b.weight for b in bands], dtype=np.float64)
    picks = rng.choice(len(bands), size=n, p=weights / weights.sum())
    lows = np.array([b.low for b in bands])
    highs = np.array([b.high for b in bands])
    return rng.integers(lows[picks], highs[picks] + 1)


def generate_flow(
    profile: ClassProfile,
    seed: int | np.random.SeedSequence,
    flow_id: str | None = None,
) -> Flow:
    """One synthetic flow; identical (profile, seed) always yields identical
    packets.  Timestamps are rounded to microseconds so the packet CSV
    round-trip is exact."""
    rng = np.random.default_rng(seed)
    if flow_id is None:
        flow_id = f"{profile.name}-{seed}"

    fwd_t = _poisson_times(rng, profile.rate_fwd, profile.duration)
    fwd_t = fwd_t[_burst_mask(rng, fwd_t, profile.burst_period)]
    fwd_sizes = _sample_sizes(rng, profile.fwd_sizes, len(fwd_t))

    bwd_t = _poisson_times(rng, profile.rate_bwd, profile.duration)
    bwd_t = bwd_t[_burst_mask(rng, bwd_t, profile.burst_period)]
    bwd_sizes = _sample_sizes(rng, profile.bwd_sizes, len(bwd_t))

    echoed = rng.random(len(fwd_t)) < profile.synchrony
    jitter = rng.uniform(-profile.sync_jitter_s, profile.sync_jitter_s, len(fwd_t))
    echo_t = np.clip(fwd_t + jitter, 0.0, np.nextafter(profile.duration, 0.0))[echoed]
    echo_sizes = _sample_sizes(rng, profile.bwd_sizes, len(echo_t))

    packets = []
    for t, s in zip(fwd_t, fwd_sizes):
        packets.append(PacketRecord(round(float(t), 6), int(s), Direction.FORWARD))
    for t, s in zip(bwd_t, bwd_sizes):
        packets.append(PacketRecord(round(float(t), 6), int(s), Direction.BACKWARD))
    for t, s in zip(echo_t, echo_sizes):
        packets.append(PacketRecord(round(float(t), 6), int(s), Direction.BACKWARD))
    packets.sort(key=lambda p: p.ts)
    return Flow(flow_id, packets)


_MIXED_SIZES = (
    SizeBand(100, 300, 0.5),
    SizeBand(400, 800, 0.3),
    SizeBand(900, 1300, 0.2),
)

# chat-like and browsing-like are the timing-only pair: same sizes and the
# same expected per-direction rates (browsing's independent backward rate
# matches chat's independent 0.5/s plus its expected 0.95 * 5/s of echo
# traffic); only the forward/backward synchronization differs.  Rates are
# kept low so column occupancy stays well below saturation - that is what
# makes within-column co-occurrence informative.
STANDARD_PROFILES = (
    ClassProfile(
        name="voip-like",
        fwd_sizes=(SizeBand(200, 320, 1.0),),
        bwd_sizes=(SizeBand(80, 160, 1.0),),
        rate_fwd=40.0,
        rate_bwd=5.0,
        synchrony=0.9,
        duration=24.0,
    ),
    ClassProfile(
        name="filetransfer-like",
        fwd_sizes=(SizeBand(1000, 1500, 1.0),),
        bwd_sizes=(SizeBand(40, 80, 1.0),),
        rate_fwd=30.0,
        rate_bwd=15.0,
        synchrony=0.2,
        duration=24.0,
    ),
    ClassProfile(
        name="chat-like",
        fwd_sizes=_MIXED_SIZES,
        bwd_sizes=_MIXED_SIZES,
        rate_fwd=5.0,
        rate_bwd=0.5,
        synchrony=0.95,
        duration=24.0,
        sync_jitter_s=0.03,
    ),
    ClassProfile(
        name="browsing-like",
        fwd_sizes=_MIXED_SIZES,
        bwd_sizes=_MIXED_SIZES,
        rate_fwd=5.0,
        rate_bwd=0.5 + 0.95 * 5.0,
        synchrony=0.0,
        duration=24.0,
        sync_jitter_s=0.03,
    ),
)

# the pair distinguishable only through temporal structure
TEMPORAL_PAIR = ("chat-like", "browsing-like")


def standard_suite(
    seed: int, flows_per_class: int = 200
) -> tuple[list[Flow], list[int], list[str]]:
    """Generate the built-in 4-class dataset.

    Returns (flows, labels, class_names) with labels parallel to flows;
    flow seeds derive from (seed, class index, flow index) so the suite is
    reproducible and flows are mutually independent.
    """
    flows: list[Flow] = []
    class_labels: list[int] = []
    for ci, profile in enumerate(STANDARD_PROFILES):
        for i in range(flows_per_class):
            seq = np.random.SeedSequence([seed, ci, i])
            flows.append(generate_flow(profile, seq, f"{profile.name}-{i:05d}"))
            class_labels.append(ci)
    return flows, class_labels, [p.name for p in STANDARD_PROFILES]
