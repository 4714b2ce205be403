"""Deterministic virtual-clock models of the middlebox.

``simulate_shared_link`` is a fluid model of several flows competing for one
link. ``SimulatedPath`` replays a single trace through classifier, shaper and
link at packet granularity, so replay runs can be reproduced bit-for-bit
without sockets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import _kernels
from ..detector import ThroughputSeries
from ..trace import Direction, ServiceTrace
from .classifier import Classification, ClassifierRule, classify
from .shaper import FlowState, ShapingPolicy, shape

TICK_MS = 10


@dataclass(frozen=True)
class RateProfile:
    """Constant offered rate, optionally active only inside [start_ms, stop_ms)."""

    rate_bps: float
    start_ms: float = 0.0
    stop_ms: float | None = None
    jitter: float = 0.0  # fractional per-tick noise, drawn from the simulation seed


@dataclass
class SharedLinkResult:
    series: list[ThroughputSeries]
    alloc_bps: np.ndarray  # (ticks, flows)
    demand_bps: np.ndarray  # (ticks, flows), after token-bucket limiting
    tick_ms: int

    def mean_bps(self) -> list[float]:
        return [float(x) for x in self.alloc_bps.mean(axis=0)]


def _offered_matrix(sources, n_ticks: int, tick_ms: int, rng: np.random.Generator) -> np.ndarray:
    offered = np.zeros((n_ticks, len(sources)), dtype=np.float64)
    tick_s = tick_ms / 1000.0
    t_ms = np.arange(n_ticks, dtype=np.float64) * tick_ms
    for i, src in enumerate(sources):
        if isinstance(src, ServiceTrace):
            # server-to-client bytes per tick at their scheduled deadlines
            for deadline, e in zip(src.deadlines_ms(), src.entries):
                if e.direction is Direction.SERVER_TO_CLIENT:
                    k = int(deadline // tick_ms)
                    if k < n_ticks:
                        offered[k, i] += 8.0 * len(e.payload) / tick_s
        elif isinstance(src, RateProfile):
            stop = np.inf if src.stop_ms is None else src.stop_ms
            on = (t_ms >= src.start_ms) & (t_ms < stop)
            col = np.where(on, src.rate_bps, 0.0)
            if src.jitter:
                col = col * np.clip(1.0 + src.jitter * rng.standard_normal(n_ticks), 0.0, None)
            offered[:, i] = col
        else:
            offered[:, i] = float(src)
    return offered


def simulate_shared_link(
    flows: Sequence[tuple[object, Classification]],
    policy: ShapingPolicy,
    duration_ms: int,
    seed: int = 0,
    bin_width_ms: int = 100,
    tick_ms: int = TICK_MS,
) -> SharedLinkResult:
    """Fluid simulation of flows sharing ``policy.link_capacity_bps``.

    Each tick a flow demands the lesser of its offered rate and what its
    label's token bucket allows. If the link is oversubscribed, capacity is
    split in proportion to QoS weight times demand, with no flow given more
    than it asked for. Unmet demand is dropped, not queued.
    """
    if duration_ms <= 0:
        raise ValueError("duration_ms must be positive")
    if bin_width_ms % tick_ms:
        raise ValueError("bin width must be a multiple of the tick")
    n_ticks = -(-int(duration_ms) // tick_ms)
    n = len(flows)
    rng = np.random.default_rng(seed)
    offered = _offered_matrix([f[0] for f in flows], n_ticks, tick_ms, rng)

    rate_Bps = np.zeros(n)
    burst = np.zeros(n)
    weight = np.ones(n)
    for i, (_, cls) in enumerate(flows):
        lr = policy.rate_for(cls.label)
        if lr is not None:
            rate_Bps[i] = lr.rate_bps / 8.0
            burst[i] = lr.burst_bytes
        weight[i] = policy.weight(cls.label)

    alloc = np.zeros((n_ticks, n))
    demand = np.zeros((n_ticks, n))
    _kernels.simulate_link(offered, rate_Bps, burst, weight, float(policy.link_capacity_bps),
                           tick_ms / 1000.0, alloc, demand)

    per_bin = bin_width_ms // tick_ms
    bytes_per_tick = alloc * (tick_ms / 1000.0) / 8.0
    n_bins = -(-n_ticks // per_bin)
    padded = np.zeros((n_bins * per_bin, n))
    padded[:n_ticks] = bytes_per_tick
    binned = padded.reshape(n_bins, per_bin, n).sum(axis=1)
    series = [ThroughputSeries(bin_width_ms, tuple(float(x) for x in binned[:, i])) for i in range(n)]
    return SharedLinkResult(series, alloc, demand, tick_ms)


# -- single-flow packet path ------------------------------------------------

@dataclass
class SimulatedPath:
    """Virtual-clock stand-in for the network between replay client and server.

    The path classifies each replay flow exactly like the proxy does, holds
    server-to-client segments in the label's token bucket, then serializes
    them onto a link of ``policy.link_capacity_bps``.
    """

    rules: Sequence[ClassifierRule] = ()
    policy: ShapingPolicy = ShapingPolicy()
    mss: int = 1448
    one_way_delay_ms: float = 0.0
    last_classification: Classification | None = None

    def replay(self, trace: ServiceTrace, first_bytes: bytes, dst_port: int, bin_width_ms: float):
        """Return (series, total_bytes, duration_ms, classification) for one replay."""
        cls = classify(first_bytes, dst_port, self.rules)
        self.last_classification = cls
        flow = FlowState(key=("sim", dst_port), classification=cls)
        cap_Bps = self.policy.link_capacity_bps / 8.0
        delay = self.one_way_delay_ms / 1000.0
        lr = self.policy.rate_for(cls.label)
        seg_max = self.mss if lr is None else max(1, min(self.mss, int(lr.burst_bytes)))

        arrivals: list[tuple[float, int]] = []
        server_ready = 0.0  # server can't emit a response before the request reached it
        link_free = 0.0
        for deadline_ms, e in zip(trace.deadlines_ms(), trace.entries):
            t = deadline_ms / 1000.0
            if e.direction is Direction.CLIENT_TO_SERVER:
                server_ready = max(server_ready, t + delay)
                continue
            send_at = max(t, server_ready)
            server_ready = send_at
            remaining = len(e.payload)
            while remaining:
                n = min(seg_max, remaining)
                remaining -= n
                release = send_at + shape(flow, n, send_at, self.policy)
                start = max(release, link_free)
                link_free = start + n / cap_Bps
                arrivals.append((link_free + delay, n))
                send_at = release

        total = sum(n for _, n in arrivals)
        if not arrivals:
            return ThroughputSeries(bin_width_ms, (0,)), 0, 1.0, cls
        last = max(t for t, _ in arrivals)
        bin_s = bin_width_ms / 1000.0
        bins = [0] * (int(last / bin_s) + 1)
        for t, n in arrivals:
            bins[int(t / bin_s)] += n
        return ThroughputSeries(bin_width_ms, tuple(bins)), total, max(last * 1000.0, 1.0), cls
