"""Throughput series and the original-vs-control differentiation verdict."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import ConfigError, InsufficientRuns, SeriesTooShort

__all__ = [
    "ThroughputSeries",
    "Direction",
    "Reason",
    "DetectionVerdict",
    "DetectConfig",
    "running_average",
    "per_bin_rates",
    "ks_statistic",
    "area_gap",
    "detect",
    "series_to_csv",
    "series_from_csv",
    "WARMUP_BINS",
]

WARMUP_BINS = 5
MIN_SAMPLES = 10
AREA_EPS_BPS = 1.0


@dataclass(frozen=True)
class ThroughputSeries:
    """Bytes received per fixed-width bin, bins relative to replay start."""

    bin_width_ms: float
    bins: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(self.bins))
        if not self.bin_width_ms > 0:
            raise ValueError("bin_width_ms must be positive")
        if any(b < 0 for b in self.bins):
            raise ValueError("bins must be non-negative")

    @property
    def bin_seconds(self) -> float:
        return self.bin_width_ms / 1000.0

    @property
    def total_bytes(self):
        return sum(self.bins)

    def mean_bps(self) -> float:
        if not self.bins:
            return 0.0
        return 8000.0 * self.total_bytes / (len(self.bins) * self.bin_width_ms)


def running_average(series: ThroughputSeries) -> list[float]:
    """Cumulative-mean throughput in bit/s after each bin."""
    if not series.bins:
        raise ValueError("empty series")
    out, acc = [], 0
    for k, b in enumerate(series.bins):
        acc += b
        out.append(8000.0 * acc / ((k + 1) * series.bin_width_ms))
    return out


def per_bin_rates(series: ThroughputSeries, warmup: int = WARMUP_BINS) -> list[float]:
    """Per-bin rates in bit/s with the first ``warmup`` bins dropped."""
    if len(series.bins) < warmup + MIN_SAMPLES:
        raise SeriesTooShort(
            f"series has {len(series.bins)} bins; need at least {warmup + MIN_SAMPLES}"
        )
    return [8000.0 * b / series.bin_width_ms for b in series.bins[warmup:]]


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    sa = np.sort(np.asarray(a, dtype=np.float64))
    sb = np.sort(np.asarray(b, dtype=np.float64))
    return float(_kernels.ks_sorted(sa, sb))


def area_gap(a: Sequence[float], b: Sequence[float]) -> float:
    """Relative gap between sample means, in [0, 1]."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both samples must be non-empty")
    ma = math.fsum(a) / len(a)
    mb = math.fsum(b) / len(b)
    return abs(ma - mb) / max(ma, mb, AREA_EPS_BPS)


class Direction(enum.Enum):
    ORIGINAL_SLOWER = "OriginalSlower"
    CONTROL_SLOWER = "ControlSlower"
    NONE = "None"


class Reason(enum.Enum):
    DETECTED = "Detected"
    NO_DIFFERENCE = "NoDifference"
    OFFERED_RATE_BELOW_PATH = "OfferedRateBelowPath"
    INSUFFICIENT_RUNS = "InsufficientRuns"
    HIGH_VOLATILITY = "HighVolatility"


@dataclass(frozen=True)
class DetectionVerdict:
    differentiated: bool
    direction: Direction
    ks_stat: float
    area_gap: float
    runs_flagged: int
    runs_total: int
    reason: Reason

    def to_dict(self) -> dict:
        return {
            "differentiated": self.differentiated,
            "direction": self.direction.value,
            "ks": self.ks_stat,
            "area_gap": self.area_gap,
            "runs_flagged": self.runs_flagged,
            "runs_total": self.runs_total,
            "reason": self.reason.value,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionVerdict":
        return cls(
            differentiated=d["differentiated"],
            direction=Direction(d["direction"]),
            ks_stat=d["ks"],
            area_gap=d["area_gap"],
            runs_flagged=d["runs_flagged"],
            runs_total=d["runs_total"],
            reason=Reason(d["reason"]),
        )


@dataclass(frozen=True)
class DetectConfig:
    ks_threshold: float = 0.5
    area_threshold: float = 0.2
    min_runs: int = 3
    warmup_bins: int = WARMUP_BINS
    # both replays at or above this fraction of the offered rate => shaping can't be seen
    below_path_fraction: float = 0.9


def _series_of(item) -> ThroughputSeries | None:
    """Accept a ReplayResult-like object or a bare series; None if the run did not complete."""
    if isinstance(item, ThroughputSeries):
        return item
    if not getattr(item, "completed", True):
        return None
    return item.throughput


def detect(pairs, trace_offered_rate_bps: float | None = None, config: DetectConfig | None = None) -> DetectionVerdict:
    """Aggregate (original, control) replay pairs into one verdict.

    A pair is flagged when both the KS distance and the relative mean gap of
    its per-bin rates exceed their thresholds. Differentiation needs a strict
    majority of completed pairs flagged, all pointing the same way.
    Raises InsufficientRuns (carrying the verdict) below ``min_runs``.
    """
    cfg = config or DetectConfig()
    completed = []
    for orig, ctrl in pairs:
        so, sc = _series_of(orig), _series_of(ctrl)
        if so is not None and sc is not None:
            completed.append((so, sc))

    n = len(completed)
    if n < cfg.min_runs:
        verdict = DetectionVerdict(False, Direction.NONE, 0.0, 0.0, 0, n, Reason.INSUFFICIENT_RUNS)
        raise InsufficientRuns(f"{n} completed run pair(s); need {cfg.min_runs}", verdict)

    widths = {s.bin_width_ms for pair in completed for s in pair}
    if len(widths) > 1:
        raise ConfigError(f"series have mismatched bin widths: {sorted(widths)}")

    stats = []
    for so, sc in completed:
        a = per_bin_rates(so, cfg.warmup_bins)
        b = per_bin_rates(sc, cfg.warmup_bins)
        ks = ks_statistic(a, b)
        gap = area_gap(a, b)
        flagged = ks > cfg.ks_threshold and gap > cfg.area_threshold
        sign = math.fsum(a) / len(a) - math.fsum(b) / len(b)
        stats.append((ks, gap, flagged, sign, so.mean_bps(), sc.mean_bps()))

    # order-independent summaries: medians over pairs
    ks_med = float(np.median([s[0] for s in stats]))
    gap_med = float(np.median([s[1] for s in stats]))
    flagged = [s for s in stats if s[2]]
    n_flagged = len(flagged)

    if trace_offered_rate_bps:
        floor = cfg.below_path_fraction * trace_offered_rate_bps
        mean_orig = math.fsum(s[4] for s in stats) / n
        mean_ctrl = math.fsum(s[5] for s in stats) / n
        if mean_orig >= floor and mean_ctrl >= floor:
            return DetectionVerdict(False, Direction.NONE, ks_med, gap_med, n_flagged, n,
                                    Reason.OFFERED_RATE_BELOW_PATH)

    if n_flagged * 2 <= n:
        return DetectionVerdict(False, Direction.NONE, ks_med, gap_med, n_flagged, n, Reason.NO_DIFFERENCE)

    directions = {Direction.ORIGINAL_SLOWER if s[3] < 0 else Direction.CONTROL_SLOWER for s in flagged}
    if len(directions) > 1:
        return DetectionVerdict(False, Direction.NONE, ks_med, gap_med, n_flagged, n, Reason.HIGH_VOLATILITY)
    return DetectionVerdict(True, directions.pop(), ks_med, gap_med, n_flagged, n, Reason.DETECTED)


# -- CSV export ------------------------------------------------------------

def series_to_csv(series: ThroughputSeries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_index", "bytes", "bps"])
    for k, b in enumerate(series.bins):
        w.writerow([k, repr(b) if isinstance(b, float) else b, repr(8000.0 * b / series.bin_width_ms)])
    return buf.getvalue()


def write_series_csv(series: ThroughputSeries, path) -> None:
    Path(path).write_text(series_to_csv(series), encoding="utf-8")


def _num(text: str):
    try:
        return int(text)
    except ValueError:
        return float(text)


def series_from_csv(path, bin_width_ms: float | None = None) -> ThroughputSeries:
    """Read a series back. The bin width comes from the bytes/bps ratio unless given."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != ["bin_index", "bytes", "bps"]:
        raise ConfigError(f"{path}: expected header bin_index,bytes,bps")
    bins, inferred = [], None
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            idx, nbytes, bps = int(row[0]), _num(row[1]), float(row[2])
        except (ValueError, IndexError):
            raise ConfigError(f"{path}:{lineno}: malformed row {row!r}") from None
        if idx != len(bins):
            raise ConfigError(f"{path}:{lineno}: bin_index {idx} out of sequence")
        if nbytes > 0 and bps > 0:
            width = round(8000.0 * nbytes / bps, 6)
            if inferred is None:
                inferred = width
            elif not math.isclose(width, inferred, rel_tol=1e-6):
                raise ConfigError(f"{path}:{lineno}: inconsistent bin width")
        bins.append(nbytes)
    width = bin_width_ms or inferred
    if width is None:
        raise ConfigError(f"{path}: cannot infer bin width from an all-zero series")
    if bin_width_ms and inferred and not math.isclose(bin_width_ms, inferred, rel_tol=1e-6):
        raise ConfigError(f"{path}: bin width {inferred} ms does not match {bin_width_ms} ms")
    if float(width).is_integer():
        width = int(width)
    return ThroughputSeries(width, tuple(bins))
