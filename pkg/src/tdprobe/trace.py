"""Portable application-level traces.

A trace is the ordered list of payloads a service exchanged with its client,
each tagged with its direction and the milliseconds elapsed since the previous
payload. Traces are stored as canonical JSON::

    {"service_name": "youtube", "sni": "r3.googlevideo.com", "dst_port": 443,
     "entries": [{"dir": "cs", "delta_ms": 0, "payload_b64": "..."}, ...]}
"""

from __future__ import annotations

import base64
import binascii
import enum
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import IoFailure, MalformedTrace

__all__ = [
    "Direction",
    "TraceEntry",
    "ServiceTrace",
    "DashParams",
    "load_trace",
    "save_trace",
    "dumps_trace",
    "loads_trace",
    "bit_reverse_bytes",
    "bit_reverse_trace",
    "synth_dash_trace",
    "offered_rate",
    "is_valid_hostname",
]

_LABEL_RE = re.compile(r"^[A-Za-z0-9-]{1,63}$")


def is_valid_hostname(name: str) -> bool:
    """Dot-separated labels of ``[A-Za-z0-9-]``, at most 253 bytes overall."""
    if not name or len(name.encode("ascii", "replace")) > 253:
        return False
    try:
        name.encode("ascii")
    except UnicodeEncodeError:
        return False
    return all(_LABEL_RE.match(label) for label in name.split("."))


class Direction(enum.Enum):
    CLIENT_TO_SERVER = "cs"
    SERVER_TO_CLIENT = "sc"


@dataclass(frozen=True)
class TraceEntry:
    direction: Direction
    delta_ms: int
    payload: bytes

    def __post_init__(self):
        if not isinstance(self.delta_ms, int) or isinstance(self.delta_ms, bool) or self.delta_ms < 0:
            raise ValueError(f"delta_ms must be a non-negative integer, got {self.delta_ms!r}")
        if len(self.payload) < 1:
            raise ValueError("payload must be at least one byte")


@dataclass(frozen=True)
class ServiceTrace:
    service_name: str
    sni: str
    dst_port: int
    entries: tuple[TraceEntry, ...]
    offered_rate_bps: float = field(init=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.service_name:
            raise ValueError("service_name must be non-empty")
        if self.sni and not is_valid_hostname(self.sni):
            raise ValueError(f"invalid SNI hostname {self.sni!r}")
        if not (1 <= self.dst_port <= 65535):
            raise ValueError(f"dst_port out of range: {self.dst_port}")
        if not self.entries:
            raise ValueError("trace has no entries")
        if self.duration_ms <= 0:
            raise ValueError("cumulative trace time must be positive")
        object.__setattr__(self, "offered_rate_bps", offered_rate(self))

    @property
    def duration_ms(self) -> int:
        return sum(e.delta_ms for e in self.entries)

    @property
    def total_bytes(self) -> int:
        return sum(len(e.payload) for e in self.entries)

    def deadlines_ms(self) -> list[int]:
        """Cumulative send deadline of every entry, relative to replay start."""
        out, t = [], 0
        for e in self.entries:
            t += e.delta_ms
            out.append(t)
        return out

    def payload_stream(self, direction: Direction) -> bytes:
        return b"".join(e.payload for e in self.entries if e.direction is direction)


def offered_rate(trace: ServiceTrace) -> float:
    """Bits per second the trace offers: all payload bytes over its cumulative time."""
    total = sum(len(e.payload) for e in trace.entries)
    seconds = sum(e.delta_ms for e in trace.entries) / 1000.0
    return 8.0 * total / seconds


# -- serialization ---------------------------------------------------------

def _to_obj(trace: ServiceTrace) -> dict:
    return {
        "service_name": trace.service_name,
        "sni": trace.sni,
        "dst_port": trace.dst_port,
        "entries": [
            {
                "dir": e.direction.value,
                "delta_ms": e.delta_ms,
                "payload_b64": base64.b64encode(e.payload).decode("ascii"),
            }
            for e in trace.entries
        ],
    }


def dumps_trace(trace: ServiceTrace) -> str:
    """Canonical text form: fixed key order, single spaces after separators."""
    return json.dumps(_to_obj(trace), separators=(", ", ": "), ensure_ascii=False) + "\n"


def _require(obj: dict, key: str, kind, locus: str):
    if key not in obj:
        raise MalformedTrace(f"missing field {key!r}", locus)
    value = obj[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise MalformedTrace(f"field {key!r} must be an integer", f"{locus}.{key}" if locus else key)
    if kind is not int and not isinstance(value, kind):
        raise MalformedTrace(f"field {key!r} has wrong type", f"{locus}.{key}" if locus else key)
    return value


def loads_trace(text: str) -> ServiceTrace:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedTrace(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    if not isinstance(obj, dict):
        raise MalformedTrace("top level must be a JSON object", "line 1")

    name = _require(obj, "service_name", str, "")
    sni = _require(obj, "sni", str, "")
    port = _require(obj, "dst_port", int, "")
    raw_entries = _require(obj, "entries", list, "")
    if not name:
        raise MalformedTrace("service_name is empty", "service_name")
    if sni and not is_valid_hostname(sni):
        raise MalformedTrace(f"invalid hostname {sni!r}", "sni")
    if not (1 <= port <= 65535):
        raise MalformedTrace(f"port {port} out of range", "dst_port")
    if not raw_entries:
        raise MalformedTrace("no entries", "entries")

    entries = []
    for i, raw in enumerate(raw_entries):
        locus = f"entries[{i}]"
        if not isinstance(raw, dict):
            raise MalformedTrace("entry must be an object", locus)
        d = _require(raw, "dir", str, locus)
        delta = _require(raw, "delta_ms", int, locus)
        b64 = _require(raw, "payload_b64", str, locus)
        if d not in ("cs", "sc"):
            raise MalformedTrace(f"dir must be 'cs' or 'sc', got {d!r}", f"{locus}.dir")
        if delta < 0:
            raise MalformedTrace("delta_ms is negative", f"{locus}.delta_ms")
        try:
            payload = base64.b64decode(b64, validate=True)
        except binascii.Error as exc:
            raise MalformedTrace(f"bad base64 ({exc})", f"{locus}.payload_b64") from None
        if not payload:
            raise MalformedTrace("zero-length payload", f"{locus}.payload_b64")
        entries.append(TraceEntry(Direction(d), delta, payload))

    if sum(e.delta_ms for e in entries) <= 0:
        raise MalformedTrace("cumulative time is zero", "entries")
    return ServiceTrace(name, sni, port, tuple(entries))


def load_trace(path) -> ServiceTrace:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise MalformedTrace(str(exc), str(path)) from None
    return loads_trace(text)


def save_trace(trace: ServiceTrace, path) -> None:
    try:
        Path(path).write_text(dumps_trace(trace), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


# -- control traces --------------------------------------------------------

_BIT_REVERSED = bytes(int(f"{i:08b}"[::-1], 2) for i in range(256))


def bit_reverse_bytes(data: bytes) -> bytes:
    return data.translate(_BIT_REVERSED)


def bit_reverse_trace(trace: ServiceTrace) -> ServiceTrace:
    """Control counterpart: bit order reversed within every byte, SNI dropped.

    Lengths, directions and timing are untouched.
    """
    return ServiceTrace(
        service_name=trace.service_name + "-control",
        sni="",
        dst_port=trace.dst_port,
        entries=tuple(TraceEntry(e.direction, e.delta_ms, bit_reverse_bytes(e.payload)) for e in trace.entries),
    )


# -- synthetic DASH-like traces -------------------------------------------

@dataclass(frozen=True)
class DashParams:
    chunk_bytes: int
    chunk_interval_ms: int
    n_chunks: int
    request_bytes: int = 400
    seed: int = 0
    segment_ms: int = 10

    def __post_init__(self):
        for name in ("chunk_bytes", "chunk_interval_ms", "n_chunks", "request_bytes", "segment_ms"):
            value = getattr(self, name)
            if not isinstance(value, int) or value <= 0:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")


def _split(total: int, parts: int) -> Iterable[int]:
    base, extra = divmod(total, parts)
    for i in range(parts):
        yield base + (1 if i < extra else 0)


def synth_dash_trace(params: DashParams, service_name: str, sni: str = "", dst_port: int = 443) -> ServiceTrace:
    """Chunked streaming trace: one request per chunk, the chunk spread evenly over its interval.

    Chunk ``k`` is requested at ``k * chunk_interval_ms``; its bytes follow in
    segments roughly ``segment_ms`` apart, the last landing exactly one
    interval after the request, so the stream is paced rather than bursty. Payloads come from a seeded PRNG and carry no plaintext signature.
    """
    rng = random.Random(params.seed)
    n_seg = max(1, min(params.chunk_interval_ms // params.segment_ms, params.chunk_bytes))
    entries: list[TraceEntry] = []
    now = 0
    for k in range(params.n_chunks):
        start = k * params.chunk_interval_ms
        entries.append(TraceEntry(Direction.CLIENT_TO_SERVER, start - now, rng.randbytes(params.request_bytes)))
        now = start
        for j, size in enumerate(_split(params.chunk_bytes, n_seg)):
            at = start + ((j + 1) * params.chunk_interval_ms) // n_seg
            entries.append(TraceEntry(Direction.SERVER_TO_CLIENT, at - now, rng.randbytes(size)))
            now = at
    return ServiceTrace(service_name, sni, dst_port, tuple(entries))

