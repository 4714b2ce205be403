"""Shared replay types and the side-channel wire format (one JSON object per line)."""

from __future__ import annotations

import enum
import json
import socket
from dataclasses import dataclass, field

from ..detector import ThroughputSeries
from ..errors import DuplicateActiveReplay, ProtocolError, SideChannelRefused, UnknownService
from ..tls_mimic import read_record_length

MAX_LINE = 64 * 1024


class Kind(enum.Enum):
    ORIGINAL = "original"
    CONTROL = "control"


@dataclass(frozen=True)
class ReplayRequest:
    client_id: str
    service_name: str
    kind: Kind = Kind.ORIGINAL
    run_index: int = 0
    use_sni_prefix: bool = True
    dst_port_override: int | None = None

    def __post_init__(self):
        if not self.client_id:
            raise ValueError("client_id must be non-empty")
        if self.run_index < 0:
            raise ValueError("run_index must be non-negative")

    def registration(self) -> dict:
        msg = {
            "client_id": self.client_id,
            "service": self.service_name,
            "kind": self.kind.value,
            "run_index": self.run_index,
        }
        # extension field; servers that ignore it replay without a handshake prefix
        msg["sni_prefix"] = self.use_sni_prefix and self.kind is Kind.ORIGINAL
        return msg


@dataclass
class ReplayResult:
    throughput: ThroughputSeries
    total_bytes: int
    duration_ms: float
    completed: bool
    error_note: str | None = None
    # (scheduled offset, actual offset) in seconds for each client-sent entry
    send_log: list[tuple[float, float]] = field(default_factory=list)
    request: ReplayRequest | None = None
    error_code: int | None = None  # CLI exit code of the failure, when the run raised

    def mean_bps(self) -> float:
        return 8000.0 * self.total_bytes / self.duration_ms if self.duration_ms > 0 else 0.0


_ERRORS = {
    "UnknownService": UnknownService,
    "DuplicateActiveReplay": DuplicateActiveReplay,
}


def refusal(error: str, detail: str = "") -> dict:
    return {"ok": False, "error": error, "detail": detail}


def raise_for_reply(reply: dict):
    if reply.get("ok"):
        return
    code = reply.get("error", "Refused")
    exc = _ERRORS.get(code, SideChannelRefused)
    raise exc(f"{code}: {reply.get('detail', '')}".rstrip(": "))


def send_line(sock: socket.socket, obj: dict):
    sock.sendall(json.dumps(obj).encode("utf-8") + b"\n")


def recv_line(sock: socket.socket) -> dict:
    buf = bytearray()
    while not buf.endswith(b"\n"):
        chunk = sock.recv(4096)
        if not chunk:
            break
        buf += chunk
        if len(buf) > MAX_LINE:
            raise ProtocolError("side-channel line too long")
    if not buf:
        raise ProtocolError("side channel closed without a reply")
    try:
        obj = json.loads(buf.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad side-channel message: {exc}") from None
    if not isinstance(obj, dict):
        raise ProtocolError("side-channel message must be a JSON object")
    return obj


def recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ProtocolError(f"connection closed after {len(buf)} of {n} bytes")
        buf += chunk
    return bytes(buf)


def recv_tls_record(sock: socket.socket) -> bytes:
    header = recv_exact(sock, 5)
    total = read_record_length(header)
    if total is None:
        raise ProtocolError("expected a TLS record")
    return header + recv_exact(sock, total - 5)
