"""Replay client: register on the side channel, replay with preserved timing, bin what arrives."""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import replace
from typing import Mapping

from ..detector import ThroughputSeries
from ..errors import ConfigError, DataConnectFailed, NetworkError, ProtocolError, TDProbeError
from ..middlebox.simulator import SimulatedPath
from ..tls_mimic import ClientHelloSpec, build_client_hello
from ..trace import Direction, ServiceTrace, bit_reverse_trace
from .protocol import Kind, ReplayRequest, ReplayResult, raise_for_reply, recv_line, recv_tls_record, send_line

log = logging.getLogger(__name__)

DEFAULT_BIN_MS = 100
DEFAULT_IDLE_TIMEOUT = 10.0
HTTPS_PORT = 443


def data_port_for(trace: ServiceTrace, request: ReplayRequest) -> int:
    """Destination port the middlebox sees for this replay."""
    if request.dst_port_override is not None:
        return request.dst_port_override
    if request.use_sni_prefix:
        return HTTPS_PORT
    return trace.dst_port


def _wants_prefix(request: ReplayRequest) -> bool:
    return request.use_sni_prefix and request.kind is Kind.ORIGINAL


def _client_hello(trace: ServiceTrace, request: ReplayRequest, seed: int) -> bytes:
    if not trace.sni:
        raise ConfigError(f"trace {trace.service_name!r} has no SNI; replay it without the handshake prefix")
    return build_client_hello(ClientHelloSpec.seeded(trace.sni, seed + request.run_index))


def register(endpoint: tuple[str, int], request: ReplayRequest, timeout: float = 5.0) -> dict:
    """Side-channel handshake. Returns the server's reply; raises on refusal."""
    try:
        with socket.create_connection(endpoint, timeout=timeout) as s:
            send_line(s, request.registration())
            reply = recv_line(s)
    except OSError as exc:
        raise NetworkError(f"side channel {endpoint[0]}:{endpoint[1]} unreachable: {exc}") from exc
    raise_for_reply(reply)
    if not isinstance(reply.get("data_port"), int):
        raise ProtocolError(f"reply lacks data_port: {reply}")
    return reply


def run_replay_client(
    endpoint,
    trace: ServiceTrace,
    request: ReplayRequest,
    bin_width_ms: float = DEFAULT_BIN_MS,
    idle_timeout: float = DEFAULT_IDLE_TIMEOUT,
    routes: Mapping[int, tuple[str, int]] | None = None,
    seed: int = 0,
) -> ReplayResult:
    """Replay ``trace`` against a replay server and measure the downlink.

    ``endpoint`` is the server's ``(host, side_port)``, or a ``SimulatedPath``
    to run the same replay on a virtual clock. ``routes`` maps the
    destination port a middlebox should see to the address that stands for it
    (e.g. a shaper proxy listening on an unprivileged port).
    """
    if bin_width_ms <= 0:
        raise ConfigError("bin_width_ms must be positive")
    if isinstance(endpoint, SimulatedPath):
        return _simulated_replay(endpoint, trace, request, bin_width_ms, seed)

    hello = _client_hello(trace, request, seed) if _wants_prefix(request) else None
    reply = register(tuple(endpoint), request)
    logical_port = data_port_for(trace, request)
    target = (routes or {}).get(logical_port, (endpoint[0], reply["data_port"]))
    try:
        conn = socket.create_connection(target, timeout=5.0)
    except OSError as exc:
        raise DataConnectFailed(f"data connection to {target[0]}:{target[1]} failed: {exc}") from exc

    with conn:
        conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        conn.settimeout(idle_timeout)
        if hello is not None:
            conn.sendall(hello)
            recv_tls_record(conn)
        return _exchange(conn, trace, request, bin_width_ms)


def _exchange(conn: socket.socket, trace: ServiceTrace, request: ReplayRequest, bin_width_ms: float) -> ReplayResult:
    expected = trace.payload_stream(Direction.SERVER_TO_CLIENT)
    bin_s = bin_width_ms / 1000.0
    bins: list[int] = []
    state = {"got": 0, "last": 0.0, "mismatch": False, "error": None}
    t0 = time.monotonic()

    def receive():
        try:
            while state["got"] < len(expected):
                data = conn.recv(65536)
                if not data:
                    state["error"] = "server closed the connection early"
                    return
                t = time.monotonic() - t0
                k = int(t / bin_s)
                if k >= len(bins):
                    bins.extend([0] * (k + 1 - len(bins)))
                bins[k] += len(data)
                pos = state["got"]
                if data != expected[pos:pos + len(data)]:
                    state["mismatch"] = True
                state["got"] = pos + len(data)
                state["last"] = t
        except socket.timeout:
            state["error"] = f"no data for {conn.gettimeout():.1f} s"
        except OSError as exc:
            state["error"] = f"receive failed: {exc}"

    receiver = threading.Thread(target=receive, daemon=True)
    receiver.start()

    send_log = []
    try:
        for deadline_ms, entry in zip(trace.deadlines_ms(), trace.entries):
            if entry.direction is not Direction.CLIENT_TO_SERVER:
                continue
            target = deadline_ms / 1000.0
            wait = t0 + target - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            send_log.append((target, time.monotonic() - t0))
            conn.sendall(entry.payload)
    except OSError as exc:
        state["error"] = state["error"] or f"send failed: {exc}"
    receiver.join()

    completed = state["got"] == len(expected) and not state["mismatch"] and state["error"] is None
    note = state["error"]
    if state["mismatch"]:
        note = "received bytes differ from the trace"
    if expected:
        duration_ms = max(state["last"] * 1000.0, 1.0)
    else:
        duration_ms = float(trace.duration_ms)
    return ReplayResult(
        throughput=ThroughputSeries(bin_width_ms, tuple(bins) or (0,)),
        total_bytes=state["got"],
        duration_ms=duration_ms,
        completed=completed,
        error_note=note,
        send_log=send_log,
        request=request,
    )


def _simulated_replay(path: SimulatedPath, trace, request, bin_width_ms, seed) -> ReplayResult:
    if _wants_prefix(request):
        first = _client_hello(trace, request, seed)
    else:
        first = next((e.payload for e in trace.entries if e.direction is Direction.CLIENT_TO_SERVER), b"")
    series, total, duration_ms, _ = path.replay(trace, first, data_port_for(trace, request), bin_width_ms)
    send_log = [(d / 1000.0, d / 1000.0) for d, e in zip(trace.deadlines_ms(), trace.entries)
                if e.direction is Direction.CLIENT_TO_SERVER]
    return ReplayResult(series, total, duration_ms, True, None, send_log, request)


def failed_result(request: ReplayRequest, bin_width_ms: float, note: str, code: int | None = None) -> ReplayResult:
    return ReplayResult(ThroughputSeries(bin_width_ms, (0,)), 0, 1.0, False, note, [], request, code)


def run_back_to_back(
    endpoint,
    original: ServiceTrace,
    request_base: ReplayRequest,
    n_runs: int,
    bin_width_ms: float = DEFAULT_BIN_MS,
    **kwargs,
) -> list[tuple[ReplayResult, ReplayResult]]:
    """``n_runs`` sequential (original, control) pairs; a failed run is recorded, not fatal."""
    if n_runs < 1:
        raise ConfigError("n_runs must be at least 1")
    control = bit_reverse_trace(original)
    results = []
    for i in range(n_runs):
        pair = []
        for kind, trace in ((Kind.ORIGINAL, original), (Kind.CONTROL, control)):
            req = replace(request_base, kind=kind, run_index=i)
            try:
                res = run_replay_client(endpoint, trace, req, bin_width_ms=bin_width_ms, **kwargs)
            except ConfigError:
                raise
            except (TDProbeError, OSError) as exc:
                log.warning("run %d %s failed: %s", i, kind.value, exc)
                res = failed_result(req, bin_width_ms, f"{type(exc).__name__}: {exc}",
                                    getattr(exc, "exit_code", NetworkError.exit_code))
            pair.append(res)
        results.append((pair[0], pair[1]))
    return results
