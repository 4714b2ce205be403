"""Replay server: side-channel registration plus one data connection per registration."""

from __future__ import annotations

import logging
import socket
import threading
import time
import zlib
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ..errors import ConfigError, ProtocolError
from ..tls_mimic import build_server_hello_stub
from ..trace import Direction, ServiceTrace, bit_reverse_trace, load_trace
from .protocol import Kind, recv_exact, recv_line, recv_tls_record, refusal, send_line

log = logging.getLogger(__name__)

PEEK_BYTES = 64
PEEK_WAIT_S = 1.0
CAPTURE_BYTES = 512


def make_trace_store(traces) -> dict[str, dict[Kind, ServiceTrace]]:
    """Index original traces by service name and pair each with its bit-reversed control."""
    store = {}
    for t in traces:
        store[t.service_name] = {Kind.ORIGINAL: t, Kind.CONTROL: bit_reverse_trace(t)}
    return store


def load_trace_dir(path) -> dict[str, dict[Kind, ServiceTrace]]:
    files = sorted(Path(path).glob("*.json"))
    if not files:
        raise ConfigError(f"no trace files (*.json) in {path}")
    return make_trace_store(load_trace(f) for f in files)


@dataclass
class Registration:
    key: tuple
    client_id: str
    service: str
    kind: Kind
    run_index: int
    sni_prefix: bool
    source_ip: str
    created: float = field(default_factory=time.monotonic)
    connected: bool = False


@dataclass
class SessionRecord:
    client_id: str
    service: str
    kind: Kind
    run_index: int
    first_bytes: bytes = b""
    fidelity_ok: bool = False
    completed: bool = False
    error: str | None = None
    # (scheduled offset, actual offset) in seconds for every server-sent entry
    send_log: list[tuple[float, float]] = field(default_factory=list)


class ReplayServer:
    """Serves stored traces to registered clients.

    With ``data_port=None`` every registration gets its own short-lived data
    listener, so the server always knows which client a data connection
    belongs to. With a fixed ``data_port`` (needed when a proxy sits in front
    with a static upstream) a data connection goes to the oldest pending
    registration whose expected opening bytes it carries.

    Registrations are keyed by ``(client_id, service, kind)``. ``ip_keyed=True``
    instead keys them by source address alone, which allows only one active
    replay per address.
    """

    def __init__(
        self,
        trace_store: Mapping[str, Mapping[Kind, ServiceTrace]],
        host: str = "127.0.0.1",
        side_port: int = 0,
        data_port: int | None = None,
        ip_keyed: bool = False,
        idle_timeout: float = 10.0,
    ):
        if not trace_store:
            raise ConfigError("trace store is empty")
        self.trace_store = trace_store
        self.host = host
        self.side_port = side_port
        self.data_port = data_port
        self.ip_keyed = ip_keyed
        self.idle_timeout = idle_timeout
        self.sessions: list[SessionRecord] = []
        self._active: dict[tuple, Registration] = {}
        self._pending: deque[Registration] = deque()
        self._lock = threading.Lock()
        self._done = threading.Condition(self._lock)
        self._stop = threading.Event()
        self._socks: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self.side_address: tuple[str, int] | None = None
        self.data_address: tuple[str, int] | None = None

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "ReplayServer":
        side = self._listen(self.side_port)
        self.side_address = side.getsockname()[:2]
        self._spawn(self._accept_loop, side, self._side_session)
        if self.data_port is not None:
            data = self._listen(self.data_port)
            self.data_address = data.getsockname()[:2]
            self._spawn(self._accept_loop, data, self._shared_data_session)
        log.info("replay server side channel on %s:%d", *self.side_address)
        return self

    def stop(self):
        self._stop.set()
        for s in self._socks:
            try:
                s.close()
            except OSError:
                pass
        for t in self._threads:
            t.join(timeout=2)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def _listen(self, port: int) -> socket.socket:
        s = socket.create_server((self.host, port), backlog=64)
        s.settimeout(0.2)
        self._socks.append(s)
        return s

    def _spawn(self, fn, *args):
        t = threading.Thread(target=fn, args=args, daemon=True)
        t.start()
        self._threads.append(t)

    def _accept_loop(self, lsock: socket.socket, handler):
        while not self._stop.is_set():
            try:
                conn, peer = lsock.accept()
            except socket.timeout:
                self._expire()
                continue
            except OSError:
                return
            threading.Thread(target=handler, args=(conn, peer), daemon=True).start()

    # -- registration --------------------------------------------------------

    def wait_for_sessions(self, n: int, timeout: float = 10.0) -> bool:
        """Block until at least ``n`` data sessions have finished."""
        with self._done:
            return self._done.wait_for(lambda: len(self.sessions) >= n, timeout)

    def active_registrations(self) -> list[Registration]:
        with self._lock:
            return list(self._active.values())

    def _expire(self):
        now = time.monotonic()
        with self._lock:
            stale = [r for r in self._pending if now - r.created > self.idle_timeout]
            for r in stale:
                self._pending.remove(r)
                self._active.pop(r.key, None)

    def _release(self, reg: Registration):
        with self._lock:
            if self._active.get(reg.key) is reg:
                del self._active[reg.key]

    def _side_session(self, conn: socket.socket, peer):
        with conn:
            conn.settimeout(self.idle_timeout)
            try:
                msg = recv_line(conn)
                reply = self._register(msg, peer[0])
            except ProtocolError as exc:
                reply = refusal("BadRequest", str(exc))
            except OSError:
                return
            try:
                send_line(conn, reply)
            except OSError:
                pass

    def _register(self, msg: dict, source_ip: str) -> dict:
        try:
            client_id = msg["client_id"]
            service = msg["service"]
            kind = Kind(msg["kind"])
            run_index = int(msg["run_index"])
        except (KeyError, ValueError, TypeError) as exc:
            return refusal("BadRequest", f"malformed registration: {exc}")
        if not isinstance(client_id, str) or not client_id:
            return refusal("BadRequest", "client_id must be a non-empty string")
        if service not in self.trace_store:
            return refusal("UnknownService", service)
        key = (source_ip,) if self.ip_keyed else (client_id, service, kind.value)
        reg = Registration(key, client_id, service, kind, run_index, bool(msg.get("sni_prefix", False)), source_ip)
        listener = None
        with self._lock:
            if key in self._active:
                return refusal("DuplicateActiveReplay", f"replay already active for {key}")
            if self.data_port is None:
                listener = socket.create_server((self.host, 0))
            else:
                self._pending.append(reg)
            self._active[key] = reg
        if listener is not None:
            listener.settimeout(self.idle_timeout)
            port = listener.getsockname()[1]
            threading.Thread(target=self._private_data_session, args=(listener, reg), daemon=True).start()
        else:
            port = self.data_address[1]
        return {"ok": True, "data_port": port}

    # -- data connections ----------------------------------------------------

    def _private_data_session(self, listener: socket.socket, reg: Registration):
        try:
            with listener:
                conn, _ = listener.accept()
        except OSError:
            self._release(reg)
            return
        self._serve(conn, reg)

    def _shared_data_session(self, conn: socket.socket, peer):
        with self._lock:
            several = len(self._pending) > 1
        head = b""
        if several:
            # peek at the opening bytes to tell concurrent registrations apart
            conn.settimeout(PEEK_WAIT_S)
            try:
                head = conn.recv(PEEK_BYTES, socket.MSG_PEEK)
            except OSError:
                pass
        with self._lock:
            reg = next((r for r in self._pending if self._expects(r, head)), None)
            if reg is None and self._pending:
                reg = self._pending[0]
            if reg is not None:
                self._pending.remove(reg)
        if reg is None:
            conn.close()
            return
        self._serve(conn, reg)

    def _expects(self, reg: Registration, head: bytes) -> bool:
        if reg.sni_prefix:
            return head[:1] == b"\x16" and (len(head) < 6 or head[5] == 0x01)
        stream = self.trace_store[reg.service][reg.kind].payload_stream(Direction.CLIENT_TO_SERVER)
        return stream[:len(head)] == head

    def _serve(self, conn: socket.socket, reg: Registration):
        reg.connected = True
        trace = self.trace_store[reg.service][reg.kind]
        rec = SessionRecord(reg.client_id, reg.service, reg.kind, reg.run_index)
        capture = bytearray()
        try:
            with conn:
                conn.settimeout(self.idle_timeout)
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                if reg.sni_prefix:
                    capture += recv_tls_record(conn)
                    conn.sendall(build_server_hello_stub(zlib.crc32(f"{reg.service}:{reg.run_index}".encode())))
                t0 = time.monotonic()
                fidelity = True
                for deadline_ms, entry in zip(trace.deadlines_ms(), trace.entries):
                    if entry.direction is Direction.CLIENT_TO_SERVER:
                        got = recv_exact(conn, len(entry.payload))
                        if len(capture) < CAPTURE_BYTES:
                            capture += got[:CAPTURE_BYTES - len(capture)]
                        fidelity &= got == entry.payload
                        continue
                    target = deadline_ms / 1000.0
                    wait = t0 + target - time.monotonic()
                    if wait > 0:
                        time.sleep(wait)
                    rec.send_log.append((target, time.monotonic() - t0))
                    conn.sendall(entry.payload)
                rec.fidelity_ok = fidelity
                rec.completed = True
                try:
                    conn.shutdown(socket.SHUT_WR)
                    # drain until the client hangs up so the last bytes are not reset
                    while conn.recv(4096):
                        pass
                except OSError:
                    pass
        except (OSError, ProtocolError) as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
        finally:
            rec.first_bytes = bytes(capture)
            self._release(reg)
            with self._done:
                self.sessions.append(rec)
                self._done.notify_all()


def run_replay_server(trace_store, **config) -> ReplayServer:
    """Start a replay server and return its running handle."""
    return ReplayServer(trace_store, **config).start()
