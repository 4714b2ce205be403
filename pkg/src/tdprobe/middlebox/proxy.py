"""Inline TCP forwarder that classifies each connection and shapes its downlink."""

from __future__ import annotations

import json
import logging
import socket
import threading
import time
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .classifier import Classification, ClassifierRule, classify, port_default
from .shaper import FlowState, ShapingPolicy, shape

log = logging.getLogger(__name__)

INSPECT_LIMIT = 8192
CLASSIFY_TIMEOUT_S = 2.0
RECV_SIZE = 65536


@dataclass(frozen=True)
class ListenSpec:
    """Where to accept, and the destination port flows through it are classified under."""

    host: str
    port: int
    logical_port: int | None = None

    @property
    def classify_port(self) -> int:
        return self.logical_port if self.logical_port is not None else self.port

    @classmethod
    def parse(cls, text: str) -> "ListenSpec":
        """``host:port`` or ``host:port@logical_port``."""
        addr, _, logical = text.partition("@")
        host, _, port = addr.rpartition(":")
        return cls(host or "127.0.0.1", int(port), int(logical) if logical else None)


class _Counters:
    def __init__(self):
        self._lock = threading.Lock()
        self._bytes = defaultdict(int)
        self._flows = defaultdict(int)
        self._methods = defaultdict(lambda: defaultdict(int))

    def flow(self, c: Classification):
        with self._lock:
            self._flows[c.label] += 1
            self._methods[c.label][c.method.value] += 1
            self._bytes[c.label] += 0

    def add_bytes(self, label: str, n: int):
        with self._lock:
            self._bytes[label] += n

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "labels": {
                    label: {
                        "bytes": self._bytes[label],
                        "flows": self._flows[label],
                        "methods": dict(self._methods[label]),
                    }
                    for label in sorted(self._bytes)
                }
            }


class ShaperProxy:
    """Forward connections to ``upstream``, shaping server-to-client bytes per label.

    Client bytes are forwarded as they come and the first ``inspect_limit`` of
    them are kept for classification. The verdict is fixed when the buffer is
    full, when the first downlink bytes show up, or ``classify_timeout`` after
    connect if the client has said nothing.
    """

    def __init__(
        self,
        listen: ListenSpec | Sequence[ListenSpec],
        upstream: tuple[str, int],
        rules: Sequence[ClassifierRule],
        policy: ShapingPolicy,
        inspect_limit: int = INSPECT_LIMIT,
        classify_timeout: float = CLASSIFY_TIMEOUT_S,
        status_path=None,
    ):
        self.listen = [listen] if isinstance(listen, ListenSpec) else list(listen)
        self.upstream = upstream
        self.rules = list(rules)
        self.policy = policy
        self.inspect_limit = inspect_limit
        self.classify_timeout = classify_timeout
        self.status_path = status_path
        self.counters = _Counters()
        self.flows: list[FlowState] = []
        self._flows_lock = threading.Lock()
        self._socks: list[socket.socket] = []
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self.addresses: list[tuple[str, int]] = []

    # -- lifecycle -----------------------------------------------------------

    def start(self) -> "ShaperProxy":
        for spec in self.listen:
            s = socket.create_server((spec.host, spec.port), reuse_port=False)
            s.settimeout(0.2)
            self._socks.append(s)
            addr = s.getsockname()[:2]
            self.addresses.append(addr)
            logical = spec.logical_port if spec.logical_port is not None else addr[1]
            t = threading.Thread(target=self._accept_loop, args=(s, logical), daemon=True,
                                 name=f"shaper-accept-{addr[1]}")
            t.start()
            self._threads.append(t)
        return self

    def stop(self):
        self._stop.set()
        for s in self._socks:
            s.close()
        for t in self._threads:
            t.join(timeout=2)
        if self.status_path:
            self.write_status(self.status_path)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()

    def status(self) -> dict:
        return self.counters.snapshot()

    def write_status(self, path=None):
        path = path or self.status_path
        Path(path).write_text(json.dumps(self.status()) + "\n", encoding="utf-8")

    # -- forwarding ----------------------------------------------------------

    def _accept_loop(self, lsock: socket.socket, logical_port: int):
        while not self._stop.is_set():
            try:
                conn, peer = lsock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._handle, args=(conn, peer, logical_port), daemon=True).start()

    def _handle(self, client: socket.socket, peer, logical_port: int):
        try:
            upstream = socket.create_connection(self.upstream, timeout=5)
        except OSError as exc:
            log.warning("upstream %s unreachable: %s", self.upstream, exc)
            client.close()
            return
        upstream.settimeout(None)
        for s in (client, upstream):
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        flow = FlowState(key=(peer, (self.upstream[0], logical_port)))
        with self._flows_lock:
            self.flows.append(flow)
        decided = threading.Event()
        connected_at = time.monotonic()

        def decide():
            with flow.lock:
                if flow.classification is None:
                    c = (classify(bytes(flow.inspected), logical_port, self.rules)
                         if flow.inspected else port_default(logical_port))
                    flow.set_classification(c)
                    self.counters.flow(c)
            decided.set()

        def uplink():
            try:
                while True:
                    data = client.recv(RECV_SIZE)
                    if not data:
                        break
                    if not decided.is_set():
                        with flow.lock:
                            if flow.classification is None:
                                flow.inspected += data[:self.inspect_limit - len(flow.inspected)]
                            full = len(flow.inspected) >= self.inspect_limit
                        if full:
                            decide()
                    upstream.sendall(data)
            except OSError:
                pass
            finally:
                _shutdown(upstream, socket.SHUT_WR)

        def timer():
            if not decided.wait(self.classify_timeout):
                decide()

        threading.Thread(target=uplink, daemon=True).start()
        threading.Thread(target=timer, daemon=True).start()
        try:
            while True:
                data = upstream.recv(self._chunk_size(flow))
                if not data:
                    break
                if not decided.is_set():
                    if flow.inspected:
                        decide()
                    else:
                        decided.wait(max(0.0, connected_at + self.classify_timeout - time.monotonic()))
                        decide()
                self._forward_shaped(flow, client, data)
        except OSError:
            pass
        finally:
            _shutdown(client, socket.SHUT_WR)
            upstream.close()
            client.close()

    def _chunk_size(self, flow: FlowState) -> int:
        if flow.classification is None:
            return RECV_SIZE
        lr = self.policy.rate_for(flow.classification.label)
        if lr is None:
            return RECV_SIZE
        # roughly 10 ms worth of tokens per release keeps the downlink smooth
        return int(max(1024, min(RECV_SIZE, lr.rate_bps / 8.0 * 0.01, lr.burst_bytes)))

    def _forward_shaped(self, flow: FlowState, client: socket.socket, data: bytes):
        label = flow.classification.label
        step = self._chunk_size(flow)
        for off in range(0, len(data), step):
            piece = data[off:off + step]
            delay = shape(flow, len(piece), time.monotonic(), self.policy)
            if delay > 0:
                time.sleep(delay)
            client.sendall(piece)
            self.counters.add_bytes(label, len(piece))


def _shutdown(s: socket.socket, how):
    try:
        s.shutdown(how)
    except OSError:
        pass


def run_shaper_proxy(listen, upstream, rules, policy, **kwargs) -> ShaperProxy:
    """Start a proxy and return its running handle (call ``stop()`` to end it)."""
    return ShaperProxy(listen, upstream, rules, policy, **kwargs).start()
