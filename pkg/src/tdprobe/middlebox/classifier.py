"""Flow classification: SNI first, then payload signatures, then the port."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

from ..tls_mimic import extract_sni

HTTPS_UNKNOWN = "HTTPS-unknown"
HTTP_UNKNOWN = "HTTP-unknown"
UNKNOWN = "unknown"


class Method(enum.Enum):
    SNI = "sni"
    DPI_SIGNATURE = "dpi"
    PORT_DEFAULT = "port"


@dataclass(frozen=True)
class Classification:
    label: str
    method: Method

    def __post_init__(self):
        if not self.label:
            raise ValueError("label must be non-empty")


@dataclass(frozen=True)
class PayloadPattern:
    offset: int | None  # None matches anywhere in the inspected bytes
    data: bytes

    def matches(self, buf: bytes) -> bool:
        if self.offset is None:
            return self.data in buf
        return buf[self.offset:self.offset + len(self.data)] == self.data


@dataclass(frozen=True)
class ClassifierRule:
    label: str
    sni_suffixes: tuple[str, ...] = ()
    payload_patterns: tuple[PayloadPattern, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "sni_suffixes", tuple(s.lower().strip(".") for s in self.sni_suffixes))
        object.__setattr__(self, "payload_patterns", tuple(self.payload_patterns))
        if not self.label:
            raise ValueError("rule label must be non-empty")
        if not self.sni_suffixes and not self.payload_patterns:
            raise ValueError(f"rule {self.label!r} needs an SNI suffix or a payload pattern")

    def matches_host(self, host: str) -> bool:
        host = host.lower()
        return any(host == s or host.endswith("." + s) for s in self.sni_suffixes)


def port_default(dst_port: int) -> Classification:
    if dst_port == 443:
        return Classification(HTTPS_UNKNOWN, Method.PORT_DEFAULT)
    if dst_port == 80:
        return Classification(HTTP_UNKNOWN, Method.PORT_DEFAULT)
    return Classification(UNKNOWN, Method.PORT_DEFAULT)


def classify(first_bytes: bytes, dst_port: int, rules: Sequence[ClassifierRule]) -> Classification:
    """Label a flow from its first client bytes and destination port.

    Rules are tried in order. A ClientHello host name matching any rule's
    suffix wins outright; otherwise the first rule with a matching payload
    pattern; otherwise a port-based default.
    """
    host = extract_sni(first_bytes)
    if host is not None:
        for rule in rules:
            if rule.matches_host(host):
                return Classification(rule.label, Method.SNI)
    for rule in rules:
        if any(p.matches(first_bytes) for p in rule.payload_patterns):
            return Classification(rule.label, Method.DPI_SIGNATURE)
    return port_default(dst_port)
