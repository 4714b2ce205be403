"""Handshake-shaped prefix for replays: a ClientHello carrying the service's SNI.

Middleboxes that classify encrypted traffic read the ``server_name`` extension
of the first client record. The replay client sends such a record before the
recorded bytes, the server answers with a ServerHello-shaped stub, and the
exchange then continues with the recorded payloads verbatim. Nothing here is
a real TLS session.
"""

from __future__ import annotations

import random
import struct
from dataclasses import dataclass, field

from .errors import HostnameTooLong
from .trace import is_valid_hostname

__all__ = [
    "DEFAULT_CIPHER_SUITES",
    "ClientHelloSpec",
    "build_client_hello",
    "build_server_hello_stub",
    "extract_sni",
    "read_record_length",
]

CONTENT_HANDSHAKE = 0x16
RECORD_VERSION = 0x0301
HELLO_VERSION = 0x0303
HS_CLIENT_HELLO = 0x01
HS_SERVER_HELLO = 0x02
EXT_SERVER_NAME = 0x0000
NAME_TYPE_HOST = 0x00

# Cipher list of a mainstream browser hello (TLS 1.3 suites first, then ECDHE/RSA).
DEFAULT_CIPHER_SUITES = (
    0x1301, 0x1302, 0x1303,
    0xC02B, 0xC02F, 0xC02C, 0xC030,
    0xCCA9, 0xCCA8,
    0xC013, 0xC014,
    0x009C, 0x009D, 0x002F, 0x0035,
)

_GROUPS = (0x001D, 0x0017, 0x0018)
_SIG_ALGS = (0x0403, 0x0804, 0x0401, 0x0503, 0x0805, 0x0501, 0x0806, 0x0601)


@dataclass(frozen=True)
class ClientHelloSpec:
    sni: str
    client_random: bytes
    cipher_suite_ids: tuple[int, ...] = DEFAULT_CIPHER_SUITES
    legacy_session_id: bytes = field(default=b"")

    def __post_init__(self):
        object.__setattr__(self, "cipher_suite_ids", tuple(self.cipher_suite_ids))
        if len(self.sni.encode("ascii", "replace")) > 253:
            raise HostnameTooLong(f"SNI is {len(self.sni)} bytes; the limit is 253")
        if not is_valid_hostname(self.sni):
            raise ValueError(f"invalid SNI hostname {self.sni!r}")
        if len(self.client_random) != 32:
            raise ValueError("client_random must be exactly 32 bytes")
        if not self.cipher_suite_ids or not all(0 <= c <= 0xFFFF for c in self.cipher_suite_ids):
            raise ValueError("cipher_suite_ids must be a non-empty list of 16-bit ids")
        if len(self.legacy_session_id) > 32:
            raise ValueError("legacy_session_id is at most 32 bytes")

    @classmethod
    def seeded(cls, sni: str, seed: int = 0) -> "ClientHelloSpec":
        rng = random.Random(seed)
        return cls(sni=sni, client_random=rng.randbytes(32), legacy_session_id=rng.randbytes(32))


def _u8_prefixed(data: bytes) -> bytes:
    return struct.pack("!B", len(data)) + data


def _u16_prefixed(data: bytes) -> bytes:
    return struct.pack("!H", len(data)) + data


def _extension(ext_type: int, body: bytes) -> bytes:
    return struct.pack("!H", ext_type) + _u16_prefixed(body)


def _record(handshake_type: int, body: bytes) -> bytes:
    handshake = struct.pack("!B", handshake_type) + len(body).to_bytes(3, "big") + body
    return struct.pack("!BHH", CONTENT_HANDSHAKE, RECORD_VERSION, len(handshake)) + handshake


def _server_name_extension(hostname: str) -> bytes:
    name = hostname.encode("ascii")
    entry = struct.pack("!B", NAME_TYPE_HOST) + _u16_prefixed(name)
    return _extension(EXT_SERVER_NAME, _u16_prefixed(entry))


def build_client_hello(spec: ClientHelloSpec) -> bytes:
    """Serialize ``spec`` as one handshake record holding a ClientHello."""
    if len(spec.sni.encode("ascii")) > 253:
        raise HostnameTooLong(spec.sni)
    extensions = b"".join([
        _server_name_extension(spec.sni),
        _extension(0x0017, b""),  # extended_master_secret
        _extension(0xFF01, b"\x00"),  # renegotiation_info
        _extension(0x000A, _u16_prefixed(b"".join(struct.pack("!H", g) for g in _GROUPS))),
        _extension(0x000B, _u8_prefixed(b"\x00")),  # ec_point_formats: uncompressed
        _extension(0x0023, b""),  # session_ticket
        _extension(0x000D, _u16_prefixed(b"".join(struct.pack("!H", a) for a in _SIG_ALGS))),
    ])
    body = b"".join([
        struct.pack("!H", HELLO_VERSION),
        spec.client_random,
        _u8_prefixed(spec.legacy_session_id),
        _u16_prefixed(b"".join(struct.pack("!H", c) for c in spec.cipher_suite_ids)),
        _u8_prefixed(b"\x00"),  # compression: null only
        _u16_prefixed(extensions),
    ])
    return _record(HS_CLIENT_HELLO, body)


def build_server_hello_stub(seed: int = 0) -> bytes:
    """A well-formed ServerHello record with a seeded random. No certificate follows."""
    rng = random.Random(seed)
    body = b"".join([
        struct.pack("!H", HELLO_VERSION),
        rng.randbytes(32),
        _u8_prefixed(rng.randbytes(32)),
        struct.pack("!H", 0xC02F),
        b"\x00",
        _u16_prefixed(_extension(0xFF01, b"\x00")),
    ])
    return _record(HS_SERVER_HELLO, body)


def read_record_length(header: bytes) -> int | None:
    """Total length of the TLS record whose 5-byte header is given, or None if not TLS-shaped."""
    if len(header) < 5 or header[0] not in (0x14, 0x15, 0x16, 0x17) or header[1] != 0x03:
        return None
    return 5 + struct.unpack_from("!H", header, 3)[0]


class _Truncated(Exception):
    pass


class _Reader:
    """Cursor over a bounded view; every read is checked against the bound."""

    def __init__(self, data: memoryview):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.data):
            raise _Truncated
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        b = self.take(2)
        return (b[0] << 8) | b[1]

    def u24(self) -> int:
        b = self.take(3)
        return (b[0] << 16) | (b[1] << 8) | b[2]

    def sub(self, n: int) -> "_Reader":
        return _Reader(self.take(n))

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos


def _parse_sni(record: bytes) -> str | None:
    outer = _Reader(memoryview(record))
    if outer.u8() != CONTENT_HANDSHAKE:
        return None
    if outer.u8() != 0x03:
        return None
    outer.u8()  # minor version
    rec = outer.sub(outer.u16())
    if rec.u8() != HS_CLIENT_HELLO:
        return None
    hello = rec.sub(rec.u24())
    if hello.u8() != 0x03:
        return None
    hello.u8()
    hello.take(32)  # random
    hello.take(hello.u8())  # session id
    suites = hello.u16()
    if suites % 2:
        return None
    hello.take(suites)
    hello.take(hello.u8())  # compression methods
    if hello.remaining == 0:
        return None  # no extensions block
    exts = hello.sub(hello.u16())
    while exts.remaining:
        ext_type = exts.u16()
        ext = exts.sub(exts.u16())
        if ext_type != EXT_SERVER_NAME:
            continue
        names = ext.sub(ext.u16())
        while names.remaining:
            name_type = names.u8()
            name = bytes(names.take(names.u16()))
            if name_type != NAME_TYPE_HOST:
                continue
            try:
                host = name.decode("ascii")
            except UnicodeDecodeError:
                return None
            return host if is_valid_hostname(host) else None
        return None
    return None


def extract_sni(record: bytes) -> str | None:
    """Host name from the first ``server_name`` extension of a ClientHello record.

    Returns None for anything that is not a complete, well-formed ClientHello
    with a host name: plain data, truncated records, other handshake types,
    hellos without the extension. Never reads past a declared length.
    """
    try:
        return _parse_sni(record)
    except _Truncated:
        return None
