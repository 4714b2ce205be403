import random
import ssl
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import walk_tls_record
from tdprobe.errors import HostnameTooLong
from tdprobe.tls_mimic import (
    ClientHelloSpec,
    build_client_hello,
    build_server_hello_stub,
    extract_sni,
)
from tdprobe.trace import bit_reverse_bytes


def reference_client_hello(hostname: str) -> bytes:
    """First flight of the platform TLS stack for ``hostname``, captured from a memory BIO."""
    ctx = ssl.create_default_context()
    incoming, outgoing = ssl.MemoryBIO(), ssl.MemoryBIO()
    obj = ctx.wrap_bio(incoming, outgoing, server_hostname=hostname)
    with pytest.raises(ssl.SSLWantReadError):
        obj.do_handshake()
    return outgoing.read()


def server_name_extension(record: bytes) -> bytes:
    """Raw bytes of the server_name extension (type, length, body), found by walking the hello."""
    body = record[9:]
    pos = 2 + 32
    pos += 1 + body[pos]
    pos += 2 + struct.unpack("!H", body[pos:pos + 2])[0]
    pos += 1 + body[pos]
    end = pos + 2 + struct.unpack("!H", body[pos:pos + 2])[0]
    pos += 2
    while pos < end:
        etype, elen = struct.unpack("!HH", body[pos:pos + 4])
        if etype == 0:
            return body[pos:pos + 4 + elen]
        pos += 4 + elen
    raise AssertionError("no server_name extension")


def spec(sni="youtube.com", seed=0):
    return ClientHelloSpec.seeded(sni, seed)


def test_record_header():
    rec = build_client_hello(spec())
    assert rec[:3] == b"\x16\x03\x01"
    assert rec[5] == 0x01
    assert rec[9:11] == b"\x03\x03"


def test_server_name_extension_matches_reference_stack():
    ours = server_name_extension(build_client_hello(spec("youtube.com")))
    theirs = server_name_extension(reference_client_hello("youtube.com"))
    assert ours == theirs
    assert ours == b"\x00\x00\x00\x10\x00\x0e\x00\x00\x0byoutube.com"


def test_extract_from_reference_stack():
    assert extract_sni(reference_client_hello("r3---sn-a.googlevideo.com")) == "r3---sn-a.googlevideo.com"


def test_hello_without_server_name():
    ctx = ssl.create_default_context()
    ctx.check_hostname = False
    incoming, outgoing = ssl.MemoryBIO(), ssl.MemoryBIO()
    obj = ctx.wrap_bio(incoming, outgoing, server_hostname=None)
    with pytest.raises(ssl.SSLWantReadError):
        obj.do_handshake()
    assert extract_sni(outgoing.read()) is None


def test_control_payload_is_not_a_hello():
    rec = build_client_hello(spec())
    assert extract_sni(bit_reverse_bytes(rec)) is None


@pytest.mark.parametrize("cut", [1, 5, 10, 43, 60, -1])
def test_truncated_records(cut):
    rec = build_client_hello(spec())
    assert extract_sni(rec[:cut]) is None


def test_lengths_lie_outward():
    rec = bytearray(build_client_hello(spec()))
    rec[3:5] = struct.pack("!H", 0xFFFF)  # record claims more than is there
    assert extract_sni(bytes(rec)) is None


def test_hostname_too_long():
    name = ".".join(["a" * 63] * 4)  # 255 bytes
    with pytest.raises(HostnameTooLong):
        ClientHelloSpec(name, bytes(32))


def test_spec_validation():
    with pytest.raises(ValueError):
        ClientHelloSpec("x.com", bytes(31))
    with pytest.raises(ValueError):
        ClientHelloSpec("x.com", bytes(32), cipher_suite_ids=())
    with pytest.raises(ValueError):
        ClientHelloSpec("x.com", bytes(32), legacy_session_id=bytes(33))


def test_server_hello_stub():
    stub = build_server_hello_stub(42)
    assert stub[0] == 0x16 and stub[5] == 0x02
    assert stub == build_server_hello_stub(42)
    assert stub != build_server_hello_stub(43)
    assert extract_sni(stub) is None
    assert walk_tls_record(stub)[0] == 0x02


_labels = st.from_regex(r"[a-zA-Z0-9]([a-zA-Z0-9-]{0,20}[a-zA-Z0-9])?", fullmatch=True)
hostnames = st.lists(_labels, min_size=1, max_size=6).map(".".join).filter(lambda h: len(h) <= 253)


@settings(max_examples=100, deadline=None)
@given(hostnames, st.integers(0, 2**32))
def test_round_trip_and_lengths(host, seed):
    rec = build_client_hello(spec(host, seed))
    assert extract_sni(rec) == host
    hs_type, ext_types = walk_tls_record(rec)
    assert hs_type == 0x01 and ext_types[0] == 0x0000


@settings(max_examples=300, deadline=None)
@given(st.binary(max_size=4096))
def test_fuzz_random_bytes(data):
    got = extract_sni(data)
    assert got is None or isinstance(got, str)


def test_fuzz_large_and_mutated():
    rng = random.Random(5)
    base = build_client_hello(spec("a.b.example"))
    for _ in range(2000):
        buf = bytearray(base)
        for _ in range(rng.randint(1, 6)):
            buf[rng.randrange(len(buf))] = rng.randrange(256)
        got = extract_sni(bytes(buf))
        assert got is None or isinstance(got, str)
    for size in (0, 1, 5, 16384, 65536):
        got = extract_sni(rng.randbytes(size))
        assert got is None or isinstance(got, str)
    # a handshake header in front of 64 KiB of noise
    noisy = b"\x16\x03\x01\xff\xff\x01" + rng.randbytes(65530)
    assert extract_sni(noisy) is None
