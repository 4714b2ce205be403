"""Brute-force reference computations, kept independent of the code under test."""

import struct
from fractions import Fraction


def ecdf_ks(a, b):
    """sup |F_a - F_b| evaluated at every sample point, O(|a|*|b|)."""
    best = 0.0
    for x in list(a) + list(b):
        fa = sum(1 for v in a if v <= x)
        fb = sum(1 for v in b if v <= x)
        d = abs(fa / len(a) - fb / len(b))
        if d > best:
            best = d
    return best


def ecdf_ks_exact(a, b):
    """Same as ecdf_ks in rational arithmetic."""
    best = Fraction(0)
    for x in list(a) + list(b):
        fa = Fraction(sum(1 for v in a if v <= x), len(a))
        fb = Fraction(sum(1 for v in b if v <= x), len(b))
        best = max(best, abs(fa - fb))
    return best


def token_bucket_1ms(rate_bps, burst_bytes, packet_bytes, offered_bps, duration_s):
    """Discrete-event token bucket on a 1 ms grid; returns bytes forwarded.

    Packets arrive at the offered rate into a FIFO; each millisecond the bucket
    refills (capped at the burst) and head-of-line packets leave while tokens last.
    """
    step = 0.001
    tokens = float(burst_bytes)
    queue = 0  # packets waiting
    arrived = 0.0
    sent = 0
    per_step_arrivals = offered_bps / 8.0 / packet_bytes * step
    for _ in range(int(round(duration_s / step))):
        tokens = min(float(burst_bytes), tokens + rate_bps / 8.0 * step)
        arrived += per_step_arrivals
        while arrived >= 1.0:
            arrived -= 1.0
            queue += 1
        while queue and tokens >= packet_bytes:
            tokens -= packet_bytes
            queue -= 1
            sent += packet_bytes
    return sent


def proportional_share(demand, weight, capacity):
    """Weight-times-demand sharing capped at demand, by repeated full recomputation."""
    n = len(demand)
    if sum(demand) <= capacity:
        return list(demand)
    fixed = {}
    while True:
        free = [i for i in range(n) if i not in fixed and demand[i] > 0]
        left = capacity - sum(fixed.values())
        s = sum(weight[i] * demand[i] for i in free)
        share = {i: left * weight[i] * demand[i] / s for i in free}
        over = [i for i in free if share[i] >= demand[i]]
        if not over:
            return [fixed.get(i, share.get(i, 0.0)) for i in range(n)]
        for i in over:
            fixed[i] = demand[i]


def walk_tls_record(record: bytes):
    """Check every declared length in a handshake record; return (handshake_type, extension types).

    Raises AssertionError on any inconsistency.
    """
    assert record[0] == 0x16
    (rec_len,) = struct.unpack("!H", record[3:5])
    assert rec_len == len(record) - 5, "record length"
    hs = record[5:]
    hs_type = hs[0]
    hs_len = int.from_bytes(hs[1:4], "big")
    assert rec_len == hs_len + 4, "handshake length"
    body = hs[4:]
    assert len(body) == hs_len
    pos = 2 + 32
    sid_len = body[pos]
    pos += 1 + sid_len
    if hs_type == 0x01:
        (cs_len,) = struct.unpack("!H", body[pos:pos + 2])
        assert cs_len % 2 == 0 and cs_len > 0
        pos += 2 + cs_len
        comp_len = body[pos]
        pos += 1 + comp_len
    else:
        pos += 2 + 1  # chosen suite + compression
    (ext_total,) = struct.unpack("!H", body[pos:pos + 2])
    pos += 2
    assert pos + ext_total == len(body), "extensions length"
    ext_types, end, summed = [], pos + ext_total, 0
    while pos < end:
        etype, elen = struct.unpack("!HH", body[pos:pos + 4])
        ext_types.append(etype)
        data = body[pos + 4:pos + 4 + elen]
        assert len(data) == elen
        if etype == 0x0000:
            (list_len,) = struct.unpack("!H", data[:2])
            assert list_len == elen - 2, "server_name_list length"
            assert data[2] == 0x00
            (name_len,) = struct.unpack("!H", data[3:5])
            assert name_len == list_len - 3, "host_name length"
        summed += 4 + elen
        pos += 4 + elen
    assert summed == ext_total
    return hs_type, ext_types
