"""Built-in cross-checks run by ``gpufabric selftest``."""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import codec
from .des import LatencyProfile, analytic_read_throughput, simulate_read_stream
from .errors import CrcMismatch
from .tlp import MessageRouting, Tlp, TlpKind

GRID_TAGS = (1, 5, 32, 140)
GRID_RTT_NS = (1200, 4900, 6800, 19000)
GRID_MRS = (64, 128, 256)


def random_tlp(rng: random.Random, mrs: int = 128) -> Tlp:
    """Draw a well-formed TLP of any kind with payload/read size in 0..mrs."""
    kind = rng.choice(list(TlpKind))
    tag = rng.randrange(256)
    addr = rng.randrange(1 << 64)
    bus, dev = rng.randrange(256), rng.randrange(32)

    def data(lo=0):
        return rng.randbytes(rng.randint(lo, mrs))

    if kind is TlpKind.MEM_READ:
        return Tlp(kind, address=addr, tag=tag, read_len=rng.randint(1, mrs))
    if kind is TlpKind.MEM_WRITE:
        return Tlp(kind, address=addr, payload=data())
    if kind is TlpKind.IO_READ:
        return Tlp(kind, address=addr & 0xFFFFFFFF, tag=tag, read_len=rng.randint(1, min(4, mrs)))
    if kind is TlpKind.IO_WRITE:
        return Tlp(kind, address=addr & 0xFFFFFFFF, tag=tag, payload=rng.randbytes(rng.randint(1, min(4, mrs))))
    if kind is TlpKind.CONFIG_READ:
        return Tlp(kind, bus_id=bus, device_id=dev, register=rng.randrange(0x1000), tag=tag,
                   read_len=rng.randint(1, min(4, mrs)))
    if kind is TlpKind.CONFIG_WRITE:
        return Tlp(kind, bus_id=bus, device_id=dev, register=rng.randrange(0x1000), tag=tag,
                   payload=rng.randbytes(rng.randint(1, min(8, mrs))))
    if kind is TlpKind.COMPLETION:
        return Tlp(kind, bus_id=bus, device_id=dev, tag=tag, payload=data())
    routing = rng.choice(list(MessageRouting))
    kw = {}
    if routing is MessageRouting.ADDRESS:
        kw["address"] = addr
    elif routing is MessageRouting.ID:
        kw.update(bus_id=bus, device_id=dev)
    return Tlp(kind, message_routing=routing, payload=data(), **kw)


def flip_bit(packets: list[bytes], rng: random.Random) -> list[bytes]:
    i = rng.randrange(len(packets))
    raw = bytearray(packets[i])
    bit = rng.randrange(len(raw) * 8)
    raw[bit // 8] ^= 1 << (bit % 8)
    out = list(packets)
    out[i] = bytes(raw)
    return out


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_reference_points(tags: int = 140, mrs: int = 128) -> list[CheckResult]:
    out = []
    for rtt, expect in ((6800, 2.64e9), (4900, 3.66e9)):
        got = analytic_read_throughput(tags, mrs, rtt)
        err = abs(got - expect) / expect
        out.append(CheckResult(
            f"read-law tags={tags} mrs={mrs} rtt={rtt}ns",
            err <= 0.005,
            f"model {got / 1e9:.3f} GB/s vs {expect / 1e9:.2f} GB/s ({err:.2%})",
        ))
    return out


def check_grid(tol: float = 0.02, batches: int = 100) -> list[CheckResult]:
    out = []
    for tags in GRID_TAGS:
        for rtt in GRID_RTT_NS:
            for mrs in GRID_MRS:
                res = simulate_read_stream(LatencyProfile(rtt, 0, 0), tags, mrs, batches * tags * mrs)
                model = analytic_read_throughput(tags, mrs, rtt)
                err = abs(res.throughput - model) / model
                out.append(CheckResult(
                    f"des-vs-read-law tags={tags} rtt={rtt}ns mrs={mrs}",
                    err <= tol and res.max_tags_in_flight <= tags,
                    f"sim {res.throughput / 1e6:.2f} MB/s, law {model / 1e6:.2f} MB/s ({err:.3%})",
                ))
    return out


def check_codec(cases: int = 2000, flips: int = 200, mtu: int = 80, mrs: int = 128,
                seed: int = 0) -> list[CheckResult]:
    rng = random.Random(seed)
    route = codec.RouteInfo(7, 3, 0)
    bad = 0
    for _ in range(cases):
        t = random_tlp(rng, mrs)
        wire = codec.wire_bytes(codec.encapsulate(t, (1, 0), route, mtu))
        if codec.decapsulate(wire) != t:
            bad += 1
    missed = 0
    for _ in range(flips):
        t = random_tlp(rng, mrs)
        wire = codec.wire_bytes(codec.encapsulate(t, (1, 0), route, mtu))
        try:
            codec.decapsulate(flip_bit(wire, rng))
            missed += 1
        except CrcMismatch:
            pass
    return [
        CheckResult("codec round-trip", bad == 0, f"{cases - bad}/{cases} identical"),
        CheckResult("codec bit-flip detection", missed == 0, f"{flips - missed}/{flips} detected"),
    ]


def run_all(seed: int = 0) -> list[CheckResult]:
    return check_reference_points() + check_grid() + check_codec(seed=seed)
