"""Discrete-event model of the host <-> proxy <-> fabric <-> proxy <-> GPU path.

Time is integer nanoseconds; simultaneous events run in insertion order.
Read streams are modelled one event pair per read request, writes one event
pair per posted write.
"""

from __future__ import annotations

import csv
import enum
import heapq
import math
import os
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

from .tlp import DEFAULT_MRS, DEFAULT_TAGS, LinkParams, TagPool

# Table of measured per-hop latencies for the reference deployment (ns).
REFERENCE_RTT_ORIGINAL = 1200
REFERENCE_NET_TRANSMISSION = 1900
REFERENCE_PACKET_CONVERSION = 3700

NATIVE_READ_BW = 11.2e9
NATIVE_WRITE_BW = 12.5e9
PROXY_CAPACITY_HTOD = 8.4e9
PROXY_CAPACITY_DTOH = 3.6e9


@dataclass(frozen=True)
class LatencyProfile:
    """Round-trip time of a read, split into native and added parts (ns)."""

    rtt_original: int = REFERENCE_RTT_ORIGINAL
    net_transmission: int = REFERENCE_NET_TRANSMISSION
    packet_conversion: int = REFERENCE_PACKET_CONVERSION

    def __post_init__(self):
        for name in ("rtt_original", "net_transmission", "packet_conversion"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def rtt_dxpu(self) -> int:
        return self.rtt_original + self.net_transmission + self.packet_conversion

    @property
    def rtt_delta(self) -> int:
        return self.rtt_dxpu - self.rtt_original

    def native(self) -> "LatencyProfile":
        return LatencyProfile(self.rtt_original, 0, 0)

    def with_rtt(self, rtt: int) -> "LatencyProfile":
        """Same native RTT, added latency lumped into transmission."""
        if rtt < self.rtt_original:
            raise ValueError(f"rtt {rtt} ns is below the native {self.rtt_original} ns")
        return LatencyProfile(self.rtt_original, rtt - self.rtt_original, 0)


class Action(enum.Enum):
    ISSUE_READ = "IssueRead"
    COMPLETION = "Completion"
    ISSUE_WRITE = "IssueWrite"
    DELIVERED = "Delivered"


class SimEvent(NamedTuple):
    timestamp: int
    sequence: int
    action: Action
    tag: Optional[int] = None
    size: int = 0


class EventQueue:
    """Min-heap of events ordered by (timestamp, insertion sequence)."""

    def __init__(self):
        self._heap: list[SimEvent] = []
        self._seq = 0
        self.now = 0

    def push(self, timestamp: int, action: Action, tag=None, size=0) -> None:
        if timestamp < self.now:
            raise ValueError("cannot schedule into the past")
        heapq.heappush(self._heap, SimEvent(timestamp, self._seq, action, tag, size))
        self._seq += 1

    def pop(self) -> SimEvent:
        ev = heapq.heappop(self._heap)
        self.now = ev.timestamp
        return ev

    def __bool__(self):
        return bool(self._heap)


@dataclass(frozen=True)
class StreamResult:
    bytes_moved: int
    elapsed_ns: int
    max_tags_in_flight: int = 0
    first_byte_ns: int = 0

    @property
    def throughput(self) -> float:
        """Bytes per second."""
        return self.bytes_moved / (self.elapsed_ns * 1e-9)


TraceHook = Optional[Callable[[SimEvent], None]]


def analytic_read_throughput(tags: int, mrs: int, rtt_ns: float) -> float:
    """Tag-limited read throughput in bytes/s: tags * mrs / rtt."""
    if tags <= 0 or mrs <= 0 or rtt_ns <= 0:
        raise ValueError("tags, mrs and rtt must all be positive")
    return tags * mrs / (rtt_ns * 1e-9)


def effective_read_throughput(tags: int, mrs: int, rtt_ns: float, ceiling: Optional[float]) -> float:
    bw = analytic_read_throughput(tags, mrs, rtt_ns)
    return bw if ceiling is None else min(bw, ceiling)


def simulate_read_stream(
    profile: LatencyProfile,
    tags: int = DEFAULT_TAGS,
    mrs: int = DEFAULT_MRS,
    total_bytes: int = 100 << 20,
    link_rate: Optional[float] = None,
    on_event: TraceHook = None,
) -> StreamResult:
    """Stream ``total_bytes`` of DMA reads through a pool of ``tags``.

    A new read is issued the moment a tag comes free.  Each read completes
    one RTT after issue; with ``link_rate`` (bytes/s) set, completion data
    also queues on a shared return link, so reads cannot beat that rate.
    """
    if total_bytes < mrs:
        raise ValueError("total_bytes must be at least one MRS")
    rtt = profile.rtt_dxpu
    if rtt <= 0:
        raise ValueError("read RTT must be positive")
    pool = TagPool(tags)
    q = EventQueue()
    remaining = total_bytes
    done = 0
    max_in_flight = 0
    link_free = 0.0  # ns; fractional so short serialization times don't round away
    first_byte = None

    q.push(0, Action.ISSUE_READ)
    while q:
        ev = q.pop()
        if on_event:
            on_event(ev)
        if ev.action is Action.ISSUE_READ:
            while remaining > 0:
                tag = pool.acquire()
                if tag is None:
                    break
                size = min(mrs, remaining)
                remaining -= size
                arrive = float(q.now + rtt)
                if link_rate is not None:
                    arrive = max(arrive, link_free + size * 1e9 / link_rate)
                    link_free = arrive
                q.push(math.ceil(arrive), Action.COMPLETION, tag, size)
            max_in_flight = max(max_in_flight, len(pool))
        else:
            pool.release(ev.tag)
            done += ev.size
            if first_byte is None:
                first_byte = q.now
            if remaining > 0:
                q.push(q.now, Action.ISSUE_READ)
    assert done == total_bytes
    return StreamResult(total_bytes, q.now, max_in_flight, first_byte or 0)


def simulate_write_stream(
    profile: LatencyProfile,
    link: LinkParams = LinkParams(),
    total_bytes: int = 100 << 20,
    on_event: TraceHook = None,
) -> StreamResult:
    """Stream posted writes; only link rate and one-way latency matter.

    Writes leave back to back at ``link.rate`` and land half an RTT later.
    No tags are consumed.
    """
    if total_bytes <= 0:
        raise ValueError("total_bytes must be positive")
    one_way = profile.rtt_dxpu / 2
    chunk = link.mps
    q = EventQueue()
    sent = 0
    done = 0
    first_byte = None
    q.push(0, Action.ISSUE_WRITE)
    while q:
        ev = q.pop()
        if on_event:
            on_event(ev)
        if ev.action is Action.ISSUE_WRITE:
            size = min(chunk, total_bytes - sent)
            sent += size
            wire_done = sent * 1e9 / link.rate
            q.push(math.ceil(wire_done + one_way), Action.DELIVERED, None, size)
            if sent < total_bytes:
                q.push(math.ceil(wire_done), Action.ISSUE_WRITE)
        else:
            done += ev.size
            if first_byte is None:
                first_byte = q.now
    assert done == total_bytes
    return StreamResult(total_bytes, q.now, 0, first_byte or 0)


def simulate_multi_gpu(per_gpu_bw: float, proxy_capacity: float, gpu_count: int) -> float:
    """Aggregate host<->GPU bandwidth through one proxy, in bytes/s.

    GPUs add up linearly until the proxy's packet-processing capacity caps
    the total.
    """
    if gpu_count < 1:
        raise ValueError("gpu_count must be >= 1")
    return min(gpu_count * per_gpu_bw, proxy_capacity)


def event_row(ev: SimEvent) -> tuple:
    return (ev.timestamp, ev.action.value, "" if ev.tag is None else ev.tag)


def append_result_csv(path: str | os.PathLike, config: dict, result: StreamResult) -> None:
    """Append one run record; the header is written when the file is new."""
    row = dict(config)
    row.update(
        bytes_moved=result.bytes_moved,
        elapsed_ns=result.elapsed_ns,
        throughput=f"{result.throughput:.6g}",
        max_tags_in_flight=result.max_tags_in_flight,
    )
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        if new:
            w.writeheader()
        w.writerow(row)
