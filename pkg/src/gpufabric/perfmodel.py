"""Trace-driven prediction of workload slowdown under remote PCIe.

Each host<->GPU interaction in a native trace is charged an added cost
derived from the latency profile, and events are assumed to run back to
back (no overlap between streams).
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .des import LatencyProfile, effective_read_throughput
from .errors import EmptyTrace, InvalidSpec, TraceParseError
from .tlp import DEFAULT_MRS, DEFAULT_TAGS

SHORT_KERNEL_NS = 10_000


class EventKind(enum.Enum):
    HTOD = "htod"
    DTOH = "dtoh"
    KERNEL = "kernel"
    MEMSET = "memset"


MEMCPY_KINDS = (EventKind.HTOD, EventKind.DTOH)


@dataclass(frozen=True)
class WorkloadEvent:
    kind: EventKind
    bytes: int
    native_duration: float  # ns

    def __post_init__(self):
        if self.native_duration <= 0:
            raise ValueError("native_duration must be positive")
        if self.kind in MEMCPY_KINDS and self.bytes <= 0:
            raise ValueError(f"{self.kind.value} needs bytes > 0")
        if self.bytes < 0:
            raise ValueError("bytes must be >= 0")


@dataclass
class WorkloadTrace:
    events: list[WorkloadEvent]
    label: str = ""

    def __len__(self):
        return len(self.events)

    def __add__(self, other: "WorkloadTrace") -> "WorkloadTrace":
        return WorkloadTrace(self.events + other.events, self.label)

    @property
    def native_total(self) -> float:
        return math.fsum(e.native_duration for e in self.events)

    def kernel_durations(self) -> list[float]:
        return [e.native_duration for e in self.events if e.kind is EventKind.KERNEL]


@dataclass(frozen=True)
class PredictionReport:
    native_total: float
    dxpu_total: float
    overhead: dict[EventKind, float] = field(default_factory=dict)

    @property
    def performance(self) -> float:
        return self.native_total / self.dxpu_total


def event_overhead(
    event: WorkloadEvent,
    profile: LatencyProfile,
    tags: int = DEFAULT_TAGS,
    mrs: int = DEFAULT_MRS,
    native_read_bw: Optional[float] = None,
) -> float:
    """Time (ns) the remote path adds to one event.

    Kernels and memsets pay one extra round trip of added latency, device to
    host copies half of it.  Host to device copies small enough to fit in
    the outstanding-tag window pay the added latency once; larger ones run
    at the tag-limited read rate, and are never charged less than the small
    case.
    """
    delta = profile.rtt_delta
    if delta == 0:
        return 0.0
    kind = event.kind
    if kind in (EventKind.KERNEL, EventKind.MEMSET):
        return float(delta)
    if kind is EventKind.DTOH:
        return 0.5 * delta
    if event.bytes <= tags * mrs:
        return float(delta)
    rate = effective_read_throughput(tags, mrs, profile.rtt_dxpu, native_read_bw)
    slow = event.bytes / rate * 1e9
    return max(slow - event.native_duration, float(delta))


def predict(
    trace: WorkloadTrace,
    profile: LatencyProfile,
    tags: int = DEFAULT_TAGS,
    mrs: int = DEFAULT_MRS,
    native_read_bw: Optional[float] = None,
) -> PredictionReport:
    if not trace.events:
        raise EmptyTrace("trace has no events")
    added = {k: [] for k in EventKind}
    for ev in trace.events:
        added[ev.kind].append(event_overhead(ev, profile, tags, mrs, native_read_bw))
    overhead = {k: math.fsum(v) for k, v in added.items()}
    native = trace.native_total
    return PredictionReport(native, native + math.fsum(overhead.values()), overhead)


def sweep_rtt(
    trace: WorkloadTrace,
    rtt_values: Sequence[int],
    rtt_original: int,
    tags: int = DEFAULT_TAGS,
    mrs: int = DEFAULT_MRS,
    native_read_bw: Optional[float] = None,
) -> list[tuple[int, float]]:
    """Predicted performance at each RTT (ns), ascending."""
    if list(rtt_values) != sorted(rtt_values):
        raise ValueError("rtt_values must be sorted ascending")
    base = LatencyProfile(rtt_original, 0, 0)
    return [
        (rtt, predict(trace, base.with_rtt(rtt), tags, mrs, native_read_bw).performance)
        for rtt in rtt_values
    ]


def calibrated_kernel_mean(target_perf: float, rtt: float, rtt_original: float) -> float:
    """Kernel duration c with c / (c + delta) == target_perf at ``rtt``."""
    if not 0 < target_perf < 1:
        raise ValueError("target_perf must be in (0, 1)")
    delta = rtt - rtt_original
    return target_perf * delta / (1 - target_perf)


# --- synthetic traces -----------------------------------------------------


@dataclass(frozen=True)
class TraceSpec:
    """Recipe for :func:`synthesize_trace`.

    With ``point_ns`` set every kernel lasts exactly that long.  Otherwise
    kernels are a mix of short ones (uniform in ``[short_min_ns,
    SHORT_KERNEL_NS]``) and long ones (lognormal tail above the threshold)
    scaled so the kernel mean is ``mean_ns``.  Copies bracket the kernels:
    host-to-device first, device-to-host last.
    """

    kernel_count: int
    mean_ns: float = 0.0
    short_fraction: float = 0.0
    point_ns: Optional[float] = None
    short_min_ns: float = 1_000
    tail_sigma: float = 1.0
    htod_count: int = 0
    htod_bytes: int = 0
    dtoh_count: int = 0
    dtoh_bytes: int = 0
    native_read_bw: float = 11.2e9
    native_write_bw: float = 12.5e9
    seed: int = 0
    label: str = ""


def _memcpy_ns(nbytes: int, bw: float) -> int:
    return max(1, round(nbytes / bw * 1e9))


def _kernel_durations(spec: TraceSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.kernel_count
    if spec.point_ns is not None:
        if spec.point_ns <= 0:
            raise InvalidSpec("point_ns must be positive")
        return np.full(n, int(round(spec.point_ns)), dtype=np.int64)
    if not 0 <= spec.short_fraction < 1:
        raise InvalidSpec("short_fraction must be in [0, 1)")
    if not 0 < spec.short_min_ns <= SHORT_KERNEL_NS:
        raise InvalidSpec("short_min_ns must be in (0, 10 us]")
    n_short = int(round(spec.short_fraction * n))
    n_long = n - n_short
    short = np.floor(rng.uniform(spec.short_min_ns, SHORT_KERNEL_NS, n_short)).astype(np.int64)
    target_total = int(round(spec.mean_ns * n))
    floor_long = SHORT_KERNEL_NS + 1
    excess_total = target_total - int(short.sum()) - n_long * floor_long
    if n_long == 0 or excess_total <= 0:
        raise InvalidSpec(
            f"mean {spec.mean_ns} ns is unreachable with {n_short} short kernels out of {n}"
        )
    raw = rng.lognormal(0.0, spec.tail_sigma, n_long)
    excess = np.floor(raw / raw.sum() * excess_total).astype(np.int64)
    # hand the rounding remainder to the largest kernel so the mean is exact
    excess[np.argmax(excess)] += excess_total - int(excess.sum())
    durations = np.concatenate([short, floor_long + excess])
    return rng.permutation(durations)


def synthesize_trace(spec: TraceSpec) -> WorkloadTrace:
    if spec.kernel_count < 1:
        raise InvalidSpec("kernel_count must be >= 1")
    for name in ("htod", "dtoh"):
        if getattr(spec, f"{name}_count") < 0:
            raise InvalidSpec(f"{name}_count must be >= 0")
        if getattr(spec, f"{name}_count") and getattr(spec, f"{name}_bytes") <= 0:
            raise InvalidSpec(f"{name}_bytes must be positive")
    rng = np.random.default_rng(spec.seed)
    kernels = _kernel_durations(spec, rng)
    events = [
        WorkloadEvent(EventKind.HTOD, spec.htod_bytes, _memcpy_ns(spec.htod_bytes, spec.native_read_bw))
        for _ in range(spec.htod_count)
    ]
    events += [WorkloadEvent(EventKind.KERNEL, 0, int(d)) for d in kernels]
    events += [
        WorkloadEvent(EventKind.DTOH, spec.dtoh_bytes, _memcpy_ns(spec.dtoh_bytes, spec.native_write_bw))
        for _ in range(spec.dtoh_count)
    ]
    return WorkloadTrace(events, spec.label)


# --- CSV formats ------------------------------------------------------------

TRACE_COLUMNS = ("kind", "bytes", "native_duration_ns")
REPORT_COLUMNS = (
    "native_total_ns", "dxpu_total_ns", "performance",
    "kernel_overhead_ns", "htod_overhead_ns", "dtoh_overhead_ns",
)


def parse_trace(lines: Iterable[str], label: str = "") -> WorkloadTrace:
    """Read ``kind,bytes,native_duration_ns`` rows.

    Blank lines, ``#`` comments and a header row are skipped.
    """
    events = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if tuple(parts) == TRACE_COLUMNS:
            continue
        if len(parts) != 3:
            raise TraceParseError(lineno, f"expected 3 fields, got {len(parts)}")
        try:
            kind = EventKind(parts[0].lower())
        except ValueError:
            raise TraceParseError(lineno, f"unknown event kind {parts[0]!r}") from None
        try:
            nbytes = int(parts[1])
            dur = int(parts[2])
        except ValueError:
            raise TraceParseError(lineno, "bytes and native_duration_ns must be integers") from None
        try:
            events.append(WorkloadEvent(kind, nbytes, dur))
        except ValueError as exc:
            raise TraceParseError(lineno, str(exc)) from None
    if not events:
        raise EmptyTrace("trace has no events")
    return WorkloadTrace(events, label)


def load_trace(path) -> WorkloadTrace:
    with open(path) as fh:
        return parse_trace(fh, label=str(path))


def format_trace(trace: WorkloadTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for e in trace.events:
        w.writerow((e.kind.value, e.bytes, int(round(e.native_duration))))
    return buf.getvalue()


def report_row(report: PredictionReport) -> dict:
    ov = report.overhead
    return {
        "native_total_ns": f"{report.native_total:.1f}",
        "dxpu_total_ns": f"{report.dxpu_total:.1f}",
        "performance": f"{report.performance:.6f}",
        "kernel_overhead_ns": f"{ov.get(EventKind.KERNEL, 0) + ov.get(EventKind.MEMSET, 0):.1f}",
        "htod_overhead_ns": f"{ov.get(EventKind.HTOD, 0):.1f}",
        "dtoh_overhead_ns": f"{ov.get(EventKind.DTOH, 0):.1f}",
    }
