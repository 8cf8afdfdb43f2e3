"""Command-line front end.

Exit status: 0 success, 1 domain error (Insufficient, NotBound, ...),
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import re
import sys
from dataclasses import asdict
from typing import Optional, Sequence

from . import __version__
from .config import ConfigError, ScenarioConfig, load_config
from .des import (
    event_row,
    simulate_read_stream,
    simulate_write_stream,
)
from .errors import FabricError
from .manager import AllocationRequest, Placement, PoolManager
from .perfmodel import REPORT_COLUMNS, load_trace, predict, report_row, sweep_rtt
from .selftest import run_all

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def manifest_lines(subcommand: str, cfg: ScenarioConfig, inputs=(), outputs=()) -> list[str]:
    return [
        f"# tool: gpufabric {__version__}",
        f"# subcommand: {subcommand}",
        f"# config: {cfg.source}",
        f"# inputs: {' '.join(map(str, inputs)) or '-'}",
        f"# outputs: {' '.join(map(str, outputs)) or '-'}",
        f"# seed: {cfg.seed}",
    ]


def _csv_text(header: Sequence[str], rows: Sequence[Sequence], manifest: list[str]) -> str:
    buf = io.StringIO()
    for line in manifest:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(text: str, path: Optional[str]) -> None:
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- provision ---------------------------------------------------------------

_ALLOC = re.compile(r"alloc\s+host=(\d+)\s+count=(\d+)(?:\s+(samebox|samebox-required))?$")
_FREE = re.compile(r"free\s+host=(\d+)\s+entries=([\d,\s]+)$")


def parse_script(text: str) -> list[tuple[int, str, tuple]]:
    cmds = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _ALLOC.match(line)
        if m:
            placement = {None: Placement.ANYWHERE, "samebox": Placement.SAME_BOX,
                         "samebox-required": Placement.SAME_BOX_REQUIRED}[m.group(3)]
            cmds.append((lineno, "alloc", (int(m.group(1)), int(m.group(2)), placement)))
            continue
        m = _FREE.match(line)
        if m:
            entries = [int(x) for x in m.group(2).replace(" ", "").split(",") if x]
            cmds.append((lineno, "free", (int(m.group(1)), entries)))
            continue
        raise UsageError(f"script line {lineno}: cannot parse {line!r}")
    return cmds


def snapshot_rows(mgr: PoolManager) -> list[tuple]:
    st = mgr.snapshot()
    rows = [("total", "", st.free, st.used)]
    rows += [("box", b, f, u) for b, (f, u) in st.per_box.items()]
    rows += [("host", h, "", u) for h, u in st.per_host.items()]
    return rows


def cmd_provision(cfg: ScenarioConfig, script_path: str, out: Optional[str], snapshot: Optional[str]) -> int:
    try:
        with open(script_path) as fh:
            cmds = parse_script(fh.read())
    except OSError as exc:
        raise UsageError(f"{script_path}: {exc.strerror}") from None
    mgr = PoolManager(cfg.topology(), cfg.host_entries, cfg.reserve)
    status = EXIT_OK
    for lineno, op, args in cmds:
        try:
            if op == "alloc":
                host, count, placement = args
                if count < 1:
                    raise UsageError(f"script line {lineno}: count must be >= 1")
                mgr.provision(AllocationRequest(host, count, placement))
            else:
                mgr.reclaim(*args)
        except FabricError as exc:
            print(f"error: script line {lineno}: {type(exc).__name__}: {exc}", file=sys.stderr)
            status = EXIT_DOMAIN
            break
    outputs = [p for p in (out, snapshot) if p]
    manifest = manifest_lines("provision", cfg, [script_path], outputs)
    _emit("\n".join(manifest + mgr.event_log()) + "\n", out)
    snap = _csv_text(("scope", "id", "free", "used"), snapshot_rows(mgr), manifest)
    if snapshot:
        _emit(snap, snapshot)
    st = mgr.snapshot()
    print(f"free={st.free} used={st.used}", file=sys.stderr)
    return status


# --- bandwidth ---------------------------------------------------------------

BANDWIDTH_COLUMNS = (
    "direction", "total_bytes", "tags", "mrs_bytes", "rtt_ns",
    "throughput_Bps", "native_Bps", "percent_of_native", "max_tags_in_flight",
)


def bandwidth_row(cfg: ScenarioConfig, direction: str, total_bytes: int, trace_sink=None) -> tuple:
    profile = cfg.profile
    hook = trace_sink.append if trace_sink is not None else None
    if direction == "htod":
        if profile.rtt_dxpu == 0:
            raise UsageError("htod needs a nonzero read round trip")
        res = simulate_read_stream(profile, cfg.tags, cfg.mrs_bytes, total_bytes, cfg.native_read_bw, hook)
        native = simulate_read_stream(profile.native(), cfg.tags, cfg.mrs_bytes, total_bytes, cfg.native_read_bw)
    else:
        res = simulate_write_stream(profile, cfg.link, total_bytes, hook)
        native = simulate_write_stream(profile.native(), cfg.link, total_bytes)
    pct = 100.0 * res.throughput / native.throughput
    return (
        direction, total_bytes, cfg.tags, cfg.mrs_bytes, profile.rtt_dxpu,
        f"{res.throughput:.6g}", f"{native.throughput:.6g}", f"{pct:.2f}", res.max_tags_in_flight,
    )


def cmd_bandwidth(cfg: ScenarioConfig, direction: str, total_bytes: int, out: Optional[str],
                  trace_events: Optional[str]) -> int:
    if total_bytes < cfg.mrs_bytes:
        raise UsageError(f"--bytes must be at least mrs_bytes ({cfg.mrs_bytes})")
    sink = [] if trace_events else None
    row = bandwidth_row(cfg, direction, total_bytes, sink)
    manifest = manifest_lines("bandwidth", cfg, [], [p for p in (out, trace_events) if p])
    _emit(_csv_text(BANDWIDTH_COLUMNS, [row], manifest), out)
    if trace_events:
        _emit(_csv_text(("timestamp_ns", "action", "tag"), [event_row(e) for e in sink], manifest), trace_events)
    if out:
        print(f"{direction}: {float(row[5]) / 1e9:.3f} GB/s ({row[7]}% of native)")
    return EXIT_OK


# --- predict -------------------------------------------------------------------


def parse_sweep(spec: str) -> list[int]:
    try:
        start, stop, step = (int(x) for x in spec.split(":"))
    except ValueError:
        raise UsageError(f"--sweep expects start:stop:step in ns, got {spec!r}") from None
    if step <= 0 or stop < start:
        raise UsageError("--sweep needs step > 0 and stop >= start")
    return list(range(start, stop + 1, step))


def cmd_predict(cfg: ScenarioConfig, trace_path: str, sweep: Optional[str], out: Optional[str]) -> int:
    try:
        trace = load_trace(trace_path)
    except OSError as exc:
        raise UsageError(f"{trace_path}: {exc.strerror}") from None
    manifest = manifest_lines("predict", cfg, [trace_path], [out] if out else [])
    if sweep:
        rtts = parse_sweep(sweep)
        if rtts[0] < cfg.rtt_original_ns:
            raise UsageError(f"sweep starts below native RTT {cfg.rtt_original_ns} ns")
        points = sweep_rtt(trace, rtts, cfg.rtt_original_ns, cfg.tags, cfg.mrs_bytes, cfg.native_read_bw)
        _emit(_csv_text(("rtt_ns", "performance"), [(r, f"{p:.6f}") for r, p in points], manifest), out)
    else:
        rep = predict(trace, cfg.profile, cfg.tags, cfg.mrs_bytes, cfg.native_read_bw)
        row = report_row(rep)
        _emit(_csv_text(REPORT_COLUMNS, [[row[c] for c in REPORT_COLUMNS]], manifest), out)
    return EXIT_OK


# --- selftest ------------------------------------------------------------------


def cmd_selftest(cfg: ScenarioConfig) -> int:
    results = run_all(seed=cfg.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<40} {r.detail}")
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_DOMAIN


# --- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario config file (defaults to the reference scenario)")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--out", help="output path (default: stdout)")

    p = argparse.ArgumentParser(prog="gpufabric", description="Model a pooled, fabric-attached GPU deployment.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("provision", parents=[common], help="run an alloc/free script against the pool")
    sp.add_argument("script")
    sp.add_argument("--snapshot", help="write the final pool snapshot CSV here")

    sb = sub.add_parser("bandwidth", parents=[common], help="simulate a bandwidthTest-style stream")
    sb.add_argument("--direction", choices=("htod", "dtoh"), default="htod")
    sb.add_argument("--bytes", type=int, default=100 << 20, dest="total_bytes")
    sb.add_argument("--trace-events", help="dump every simulator event to this CSV")

    pp = sub.add_parser("predict", parents=[common], help="predict slowdown for a workload trace")
    pp.add_argument("trace")
    pp.add_argument("--sweep", help="start:stop:step RTT sweep in ns")

    sub.add_parser("selftest", parents=[common], help="run the built-in cross-checks")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ScenarioConfig()
        if args.seed is not None:
            cfg = ScenarioConfig(**{**asdict(cfg), "seed": args.seed})
        if args.command == "provision":
            return cmd_provision(cfg, args.script, args.out, args.snapshot)
        if args.command == "bandwidth":
            return cmd_bandwidth(cfg, args.direction, args.total_bytes, args.out, args.trace_events)
        if args.command == "predict":
            return cmd_predict(cfg, args.trace, args.sweep, args.out)
        return cmd_selftest(cfg)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FabricError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
