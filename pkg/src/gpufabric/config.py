"""Scenario configuration: a sectioned ``key = value`` file.

Grammar (INI style, ``#`` or ``;`` comments)::

    [topology]  hosts, boxes, slots_per_box, invalid, host_entries, reserve
    [latency]   rtt_original_ns, net_transmission_ns, packet_conversion_ns
    [pcie]      tags, mrs_bytes, lane_rate, lanes, mps_bytes, native_read_bw
    [proxy]     capacity_htod, capacity_dtoh, mtu
    [run]       seed

Every key is optional; omitted keys take the reference defaults below.
``invalid`` lists empty slots as ``box:slot`` pairs (box index, not node ID).
Rates are bytes per second.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field

from . import codec, des
from .manager import Topology
from .tlp import LinkParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioConfig:
    hosts: int = 32
    boxes: int = 64
    slots_per_box: int = 8
    invalid: tuple[tuple[int, int], ...] = ()
    host_entries: int = 16
    reserve: int = 0
    rtt_original_ns: int = des.REFERENCE_RTT_ORIGINAL
    net_transmission_ns: int = des.REFERENCE_NET_TRANSMISSION
    packet_conversion_ns: int = des.REFERENCE_PACKET_CONVERSION
    tags: int = 140
    mrs_bytes: int = 128
    lane_rate: float = 781.25e6
    lanes: int = 16
    mps_bytes: int = 256
    native_read_bw: float = des.NATIVE_READ_BW
    capacity_htod: float = des.PROXY_CAPACITY_HTOD
    capacity_dtoh: float = des.PROXY_CAPACITY_DTOH
    mtu: int = codec.DEFAULT_MTU
    seed: int = 0
    source: str = field(default="<defaults>", compare=False)

    @property
    def profile(self) -> des.LatencyProfile:
        return des.LatencyProfile(self.rtt_original_ns, self.net_transmission_ns, self.packet_conversion_ns)

    @property
    def link(self) -> LinkParams:
        return LinkParams(self.mrs_bytes, self.lane_rate, self.lanes, self.mps_bytes)

    def topology(self) -> Topology:
        return Topology.uniform(self.hosts, self.boxes, self.slots_per_box, self.invalid)


_SCHEMA = {
    "topology": {
        "hosts": int, "boxes": int, "slots_per_box": int, "invalid": "pairs",
        "host_entries": int, "reserve": int,
    },
    "latency": {"rtt_original_ns": int, "net_transmission_ns": int, "packet_conversion_ns": int},
    "pcie": {
        "tags": int, "mrs_bytes": int, "lane_rate": float, "lanes": int,
        "mps_bytes": int, "native_read_bw": float,
    },
    "proxy": {"capacity_htod": float, "capacity_dtoh": float, "mtu": int},
    "run": {"seed": int},
}

_POSITIVE = {
    "hosts", "boxes", "slots_per_box", "host_entries", "tags", "mrs_bytes",
    "lane_rate", "lanes", "mps_bytes", "native_read_bw", "capacity_htod",
    "capacity_dtoh", "mtu",
}
_NON_NEGATIVE = {"reserve", "rtt_original_ns", "net_transmission_ns", "packet_conversion_ns", "seed"}


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    where = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            continue
        m = re.match(r"([^=:#;\s][^=:]*?)\s*[=:]", s)
        if m and section:
            where[(section, m.group(1).strip().lower())] = lineno
    return where


def _convert(kind, raw: str):
    if kind is int:
        return int(raw, 0)
    if kind is float:
        return float(raw)
    pairs = []
    for item in filter(None, (p.strip() for p in raw.split(","))):
        b, _, s = item.partition(":")
        pairs.append((int(b), int(s)))
    return tuple(pairs)


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    lines = _key_lines(text)
    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{source}: unknown section [{section}]")
        for key, raw in cp.items(section):
            loc = f"{source}:{lines.get((section, key), '?')}: {section}.{key}"
            kind = _SCHEMA[section].get(key)
            if kind is None:
                raise ConfigError(f"{loc}: unknown key")
            try:
                v = _convert(kind, raw)
            except ValueError:
                raise ConfigError(f"{loc}: cannot parse {raw!r}") from None
            if key in _POSITIVE and v <= 0:
                raise ConfigError(f"{loc}: must be > 0")
            if key in _NON_NEGATIVE and v < 0:
                raise ConfigError(f"{loc}: must be >= 0")
            values[key] = v
    cfg = ScenarioConfig(source=source, **values)
    _cross_check(cfg)
    return cfg


def _cross_check(cfg: ScenarioConfig) -> None:
    if cfg.lanes not in (1, 2, 4, 8, 16):
        raise ConfigError(f"{cfg.source}: pcie.lanes must be 1, 2, 4, 8 or 16")
    for b, s in cfg.invalid:
        if not (0 <= b < cfg.boxes and 0 <= s < cfg.slots_per_box):
            raise ConfigError(f"{cfg.source}: topology.invalid names missing slot {b}:{s}")
    if cfg.host_entries > 255:
        raise ConfigError(f"{cfg.source}: topology.host_entries must be <= 255")
    if cfg.slots_per_box > 256:
        raise ConfigError(f"{cfg.source}: topology.slots_per_box must be <= 256")
    if cfg.hosts + cfg.boxes > 0xFFFF:
        raise ConfigError(f"{cfg.source}: more nodes than 16-bit node IDs allow")
    if cfg.mtu - codec.DATA_OVERHEAD < codec.MIN_DATA_CHUNK:
        raise ConfigError(f"{cfg.source}: proxy.mtu too small")
    if cfg.mrs_bytes > 4096 or cfg.mps_bytes > 4096:
        raise ConfigError(f"{cfg.source}: pcie.mrs_bytes/mps_bytes must be <= 4096")


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


DEFAULT_CONFIG_TEXT = """\
# Reference scenario: 64 boxes x 8 GPUs = 512 slots, 32 hosts.
[topology]
hosts = 32
boxes = 64
slots_per_box = 8
host_entries = 16
reserve = 0

[latency]
rtt_original_ns = 1200
net_transmission_ns = 1900
packet_conversion_ns = 3700

[pcie]
tags = 140
mrs_bytes = 128
lane_rate = 781.25e6
lanes = 16
mps_bytes = 256
native_read_bw = 11.2e9

[proxy]
capacity_htod = 8.4e9
capacity_dtoh = 3.6e9
mtu = 256

[run]
seed = 0
"""
