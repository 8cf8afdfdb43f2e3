"""Remote-PCIe GPU pool: TLP codec, mapping tables, pool manager, fabric
simulator and trace-driven performance model."""

__version__ = "0.1.0"

from .codec import RouteInfo, decapsulate, encapsulate, route_box_to_host, route_host_to_box
from .des import (
    LatencyProfile,
    analytic_read_throughput,
    simulate_multi_gpu,
    simulate_read_stream,
    simulate_write_stream,
)
from .manager import AllocationRequest, Placement, PoolManager, Topology
from .perfmodel import WorkloadEvent, WorkloadTrace, predict, sweep_rtt, synthesize_trace
from .tables import BoxTable, HostTable
from .tlp import LinkParams, TagPool, Tlp, TlpKind, classify
