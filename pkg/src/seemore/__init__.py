"""Hybrid crash/Byzantine state-machine replication with three agreement modes.

Private-cloud replicas may crash; public-cloud replicas may be Byzantine.
The Lion, Dog and Peacock modes trade the amount of work done by trusted
private replicas against message complexity.
"""

from .config import (
    ClusterConfig,
    ConfigError,
    Infeasible,
    InvalidInput,
    Mode,
    SizingInput,
    proxy_set,
    quorum_size,
    required_network_size,
    required_public_rental,
)
from .metrics import RunMetrics, emit_csv, per_request_message_count, phase_latency
from .simnet import ScenarioConfig, ScenarioInvalid, run

__all__ = [
    "ClusterConfig",
    "ConfigError",
    "Infeasible",
    "InvalidInput",
    "Mode",
    "RunMetrics",
    "ScenarioConfig",
    "ScenarioInvalid",
    "SizingInput",
    "emit_csv",
    "per_request_message_count",
    "phase_latency",
    "proxy_set",
    "quorum_size",
    "required_network_size",
    "required_public_rental",
    "run",
]
