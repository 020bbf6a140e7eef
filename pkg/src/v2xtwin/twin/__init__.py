"""The mobility twin: message plane, prediction loop and latency accounting."""

from .clock import MonotonicClock, VirtualClock
from .engine import EngineError, EngineServer, LocalEngine, MockEngine, UdpEngine
from .latency import LatencyBreakdown, component_sum, deadline_met, latency_report, write_latency_report
from .messages import EntityReport, IngestStats, LinkMeasurement, MessageError, ingest_report
from .orchestrator import (
    DELIVERED,
    FAILED,
    PENDING,
    STALE,
    ConfigError,
    MobilityTwin,
    PredictionEnvelope,
    StageDelays,
    TwinConfig,
    deadline_check,
)
from .service import TwinService

__all__ = [
    "ConfigError", "DELIVERED", "EngineError", "EngineServer", "EntityReport", "FAILED",
    "IngestStats", "LatencyBreakdown", "LinkMeasurement", "LocalEngine", "MessageError",
    "MobilityTwin", "MockEngine", "MonotonicClock", "PENDING", "PredictionEnvelope", "STALE",
    "StageDelays", "TwinConfig", "TwinService", "UdpEngine", "VirtualClock", "component_sum",
    "deadline_check", "deadline_met", "ingest_report", "latency_report", "write_latency_report",
]
