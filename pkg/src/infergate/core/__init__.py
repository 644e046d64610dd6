from .clock import NS_PER_MS, NS_PER_S, VirtualLoop, WallClockLoop, ms, seconds, to_seconds
from .errors import InvalidArgument, InvalidState, InvariantViolation, NoBackend
from .metrics import MetricsRegistry, SlidingWindow, record_request, window_average
from .types import InferenceRequest, ModelProfile, Outcome, RequestRecord, sample_service_time

__all__ = [
    "NS_PER_MS",
    "NS_PER_S",
    "InferenceRequest",
    "InvalidArgument",
    "InvalidState",
    "InvariantViolation",
    "MetricsRegistry",
    "ModelProfile",
    "NoBackend",
    "Outcome",
    "RequestRecord",
    "SlidingWindow",
    "VirtualLoop",
    "WallClockLoop",
    "ms",
    "record_request",
    "sample_service_time",
    "seconds",
    "to_seconds",
    "window_average",
]
