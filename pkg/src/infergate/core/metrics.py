from __future__ import annotations

import bisect
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .clock import NS_PER_MS, NS_PER_S, seconds
from .types import Outcome, RequestRecord

LATENCY_BUCKETS_S = (0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1.0, 2.5, 5.0, 10.0)


class SlidingWindow:
    """Time-ordered (timestamp_ns, value) samples kept for `horizon` ns.

    Bounded: at most horizon / min_interval samples are retained; past that
    the oldest are evicted first.
    """

    def __init__(self, horizon: int, min_interval: int = NS_PER_MS) -> None:
        if horizon <= 0 or min_interval <= 0:
            raise ValueError("horizon and min_interval must be positive")
        self.horizon = horizon
        self.capacity = max(1, -(-horizon // min_interval))
        self._t: deque[int] = deque()
        self._v: deque[float] = deque()

    def __len__(self) -> int:
        return len(self._t)

    def append(self, t: int, value: float) -> None:
        if not self._t or t >= self._t[-1]:
            self._t.append(t)
            self._v.append(value)
        else:
            i = bisect.bisect_right(self._t, t)
            self._t.insert(i, t)
            self._v.insert(i, value)
        newest = self._t[-1]
        while self._t and (self._t[0] <= newest - self.horizon or len(self._t) > self.capacity):
            self._t.popleft()
            self._v.popleft()

    def items(self) -> list[tuple[int, float]]:
        return list(zip(self._t, self._v))

    def in_window(self, now: int, window: int) -> list[float]:
        lo = now - window
        out = []
        for t, v in zip(reversed(self._t), reversed(self._v)):
            if t <= lo:
                break
            if t <= now:
                out.append(v)
        out.reverse()
        return out


def window_average(series: SlidingWindow, now: int, window: int) -> float | None:
    """Mean of samples with timestamp in (now - window, now]; None when empty."""
    if window <= 0:
        raise ValueError("window must be positive")
    vals = series.in_window(now, window)
    if not vals:
        return None
    return sum(vals) / len(vals)


@dataclass
class Histogram:
    buckets: tuple[float, ...] = LATENCY_BUCKETS_S
    counts: list[int] = field(default_factory=list)
    total: float = 0.0
    n: int = 0

    def __post_init__(self) -> None:
        if not self.counts:
            self.counts = [0] * len(self.buckets)

    def observe(self, x: float) -> None:
        i = bisect.bisect_left(self.buckets, x)
        if i < len(self.counts):
            self.counts[i] += 1
        self.total += x
        self.n += 1

    def cumulative(self) -> list[tuple[float, int]]:
        out, acc = [], 0
        for b, c in zip(self.buckets, self.counts):
            acc += c
            out.append((b, acc))
        out.append((float("inf"), self.n))
        return out


Labels = tuple[tuple[str, str], ...]

HELP = {
    "requests_total": "Inference requests by model and outcome.",
    "ready_replicas": "Backends currently Ready.",
    "desired_replicas": "Replica count last requested by the autoscaler.",
    "gpu_utilization": "Fraction of the last sample interval the backend was busy.",
    "queue_latency_seconds": "Windowed mean queue latency per backend.",
    "inference_rate": "Completed inferences per second per model over the rate window.",
    "gateway_in_flight": "Admitted requests not yet answered.",
    "client_count": "Active load-generator clients.",
    "end_to_end_latency_seconds": "End-to-end request latency.",
}


class MetricsRegistry:
    """Counters, gauges, latency windows and a latency histogram.

    Every mutator takes the lock, so connection handlers in wall-clock mode
    can update it concurrently.
    """

    def __init__(self, window: int = seconds(30), rate_window: int = seconds(10), min_interval: int = NS_PER_MS) -> None:
        self.window = window
        self.rate_window = rate_window
        self.min_interval = min_interval
        self._lock = threading.Lock()
        self.counters: dict[str, dict[Labels, float]] = {}
        self.gauges: dict[str, dict[Labels, float]] = {}
        self.queue_latency: dict[str, SlidingWindow] = {}
        self.end_to_end = SlidingWindow(window, min_interval)
        self.completions: dict[str, SlidingWindow] = {}
        self.latency_hist = Histogram()

    @staticmethod
    def _labels(labels: dict[str, str] | None) -> Labels:
        return tuple(sorted((labels or {}).items()))

    def inc(self, name: str, labels: dict[str, str] | None = None, amount: float = 1) -> None:
        if amount < 0:
            raise ValueError("counters never decrease")
        key = self._labels(labels)
        with self._lock:
            fam = self.counters.setdefault(name, {})
            fam[key] = fam.get(key, 0) + amount

    def set_gauge(self, name: str, value: float, labels: dict[str, str] | None = None) -> None:
        with self._lock:
            self.gauges.setdefault(name, {})[self._labels(labels)] = value

    def remove_gauge(self, name: str, labels: dict[str, str] | None = None) -> None:
        with self._lock:
            self.gauges.get(name, {}).pop(self._labels(labels), None)

    def counter_value(self, name: str, labels: dict[str, str] | None = None) -> float:
        with self._lock:
            return self.counters.get(name, {}).get(self._labels(labels), 0)

    def gauge_value(self, name: str, labels: dict[str, str] | None = None) -> float | None:
        with self._lock:
            return self.gauges.get(name, {}).get(self._labels(labels))

    def queue_series(self, backend_id: str) -> SlidingWindow:
        with self._lock:
            s = self.queue_latency.get(backend_id)
            if s is None:
                s = self.queue_latency[backend_id] = SlidingWindow(self.window, self.min_interval)
            return s

    def add_queue_sample(self, backend_id: str, t: int, queue_ns: int) -> None:
        s = self.queue_series(backend_id)
        with self._lock:
            s.append(t, queue_ns)

    def inference_rate(self, model: str, now: int, window: int | None = None) -> float:
        window = window or self.rate_window
        with self._lock:
            s = self.completions.get(model)
            n = len(s.in_window(now, window)) if s is not None else 0
        return n / (window / NS_PER_S)

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "counters": {k: dict(v) for k, v in self.counters.items()},
                "gauges": {k: dict(v) for k, v in self.gauges.items()},
                "histograms": {
                    "end_to_end_latency_seconds": (
                        self.latency_hist.cumulative(),
                        self.latency_hist.total,
                        self.latency_hist.n,
                    )
                },
            }


def record_request(metrics: MetricsRegistry, record: RequestRecord) -> None:
    record.validate()
    metrics.inc("requests_total", {"model": record.model, "outcome": record.outcome.value})
    if record.outcome is not Outcome.OK:
        return
    metrics.add_queue_sample(record.backend_id, record.t_compute_end, record.queue_time)
    with metrics._lock:
        metrics.end_to_end.append(record.t_client_recv, record.total_time)
        metrics.latency_hist.observe(record.total_time / NS_PER_S)
        s = metrics.completions.get(record.model)
        if s is None:
            s = metrics.completions[record.model] = SlidingWindow(
                max(metrics.window, metrics.rate_window), metrics.min_interval
            )
        s.append(record.t_client_recv, 1.0)


def pooled_samples(series: Iterable[SlidingWindow], now: int, window: int) -> list[float]:
    out: list[float] = []
    for s in series:
        out.extend(s.in_window(now, window))
    return out
