"""Queue-latency driven horizontal autoscaler for a Fleet."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable

from .backend import BackendInstance, Fleet, State
from .core.clock import ms, seconds
from .core.errors import InvalidArgument
from .core.metrics import MetricsRegistry


@dataclass(frozen=True)
class AutoscalerConfig:
    target_queue_latency: int = ms(100)
    min_replicas: int = 1
    max_replicas: int = 10
    poll_interval: int = seconds(5)
    tolerance: float = 0.10
    downscale_stabilization: int = seconds(60)
    metric_window: int = seconds(30)

    def __post_init__(self) -> None:
        if self.min_replicas < 1:
            raise InvalidArgument("min_replicas must be >= 1")
        if self.max_replicas < self.min_replicas:
            raise InvalidArgument("max_replicas must be >= min_replicas")
        if not 0 <= self.tolerance < 1:
            raise InvalidArgument("tolerance must be in [0, 1)")
        if self.target_queue_latency <= 0:
            raise InvalidArgument("target_queue_latency must be positive")
        if self.poll_interval <= 0 or self.metric_window <= 0 or self.downscale_stabilization < 0:
            raise InvalidArgument("poll_interval and metric_window must be positive")


@dataclass(frozen=True)
class Action:
    kind: str  # "none" | "scale_up" | "scale_down"
    n: int = 0


NO_ACTION = Action("none")


@dataclass
class AutoscalerState:
    current_replicas: int
    desired_history: deque[tuple[int, int]] = field(default_factory=deque)
    last_poll: int | None = None


def collect_metric(fleet: Iterable[BackendInstance], metrics: MetricsRegistry, now: int, metric_window: int) -> float | None:
    """Pooled mean queue latency (ns) over Ready and Draining backends."""
    total, n = 0.0, 0
    for b in fleet:
        if b.state not in (State.READY, State.DRAINING):
            continue
        s = metrics.queue_latency.get(b.id)
        if s is None:
            continue
        vals = s.in_window(now, metric_window)
        total += sum(vals)
        n += len(vals)
    return total / n if n else None


def desired_replicas(
    current: int,
    metric: float,
    target: float,
    tolerance: float = 0.10,
    min_replicas: int = 1,
    max_replicas: int = 10,
) -> int:
    if target <= 0:
        raise InvalidArgument("target must be positive")
    if current < 1:
        raise InvalidArgument("current must be >= 1")
    ratio = metric / target
    if abs(ratio - 1.0) <= tolerance:
        want = current
    else:
        want = math.ceil(current * ratio)
    return max(min_replicas, min(max_replicas, want))


class Autoscaler:
    """Polls the fleet every `poll_interval` and reconciles its size.

    Upscales apply at once; downscales go to the largest desired count seen
    in the stabilization window and drain the highest-id replicas.
    """

    def __init__(self, config: AutoscalerConfig, fleet: Fleet, metrics: MetricsRegistry) -> None:
        self.config = config
        self.fleet = fleet
        self.metrics = metrics
        self.state = AutoscalerState(current_replicas=len(fleet.provisioned()))
        self.history: list[tuple[int, float | None, int, Action]] = []
        self._running = False
        self._next_poll = 0

    def start(self) -> None:
        self._running = True
        self._next_poll = self.fleet.loop.now() + self.config.poll_interval
        self.fleet.loop.call_at(self._next_poll, self._tick)

    def stop(self) -> None:
        self._running = False

    def _tick(self) -> None:
        if not self._running:
            return
        st = self.state
        if st.last_poll is not None:
            # a late previous tick must not push this one off the poll grid
            st.last_poll = min(st.last_poll, self._next_poll - self.config.poll_interval)
        self.reconcile(max(self.fleet.loop.now(), self._next_poll))
        self._next_poll += self.config.poll_interval
        self.fleet.loop.call_at(self._next_poll, self._tick)

    def reconcile(self, now: int) -> Action:
        cfg, st = self.config, self.state
        if st.last_poll is not None and now < st.last_poll + cfg.poll_interval:
            raise InvalidArgument("reconcile called before poll_interval elapsed")
        st.last_poll = now
        self.fleet.settle()
        provisioned = self.fleet.provisioned()
        current = len(provisioned)
        metric = collect_metric(self.fleet.live(), self.metrics, now, cfg.metric_window)
        if metric is None:
            desired = max(cfg.min_replicas, min(cfg.max_replicas, current))
        else:
            desired = desired_replicas(
                max(current, 1), metric, cfg.target_queue_latency, cfg.tolerance, cfg.min_replicas, cfg.max_replicas
            )
        hist = st.desired_history
        hist.append((now, desired))
        while len(hist) > 1 and hist[0][0] <= now - cfg.downscale_stabilization:
            hist.popleft()

        action = NO_ACTION
        if desired > current:
            for _ in range(desired - current):
                self.fleet.spawn()
            action = Action("scale_up", desired - current)
        elif desired < current:
            floor = max(d for _, d in hist)
            if floor < current:
                excess = current - floor
                for b in sorted(provisioned, key=lambda b: b.id, reverse=True)[:excess]:
                    self.fleet.drain(b.id)
                action = Action("scale_down", excess)
        st.current_replicas = len(self.fleet.provisioned())
        self.metrics.set_gauge("desired_replicas", desired)
        self.history.append((now, metric, desired, action))
        return action
