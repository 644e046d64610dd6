"""Wires clock, fleet, gateway, autoscaler and clients into one run."""
from __future__ import annotations

import asyncio
import logging
import statistics
from dataclasses import dataclass, field

import numpy as np

from ..autoscaler import Autoscaler, collect_metric
from ..backend import Fleet, State
from ..core.clock import NS_PER_S, VirtualLoop, WallClockLoop, seconds
from ..core.errors import InvalidArgument
from ..core.metrics import MetricsRegistry, record_request
from ..core.types import Outcome, RequestRecord
from ..gateway import Gateway
from ..loadgen import ClosedLoopClients, VirtualTransport
from .config import ExperimentConfig

log = logging.getLogger(__name__)

TIMESERIES_COLUMNS = (
    "time_s",
    "client_count",
    "in_flight",
    "ready_replicas",
    "starting_replicas",
    "draining_replicas",
    "provisioned_replicas",
    "desired_replicas",
    "avg_queue_latency_s",
    "end_to_end_p50_s",
    "throughput_rps",
    "fleet_utilization",
    "busy_s",
    "replica_s",
    "completed_total",
    "rejected_total",
)
BACKEND_COLUMNS = ("time_s", "backend_id", "state", "queue_length", "utilization")


@dataclass
class RunResult:
    config: ExperimentConfig
    timeseries: list[dict]
    backend_rows: list[dict]
    summary: dict
    records: list[RequestRecord]
    scaling_history: list = field(default_factory=list)
    gateway_events: list[tuple[int, int]] = field(default_factory=list)
    metrics: MetricsRegistry | None = None


class Simulation:
    """All moving parts of one experiment, driven by `loop`.

    The client transport is attached by the caller: in-process for virtual
    runs, TCP through the gateway server for wall-clock runs.
    """

    def __init__(self, config: ExperimentConfig, loop: VirtualLoop | WallClockLoop, log_events: bool = False) -> None:
        self.config = config
        self.loop = loop
        self.rng = np.random.default_rng(config.seed)
        window = config.autoscaler.metric_window if config.autoscaler else seconds(30)
        self.metrics = MetricsRegistry(window=window)
        self.fleet = Fleet(
            loop,
            config.profiles,
            on_complete=lambda rec: None,
            rng=self.rng,
            q_max=config.backend.q_max,
            startup_delay=config.backend.startup_delay,
        )
        for _ in range(config.initial_replicas):
            self.fleet.spawn(startup_delay=0)
        self.gateway = Gateway(config.gateway, self.fleet, self._external_metric, log_events=log_events)
        self.autoscaler = Autoscaler(config.autoscaler, self.fleet, self.metrics) if config.autoscaler else None
        self.clients: ClosedLoopClients | None = None
        self.timeseries: list[dict] = []
        self.backend_rows: list[dict] = []
        self._recent_latency: list[int] = []
        self._completed = 0
        self._rejected = 0
        self._last_sample = 0
        self._t_start = 0
        self._next_sample = 0
        self._stopped = False

    def _external_metric(self) -> float | None:
        lim = self.config.gateway.external_metric_limit
        if lim is None:
            return None
        window = self.config.autoscaler.metric_window if self.config.autoscaler else self.metrics.window
        v = collect_metric(self.fleet.live(), self.metrics, self.loop.now(), window)
        return None if v is None else v / NS_PER_S

    def on_record(self, rec: RequestRecord) -> None:
        record_request(self.metrics, rec)
        if rec.outcome is Outcome.OK:
            self._completed += 1
            self._recent_latency.append(rec.total_time)
        else:
            self._rejected += 1

    def attach_clients(self, send) -> ClosedLoopClients:
        self.clients = ClosedLoopClients(self.loop, self.config.schedule, send, self.on_record)
        return self.clients

    def start(self) -> None:
        self._t_start = self.loop.now()
        self.clients.start()
        if self.autoscaler is not None:
            self.autoscaler.start()
        self._next_sample = self._t_start + self.config.sample_interval
        self.loop.call_at(self._next_sample, self._sample)

    def stop(self) -> None:
        self._stopped = True
        if self.autoscaler is not None:
            self.autoscaler.stop()

    def _sample(self) -> None:
        if self._stopped:
            return
        self.sample()
        self._next_sample += self.config.sample_interval
        self.loop.call_at(self._next_sample, self._sample)

    def sample(self) -> None:
        now = self.loop.now()
        t0, self._last_sample = self._last_sample, now
        self.fleet.settle()
        instances = self.fleet.ordered()
        counts = {s: 0 for s in State}
        busy = alive = 0
        for b in instances:
            counts[b.state] += 1
            a = b.alive_time(t0, now)
            if a <= 0:
                continue
            bt = b.busy_time(max(t0, b.spawned_at), now)
            busy += bt
            alive += a
            util = bt / a
            self.backend_rows.append(
                {
                    "time_s": now / NS_PER_S,
                    "backend_id": b.id,
                    "state": b.state.value,
                    "queue_length": b.queue_length,
                    "utilization": util,
                }
            )
            if b.state is State.STOPPED:
                self.metrics.remove_gauge("gpu_utilization", {"backend": b.id})
            else:
                self.metrics.set_gauge("gpu_utilization", util, {"backend": b.id})
        window = self.config.autoscaler.metric_window if self.config.autoscaler else self.metrics.window
        q = collect_metric(instances, self.metrics, now, window)
        lat = self._recent_latency
        p50 = statistics.median(lat) / NS_PER_S if lat else None
        throughput = len(lat) / ((now - t0) / NS_PER_S) if now > t0 else 0.0
        self._recent_latency = []
        provisioned = counts[State.READY] + counts[State.STARTING]
        desired = self.metrics.gauge_value("desired_replicas") if self.autoscaler else self.config.static_replicas
        clients = self.clients.target if self.clients else 0
        self.timeseries.append(
            {
                "time_s": now / NS_PER_S,
                "client_count": clients,
                "in_flight": self.gateway.in_flight,
                "ready_replicas": counts[State.READY],
                "starting_replicas": counts[State.STARTING],
                "draining_replicas": counts[State.DRAINING],
                "provisioned_replicas": provisioned,
                "desired_replicas": provisioned if desired is None else int(desired),
                "avg_queue_latency_s": None if q is None else q / NS_PER_S,
                "end_to_end_p50_s": p50,
                "throughput_rps": throughput,
                "fleet_utilization": busy / alive if alive else 0.0,
                "busy_s": busy / NS_PER_S,
                "replica_s": alive / NS_PER_S,
                "completed_total": self._completed,
                "rejected_total": self._rejected,
            }
        )
        m = self.metrics
        m.set_gauge("ready_replicas", counts[State.READY])
        m.set_gauge("client_count", clients)
        m.set_gauge("gateway_in_flight", self.gateway.in_flight)
        for b in instances:
            s = m.queue_latency.get(b.id)
            if s is None or b.state is State.STOPPED:
                m.remove_gauge("queue_latency_seconds", {"backend": b.id})
                continue
            vals = s.in_window(now, window)
            if vals:
                m.set_gauge("queue_latency_seconds", sum(vals) / len(vals) / NS_PER_S, {"backend": b.id})
        for model in self.config.profiles:
            m.set_gauge("inference_rate", m.inference_rate(model, now), {"model": model})

    def horizon_after(self, t: int) -> int:
        """First sample time at or after `t`."""
        step = self.config.sample_interval
        base = self._t_start
        return base + -(-(t - base) // step) * step

    def summarize(self, horizon: int) -> dict:
        return summarize(self, horizon)


def _pct(values: list[float], q: float) -> float | None:
    return float(np.percentile(values, q)) if values else None


def _r(x: float | None) -> float | None:
    return None if x is None else round(float(x), 9)


def summarize(sim: Simulation, horizon: int) -> dict:
    records = sim.clients.records
    ok = [r for r in records if r.outcome is Outcome.OK]
    lat = [r.total_time / NS_PER_S for r in ok]
    counts = {o.value: 0 for o in Outcome}
    for r in records:
        counts[r.outcome.value] += 1
    instances = sim.fleet.ordered()
    busy_raw = sum(b.busy_accumulated for b in instances) + sum(
        b.busy_time(b.current.t_compute_start, horizon) for b in instances if b.current is not None
    )
    alive_raw = sum(b.alive_time(0, horizon) for b in instances)
    ts_busy = sum(row["busy_s"] for row in sim.timeseries)
    ts_alive = sum(row["replica_s"] for row in sim.timeseries)
    accepted = sum(b.accepted_count for b in instances)
    completed = sum(b.served_count for b in instances)
    scaling = [h for h in (sim.autoscaler.history if sim.autoscaler else []) if h[3].kind != "none"]
    return {
        "label": sim.config.label,
        "mode": sim.config.mode,
        "seed": sim.config.seed,
        "duration_s": _r(horizon / NS_PER_S),
        "requests_total": len(records),
        "requests_ok": len(ok),
        "rejections": {k: v for k, v in counts.items() if k != "ok"},
        "accepted": accepted,
        "completed": completed,
        "dropped": accepted - completed,
        "mean_end_to_end_latency_s": _r(sum(lat) / len(lat)) if lat else None,
        "p50_latency_s": _r(_pct(lat, 50)),
        "p95_latency_s": _r(_pct(lat, 95)),
        "p99_latency_s": _r(_pct(lat, 99)),
        "mean_queue_latency_s": _r(sum(r.queue_time for r in ok) / len(ok) / NS_PER_S) if ok else None,
        "mean_compute_time_s": _r(sum(r.compute_time for r in ok) / len(ok) / NS_PER_S) if ok else None,
        "mean_network_time_s": _r(sum(r.network_time for r in ok) / len(ok) / NS_PER_S) if ok else None,
        "mean_gpu_utilization": _r(busy_raw / alive_raw) if alive_raw else 0.0,
        "mean_gpu_utilization_timeseries": _r(ts_busy / ts_alive) if ts_alive else 0.0,
        "replica_seconds": _r(alive_raw / NS_PER_S),
        "max_provisioned_replicas": max((row["provisioned_replicas"] for row in sim.timeseries), default=0),
        "scaling_actions": len(scaling),
    }


def _finish(sim: Simulation, horizon: int) -> RunResult:
    sim.stop()
    return RunResult(
        config=sim.config,
        timeseries=list(sim.timeseries),
        backend_rows=list(sim.backend_rows),
        summary=summarize(sim, horizon),
        records=list(sim.clients.records),
        scaling_history=list(sim.autoscaler.history) if sim.autoscaler else [],
        gateway_events=sim.gateway.event_log,
        metrics=sim.metrics,
    )


def run_virtual(config: ExperimentConfig, log_events: bool = False) -> RunResult:
    loop = VirtualLoop()
    sim = Simulation(config, loop, log_events=log_events)
    transport = VirtualTransport(loop, sim.gateway, config.network_latency)
    clients = sim.attach_clients(transport.send)
    sim.start()
    end = config.schedule.duration
    loop.run(until=end)
    while clients.in_flight:
        loop.run(until=loop.now() + config.sample_interval)
    horizon = sim.horizon_after(loop.now())
    loop.run(until=horizon)
    return _finish(sim, horizon)


async def run_wallclock_async(config: ExperimentConfig, log_events: bool = False, metrics_address=None) -> RunResult:
    from .exposition import serve_metrics
    from .server import GatewayServer, TcpTransport

    host, _, port = config.gateway.listen_address.rpartition(":")
    server = GatewayServer(None, None)
    await server.start(host or "127.0.0.1", int(port or 0))
    loop = WallClockLoop(config.compression, asyncio.get_running_loop())
    sim = Simulation(config, loop, log_events=log_events)
    server.gateway, server.loop = sim.gateway, loop
    metrics_srv = serve_metrics(sim.metrics, metrics_address or ("127.0.0.1", 0))
    log.info("gateway on %s:%d, metrics on %s:%d", *server.address, *metrics_srv.address)
    transport = TcpTransport(loop, server)
    clients = sim.attach_clients(transport.send)
    try:
        t_start = loop.now()
        sim.start()
        await loop.sleep_until(t_start + config.schedule.duration)
        while clients.in_flight:
            await loop.sleep_until(loop.now() + config.sample_interval // 10)
        horizon = sim.horizon_after(loop.now())
        await loop.sleep_until(horizon)
        # let the sample due at `horizon` fire
        while sim._last_sample < horizon:
            await asyncio.sleep(0.005)
        result = _finish(sim, sim._last_sample)
    finally:
        sim.stop()
        await transport.close()
        await server.close()
        await asyncio.get_running_loop().run_in_executor(None, metrics_srv.close)
    return result


def run_experiment(config: ExperimentConfig, log_events: bool = False) -> RunResult:
    if config.mode == "virtual":
        return run_virtual(config, log_events)
    return asyncio.run(run_wallclock_async(config, log_events))


COMPARISON_COLUMNS = (
    "label",
    "mean_latency_s",
    "p95_latency_s",
    "mean_gpu_utilization",
    "replica_seconds",
    "requests_ok",
    "rejected",
)


def compare(configs: list[ExperimentConfig]) -> tuple[list[dict], list[RunResult]]:
    """Run every config and tabulate latency, utilization and GPU cost."""
    if not configs:
        raise InvalidArgument("nothing to compare")
    ref = configs[0]
    for c in configs[1:]:
        if c.schedule != ref.schedule:
            raise InvalidArgument(f"{c.label}: schedule differs from {ref.label}")
        if c.seed != ref.seed or c.models != ref.models:
            raise InvalidArgument(f"{c.label}: seed or model profiles differ from {ref.label}")
    rows, results = [], []
    for c in configs:
        res = run_experiment(c)
        s = res.summary
        rows.append(
            {
                "label": c.label,
                "mean_latency_s": s["mean_end_to_end_latency_s"],
                "p95_latency_s": s["p95_latency_s"],
                "mean_gpu_utilization": s["mean_gpu_utilization"],
                "replica_seconds": s["replica_seconds"],
                "requests_ok": s["requests_ok"],
                "rejected": sum(s["rejections"].values()),
            }
        )
        results.append(res)
    return rows, results
