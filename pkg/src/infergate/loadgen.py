"""Closed-loop load generation driven by a timed phase schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .core.clock import NS_PER_S, VirtualLoop, WallClockLoop, ms
from .core.errors import InvalidArgument, InvariantViolation
from .core.types import InferenceRequest, ModelProfile, Outcome, RequestRecord
from .gateway import Gateway

REJECT_BACKOFF = ms(100)


@dataclass(frozen=True)
class ClientSpec:
    model: str
    batch_size: int = 1
    think_time: int = ms(50)
    token: bytes = b""
    payload_size: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise InvalidArgument("batch_size must be >= 1")
        if self.think_time < 0:
            raise InvalidArgument("think_time must be >= 0")


@dataclass(frozen=True)
class PhaseSchedule:
    phases: tuple[tuple[int, int], ...]  # (duration ns, client count)
    client: ClientSpec

    def __post_init__(self) -> None:
        if not self.phases:
            raise InvalidArgument("schedule needs at least one phase")
        for dur, n in self.phases:
            if dur <= 0:
                raise InvalidArgument("phase durations must be > 0")
            if n < 0:
                raise InvalidArgument("client counts must be >= 0")

    @property
    def duration(self) -> int:
        return sum(d for d, _ in self.phases)

    def boundaries(self) -> list[tuple[int, int]]:
        """(start time, client count) for each phase."""
        out, t = [], 0
        for dur, n in self.phases:
            out.append((t, n))
            t += dur
        return out

    def clients_at(self, t: int) -> int:
        if t >= self.duration:
            return 0
        n = 0
        for start, count in self.boundaries():
            if start <= t:
                n = count
        return n


def calibrate(
    profile: ModelProfile,
    target_service: int = ms(50),
    replicas: int = 1,
    clients: tuple[int, int] = (1, 10),
) -> tuple[int, int]:
    """Pick (batch_size, think_time) so `clients[0]` fit on `replicas` GPUs and `clients[1]` do not.

    Think time equals the service time, which puts a lone client at 50% of one GPU.
    """
    if profile.jitter_sigma:
        raise InvalidArgument("calibrate needs a jitter-free profile")
    if profile.base_time == 0 and profile.per_item_time == 0:
        raise InvalidArgument("profile has zero cost; no batch size can load the GPU")
    if profile.per_item_time > 0:
        batch = max(1, round((target_service - profile.base_time) / profile.per_item_time))
    else:
        batch = 1
    service = profile.nominal(batch)
    think = service
    low, high = clients
    capacity = replicas / service
    if not (low / (service + think) < capacity < high / (service + think)):
        raise InvalidArgument(f"cannot separate {low} and {high} clients on {replicas} replica(s)")
    return batch, think


class VirtualTransport:
    """In-process client<->gateway link with a fixed one-way network delay."""

    def __init__(self, loop: VirtualLoop, gateway: Gateway, network_latency: int = 0) -> None:
        self.loop = loop
        self.gateway = gateway
        self.network_latency = network_latency

    def send(self, client_id: int, request: InferenceRequest, on_recv: Callable[[RequestRecord], None]) -> None:
        t_send = self.loop.now()
        net = self.network_latency

        def deliver(rec: RequestRecord) -> None:
            self.loop.call_at(self.loop.now() + net, finish, rec)

        def finish(rec: RequestRecord) -> None:
            rec.t_client_recv = self.loop.now()
            on_recv(rec)

        self.loop.call_at(t_send + net, self.gateway.route, request, t_send, deliver)


@dataclass
class ClosedLoopClients:
    """N sequential clients: send, await the response, think, repeat.

    Client count follows the schedule; clients above the current count stop
    once their in-flight request has been answered.
    """

    loop: VirtualLoop | WallClockLoop
    schedule: PhaseSchedule
    send: Callable[[int, InferenceRequest, Callable[[RequestRecord], None]], None]
    on_record: Callable[[RequestRecord], None] | None = None
    records: list[RequestRecord] = field(default_factory=list)
    target: int = 0
    sent: int = 0
    _next_id: int = 0
    _running: dict[int, bool] = field(default_factory=dict)
    _in_flight: dict[int, bool] = field(default_factory=dict)

    def start(self) -> None:
        t0 = self.loop.now()
        for start, n in self.schedule.boundaries():
            self.loop.call_at(t0 + start, self.set_target, n)
        self.loop.call_at(t0 + self.schedule.duration, self.set_target, 0)

    def set_target(self, n: int) -> None:
        self.target = n
        for i in range(n):
            if not self._running.get(i):
                self._running[i] = True
                self.loop.call_at(self.loop.now(), self._send, i)

    @property
    def active(self) -> int:
        return sum(1 for v in self._running.values() if v)

    @property
    def in_flight(self) -> int:
        return sum(1 for v in self._in_flight.values() if v)

    def _send(self, i: int) -> None:
        if i >= self.target:
            self._running[i] = False
            return
        if self._in_flight.get(i):
            raise InvariantViolation(f"client {i} already has a request in flight")
        spec = self.schedule.client
        req = InferenceRequest(self._next_id, spec.model, spec.batch_size, spec.token, spec.payload_size)
        self._next_id += 1
        self._in_flight[i] = True
        self.sent += 1
        self.send(i, req, lambda rec: self._recv(i, rec))

    def _recv(self, i: int, rec: RequestRecord) -> None:
        self._in_flight[i] = False
        rec.client_id = i
        self.records.append(rec)
        if self.on_record is not None:
            self.on_record(rec)
        think = self.schedule.client.think_time
        if rec.outcome is not Outcome.OK and think == 0:
            think = REJECT_BACKOFF
        self.loop.call_at(self.loop.now() + think, self._send, i)


def run_clients(
    schedule: PhaseSchedule,
    gateway: Gateway,
    clock: VirtualLoop,
    network_latency: int = 0,
    on_record: Callable[[RequestRecord], None] | None = None,
) -> list[RequestRecord]:
    """Drive `gateway` through the whole schedule and drain; returns every record."""
    transport = VirtualTransport(clock, gateway, network_latency)
    clients = ClosedLoopClients(clock, schedule, transport.send, on_record)
    clients.start()
    clock.run(until=clock.now() + schedule.duration)
    while clients.in_flight:
        clock.run(until=clock.now() + NS_PER_S)
    return clients.records


def offered_load(clients: int, service: int, think: int, network: int = 0) -> float:
    """Closed-loop request rate (req/s) when nothing queues."""
    cycle = service + think + 2 * network
    return math.inf if cycle == 0 else clients * NS_PER_S / cycle


__all__ = [
    "ClientSpec",
    "ClosedLoopClients",
    "PhaseSchedule",
    "VirtualTransport",
    "calibrate",
    "offered_load",
    "run_clients",
]
