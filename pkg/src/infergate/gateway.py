"""Client-facing proxy: token auth, admission control, round-robin balancing."""
from __future__ import annotations

import hmac
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .backend import BackendInstance, Enqueue, Fleet, State
from .core.errors import InvalidArgument, NoBackend
from .core.types import InferenceRequest, Outcome, RequestRecord


@dataclass(frozen=True)
class GatewayConfig:
    auth_enabled: bool = False
    valid_tokens: frozenset[bytes] = frozenset()
    max_concurrent_connections: int = 100
    # (metric name, threshold); deny while the metric is strictly above it
    external_metric_limit: tuple[str, float] | None = None
    listen_address: str = "127.0.0.1:0"

    def __post_init__(self) -> None:
        if self.auth_enabled and not self.valid_tokens:
            raise InvalidArgument("auth_enabled requires at least one valid token")
        if self.max_concurrent_connections < 1:
            raise InvalidArgument("max_concurrent_connections must be >= 1")


def authenticate(token: bytes, config: GatewayConfig) -> bool:
    if not config.auth_enabled:
        return True
    # compare against every token so timing does not reveal which one matched
    ok = False
    for valid in config.valid_tokens:
        ok |= hmac.compare_digest(token, valid)
    return ok


def admit(active_connections: int, config: GatewayConfig, external_metric: float | None = None) -> bool:
    if active_connections < 0:
        raise InvalidArgument("active_connections must be >= 0")
    if active_connections >= config.max_concurrent_connections:
        return False
    if config.external_metric_limit is not None and external_metric is not None:
        if external_metric > config.external_metric_limit[1]:
            return False
    return True


@dataclass
class RoundRobinState:
    cursor: int = 0


def select_backend(state: RoundRobinState, backends: Sequence[BackendInstance]) -> str:
    n = len(backends)
    for k in range(n):
        i = (state.cursor + k) % n
        if backends[i].state is State.READY:
            state.cursor = (i + 1) % n
            return backends[i].id
    raise NoBackend("no Ready backend")


@dataclass
class _Pending:
    record: RequestRecord
    respond: Callable[[RequestRecord], None]


@dataclass
class Gateway:
    """Single entry point in front of a Fleet.

    `route` never raises for request-level failures: every outcome is
    written to the record and delivered through `respond`, which fires when
    the gateway answers (immediately for rejections, at compute end for ok).
    """

    config: GatewayConfig
    fleet: Fleet
    external_metric: Callable[[], float | None] | None = None
    log_events: bool = False
    rr: RoundRobinState = field(default_factory=RoundRobinState)
    in_flight: int = 0
    event_log: list[tuple[int, int]] = field(default_factory=list)
    _pending: dict[int, _Pending] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.fleet.on_complete = self._on_complete

    def _log(self) -> None:
        if self.log_events:
            self.event_log.append((self.fleet.loop.now(), self.in_flight))

    def route(
        self,
        request: InferenceRequest,
        t_client_send: int | None = None,
        respond: Callable[[RequestRecord], None] | None = None,
    ) -> RequestRecord:
        now = self.fleet.loop.now()
        rec = RequestRecord(
            request.request_id,
            request.model,
            t_client_send=now if t_client_send is None else t_client_send,
            t_gateway_in=now,
        )
        respond = respond or _noop

        if not authenticate(request.token, self.config):
            return self._reject(rec, Outcome.REJECTED_AUTH, respond)
        metric = self.external_metric() if self.external_metric is not None else None
        if not admit(self.in_flight, self.config, metric):
            return self._reject(rec, Outcome.REJECTED_RATE, respond)
        self.in_flight += 1
        self._log()
        try:
            bid = select_backend(self.rr, self.fleet.live())
        except NoBackend:
            return self._release(rec, Outcome.NO_BACKEND, respond)
        res = self.fleet.enqueue(bid, request, rec) if request.model in self.fleet.profiles else None
        if res is Enqueue.ACCEPTED:
            rec.outcome = Outcome.OK
            self._pending[request.request_id] = _Pending(rec, respond)
            return rec
        rec.backend_id = None
        rec.t_enqueue = None
        if res is Enqueue.REJECTED_CAPACITY:
            return self._release(rec, Outcome.REJECTED_CAPACITY, respond)
        return self._release(rec, Outcome.NO_BACKEND, respond)

    def _reject(self, rec: RequestRecord, outcome: Outcome, respond) -> RequestRecord:
        rec.outcome = outcome
        respond(rec)
        return rec

    def _release(self, rec: RequestRecord, outcome: Outcome, respond) -> RequestRecord:
        self.in_flight -= 1
        self._log()
        return self._reject(rec, outcome, respond)

    def _on_complete(self, rec: RequestRecord) -> None:
        p = self._pending.pop(rec.request_id)
        self.in_flight -= 1
        self._log()
        p.respond(p.record)

    @property
    def pending(self) -> int:
        return len(self._pending)


def _noop(_: RequestRecord) -> None:
    pass
