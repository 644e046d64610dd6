"""Simulated GPU inference servers and the fleet that schedules them."""
from __future__ import annotations

import bisect
from collections import deque
from enum import Enum
from typing import Callable, Mapping

import numpy as np

from .core.clock import VirtualLoop, WallClockLoop, seconds
from .core.errors import InvalidArgument, InvalidState
from .core.types import InferenceRequest, ModelProfile, RequestRecord, sample_service_time

DEFAULT_Q_MAX = 1000
DEFAULT_STARTUP_DELAY = seconds(10)


class State(str, Enum):
    STARTING = "Starting"
    READY = "Ready"
    DRAINING = "Draining"
    STOPPED = "Stopped"


class Enqueue(str, Enum):
    ACCEPTED = "accepted"
    REJECTED_CAPACITY = "rejected_capacity"
    NOT_READY = "not_ready"


class BackendInstance:
    """One GPU: a bounded FIFO queue feeding a single execution unit.

    Execution is computed lazily: `advance(now)` starts queued work at
    max(t_enqueue, busy_until), so timestamps are exact no matter how
    coarsely it is called.
    """

    def __init__(
        self,
        id: str,
        profiles: Mapping[str, ModelProfile],
        now: int,
        startup_delay: int = DEFAULT_STARTUP_DELAY,
        q_max: int = DEFAULT_Q_MAX,
        rng: np.random.Generator | None = None,
    ) -> None:
        if startup_delay < 0:
            raise InvalidArgument("startup_delay must be >= 0")
        if q_max < 1:
            raise InvalidArgument("q_max must be >= 1")
        self.id = id
        self.profiles = profiles
        self.q_max = q_max
        self.rng = rng
        self.spawned_at = now
        self.ready_at = now + startup_delay
        self.stopped_at: int | None = None
        self.state = State.STARTING
        self.queue: deque[tuple[InferenceRequest, RequestRecord]] = deque()
        self.current: RequestRecord | None = None
        self._current_req: InferenceRequest | None = None
        self.busy_until = now
        self.busy_accumulated = 0
        self.served_count = 0
        self.accepted_count = 0
        self._drain_at: int | None = None
        self._last_advance = now
        # completed busy intervals, sorted and disjoint
        self._starts: list[int] = []
        self._ends: list[int] = []
        self._cum: list[int] = [0]
        self._refresh(now)

    def __repr__(self) -> str:
        return f"BackendInstance({self.id!r}, {self.state.value}, queued={len(self.queue)})"

    def _refresh(self, now: int) -> None:
        if self.state is State.STARTING and now >= self.ready_at:
            self.state = State.READY

    @property
    def queue_length(self) -> int:
        return len(self.queue)

    @property
    def idle(self) -> bool:
        return self.current is None and not self.queue

    def enqueue(self, request: InferenceRequest, now: int, record: RequestRecord | None = None) -> Enqueue:
        self._refresh(now)
        if self.state is State.STOPPED:
            raise InvalidState(f"enqueue on stopped backend {self.id}")
        if self.state is not State.READY:
            return Enqueue.NOT_READY
        if len(self.queue) >= self.q_max:
            return Enqueue.REJECTED_CAPACITY
        if request.model not in self.profiles:
            raise InvalidArgument(f"unknown model {request.model!r}")
        if record is None:
            record = RequestRecord(request.request_id, request.model, t_client_send=now, t_gateway_in=now)
        record.t_enqueue = now
        record.backend_id = self.id
        self.queue.append((request, record))
        self.accepted_count += 1
        return Enqueue.ACCEPTED

    def advance(self, now: int) -> list[RequestRecord]:
        """Run the execution unit up to `now`; return records finished by then."""
        if now < self._last_advance:
            raise InvalidArgument(f"advance went backwards: {now} < {self._last_advance}")
        self._last_advance = now
        self._refresh(now)
        done: list[RequestRecord] = []
        while True:
            cur = self.current
            if cur is not None:
                if cur.t_compute_end > now:
                    break
                self._finish(cur)
                done.append(cur)
            if not self.queue or self.state not in (State.READY, State.DRAINING):
                break
            req, rec = self.queue.popleft()
            start = max(rec.t_enqueue, self.busy_until)
            rec.t_compute_start = start
            rec.t_compute_end = start + sample_service_time(self.profiles[req.model], req.batch_size, self.rng)
            self.current = rec
            self._current_req = req
        if self.state is State.DRAINING and self.idle:
            self.state = State.STOPPED
            self.stopped_at = max(self._drain_at, self.busy_until)
        return done

    def _finish(self, rec: RequestRecord) -> None:
        start, end = rec.t_compute_start, rec.t_compute_end
        if end > start:
            self._starts.append(start)
            self._ends.append(end)
            self._cum.append(self._cum[-1] + end - start)
        self.busy_until = end
        self.busy_accumulated += end - start
        self.served_count += 1
        self.current = None
        self._current_req = None

    def next_completion(self) -> int | None:
        return None if self.current is None else self.current.t_compute_end

    def drain(self, now: int) -> None:
        self._refresh(now)
        if self.state is State.STOPPED:
            return
        self._drain_at = now
        if self.state is State.STARTING:
            self.state = State.STOPPED
            self.stopped_at = now
            return
        self.state = State.DRAINING
        if self.idle:
            self.state = State.STOPPED
            self.stopped_at = max(now, self.busy_until)

    def busy_time(self, t0: int, t1: int) -> int:
        """Busy ns overlapping [t0, t1], including an executing request."""
        total = 0
        i = bisect.bisect_right(self._ends, t0)
        j = bisect.bisect_left(self._starts, t1)
        if i < j:
            total = self._cum[j] - self._cum[i]
            # clip the partial intervals at both ends
            total -= max(0, t0 - self._starts[i])
            total -= max(0, self._ends[j - 1] - t1)
        cur = self.current
        if cur is not None:
            total += max(0, min(cur.t_compute_end, t1) - max(cur.t_compute_start, t0))
        return total

    def utilization(self, t0: int, t1: int) -> float:
        if t0 >= t1:
            raise InvalidArgument(f"utilization needs t0 < t1, got [{t0}, {t1}]")
        return self.busy_time(t0, t1) / (t1 - t0)

    def alive_time(self, t0: int, t1: int) -> int:
        end = t1 if self.stopped_at is None else min(self.stopped_at, t1)
        return max(0, end - max(self.spawned_at, t0))


def spawn(
    id: str,
    startup_delay: int,
    now: int,
    profiles: Mapping[str, ModelProfile],
    **kwargs,
) -> BackendInstance:
    return BackendInstance(id, profiles, now, startup_delay=startup_delay, **kwargs)


class Fleet:
    """Owns every backend and schedules their completions on the event loop.

    Ids are zero-padded so lexicographic order equals spawn order.
    """

    def __init__(
        self,
        loop: VirtualLoop | WallClockLoop,
        profiles: Mapping[str, ModelProfile],
        on_complete: Callable[[RequestRecord], None],
        rng: np.random.Generator | None = None,
        q_max: int = DEFAULT_Q_MAX,
        startup_delay: int = DEFAULT_STARTUP_DELAY,
    ) -> None:
        self.loop = loop
        self.profiles = profiles
        self.on_complete = on_complete
        self.rng = rng
        self.q_max = q_max
        self.startup_delay = startup_delay
        self.instances: dict[str, BackendInstance] = {}
        self._next = 0
        self._scheduled: dict[str, int] = {}
        self.on_change: Callable[[], None] | None = None

    def new_id(self) -> str:
        while True:
            bid = f"gpu-{self._next:04d}"
            self._next += 1
            if bid not in self.instances:
                return bid

    def spawn(self, id: str | None = None, startup_delay: int | None = None) -> BackendInstance:
        now = self.loop.now()
        bid = id if id is not None else self.new_id()
        if bid in self.instances:
            raise InvalidArgument(f"backend id {bid!r} already used")
        delay = self.startup_delay if startup_delay is None else startup_delay
        b = BackendInstance(bid, self.profiles, now, startup_delay=delay, q_max=self.q_max, rng=self.rng)
        self.instances[bid] = b
        if b.state is State.STARTING:
            self.loop.call_at(b.ready_at, self._became_ready, b)
        return b

    def _became_ready(self, b: BackendInstance) -> None:
        b._refresh(self.loop.now())
        if self.on_change is not None:
            self.on_change()

    def ordered(self) -> list[BackendInstance]:
        now = self.loop.now()
        out = []
        for bid in sorted(self.instances):
            b = self.instances[bid]
            b._refresh(now)
            out.append(b)
        return out

    def live(self) -> list[BackendInstance]:
        return [b for b in self.ordered() if b.state is not State.STOPPED]

    def provisioned(self) -> list[BackendInstance]:
        """Ready + Starting: the replicas the autoscaler counts."""
        return [b for b in self.ordered() if b.state in (State.READY, State.STARTING)]

    def ready(self) -> list[BackendInstance]:
        return [b for b in self.ordered() if b.state is State.READY]

    def enqueue(self, backend_id: str, request: InferenceRequest, record: RequestRecord | None = None) -> Enqueue:
        b = self.instances[backend_id]
        now = self.loop.now()
        self._pump(b, now)
        res = b.enqueue(request, now, record)
        if res is Enqueue.ACCEPTED:
            self._pump(b, now)
        return res

    def drain(self, backend_id: str) -> None:
        b = self.instances[backend_id]
        now = self.loop.now()
        self._pump(b, now)
        b.drain(now)

    def _wake(self, b: BackendInstance) -> None:
        self._scheduled.pop(b.id, None)
        self._pump(b, self.loop.now())

    def _pump(self, b: BackendInstance, now: int) -> None:
        for rec in b.advance(now):
            self.on_complete(rec)
        nxt = b.next_completion()
        if nxt is not None and self._scheduled.get(b.id) != nxt:
            self._scheduled[b.id] = nxt
            self.loop.call_at(nxt, self._wake, b)

    def settle(self) -> None:
        now = self.loop.now()
        for b in self.ordered():
            self._pump(b, now)
