"""Time sources and the event loops that drive every simulated component.

All timestamps are integer nanoseconds since experiment start. The virtual
loop only moves time when it pops an event; the wall-clock loop maps real
monotonic time onto the same scale, optionally compressed.
"""
from __future__ import annotations

import asyncio
import heapq
import itertools
import time
from typing import Any, Callable

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000


def seconds(x: float) -> int:
    return int(round(x * NS_PER_S))


def ms(x: float) -> int:
    return int(round(x * NS_PER_MS))


def to_seconds(ns: int) -> float:
    return ns / NS_PER_S


class Handle:
    __slots__ = ("when", "cancelled")

    def __init__(self, when: int) -> None:
        self.when = when
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class VirtualLoop:
    """Deterministic single-threaded discrete-event loop.

    Events at equal timestamps run in scheduling order, so identical inputs
    always replay identically.
    """

    mode = "virtual"

    def __init__(self) -> None:
        self._now = 0
        self._queue: list[tuple[int, int, Handle, Callable[..., Any], tuple]] = []
        self._seq = itertools.count()
        self._stopped = False

    def now(self) -> int:
        return self._now

    def call_at(self, when: int, fn: Callable[..., Any], *args: Any) -> Handle:
        when = max(int(when), self._now)
        h = Handle(when)
        heapq.heappush(self._queue, (when, next(self._seq), h, fn, args))
        return h

    def call_later(self, delay: int, fn: Callable[..., Any], *args: Any) -> Handle:
        return self.call_at(self._now + delay, fn, *args)

    def stop(self) -> None:
        self._stopped = True

    def pending(self) -> int:
        return sum(1 for e in self._queue if not e[2].cancelled)

    def run(self, until: int | None = None) -> None:
        """Run events in time order; stops once the next event lies after `until`."""
        self._stopped = False
        q = self._queue
        while q and not self._stopped:
            when = q[0][0]
            if until is not None and when > until:
                break
            _, _, h, fn, args = heapq.heappop(q)
            if h.cancelled:
                continue
            self._now = when
            fn(*args)
        if until is not None and not self._stopped and self._now < until:
            self._now = until


class WallClockLoop:
    """Same call_at/now surface as VirtualLoop, backed by asyncio.

    `compression` virtual seconds elapse per real second. Callbacks never
    observe a time earlier than the one they were scheduled for.
    """

    mode = "wallclock"

    def __init__(self, compression: float = 20.0, loop: asyncio.AbstractEventLoop | None = None) -> None:
        if compression <= 0:
            raise ValueError("compression must be positive")
        self.compression = compression
        self._loop = loop
        self._t0 = time.monotonic_ns()
        self._floor = 0

    @property
    def aio(self) -> asyncio.AbstractEventLoop:
        if self._loop is None:
            self._loop = asyncio.get_running_loop()
        return self._loop

    def reset(self) -> None:
        self._t0 = time.monotonic_ns()
        self._floor = 0

    def now(self) -> int:
        real = int((time.monotonic_ns() - self._t0) * self.compression)
        if real > self._floor:
            self._floor = real
        return self._floor

    def real_delay(self, virtual_ns: int) -> float:
        return max(virtual_ns, 0) / NS_PER_S / self.compression

    def call_at(self, when: int, fn: Callable[..., Any], *args: Any) -> Handle:
        when = int(when)
        h = Handle(when)

        def fire() -> None:
            if h.cancelled:
                return
            if when > self._floor:
                self._floor = when
            fn(*args)

        self.aio.call_later(self.real_delay(when - self.now()), fire)
        return h

    def call_later(self, delay: int, fn: Callable[..., Any], *args: Any) -> Handle:
        return self.call_at(self.now() + delay, fn, *args)

    async def sleep_until(self, when: int) -> None:
        while True:
            remaining = when - self.now()
            if remaining <= 0:
                return
            await asyncio.sleep(self.real_delay(remaining))
