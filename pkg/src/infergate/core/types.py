from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InvalidArgument, InvariantViolation


class Outcome(str, Enum):
    OK = "ok"
    REJECTED_AUTH = "rejected_auth"
    REJECTED_RATE = "rejected_rate"
    REJECTED_CAPACITY = "rejected_capacity"
    NO_BACKEND = "no_backend"


@dataclass(frozen=True)
class ModelProfile:
    """Synthetic GPU cost model: base_time + batch * per_item_time, in ns.

    jitter_sigma > 0 multiplies each sample by lognormal(0, sigma) noise.
    """

    name: str
    base_time: int
    per_item_time: int
    jitter_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.base_time < 0 or self.per_item_time < 0:
            raise InvalidArgument(f"profile {self.name!r}: times must be >= 0")
        if self.jitter_sigma < 0 or not math.isfinite(self.jitter_sigma):
            raise InvalidArgument(f"profile {self.name!r}: sigma must be >= 0")

    def nominal(self, batch_size: int) -> int:
        return self.base_time + batch_size * self.per_item_time


def sample_service_time(profile: ModelProfile, batch_size: int, rng: np.random.Generator | None = None) -> int:
    if batch_size < 1:
        raise InvalidArgument(f"batch_size must be >= 1, got {batch_size}")
    t = profile.nominal(batch_size)
    if profile.jitter_sigma > 0:
        if rng is None:
            raise InvalidArgument("jittered profile needs an rng")
        t = int(round(t * rng.lognormal(0.0, profile.jitter_sigma)))
    return t


@dataclass(frozen=True)
class InferenceRequest:
    request_id: int
    model: str
    batch_size: int
    token: bytes = b""
    payload_size: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise InvalidArgument(f"batch_size must be >= 1, got {self.batch_size}")
        if self.payload_size < 0:
            raise InvalidArgument("payload_size must be >= 0")


@dataclass
class RequestRecord:
    request_id: int
    model: str
    t_client_send: int
    t_gateway_in: int | None = None
    t_enqueue: int | None = None
    t_compute_start: int | None = None
    t_compute_end: int | None = None
    t_client_recv: int | None = None
    backend_id: str | None = None
    outcome: Outcome | None = None
    client_id: int | None = None

    @property
    def total_time(self) -> int:
        return self.t_client_recv - self.t_client_send

    @property
    def queue_time(self) -> int:
        return self.t_compute_start - self.t_enqueue

    @property
    def compute_time(self) -> int:
        return self.t_compute_end - self.t_compute_start

    @property
    def network_time(self) -> int:
        return self.total_time - self.queue_time - self.compute_time

    def validate(self) -> None:
        if self.outcome is None:
            raise InvariantViolation(f"request {self.request_id}: record has no outcome")
        if self.t_client_recv is None or self.t_client_recv < self.t_client_send:
            raise InvariantViolation(f"request {self.request_id}: bad client timestamps")
        if self.outcome is not Outcome.OK:
            return
        chain = (
            self.t_client_send,
            self.t_gateway_in,
            self.t_enqueue,
            self.t_compute_start,
            self.t_compute_end,
            self.t_client_recv,
        )
        if any(t is None for t in chain):
            raise InvariantViolation(f"request {self.request_id}: ok record missing timestamps")
        if any(a > b for a, b in zip(chain, chain[1:])):
            raise InvariantViolation(f"request {self.request_id}: timestamps out of order {chain}")

