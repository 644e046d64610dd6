import numpy as np
import pytest

from infergate.backend import BackendInstance, Fleet
from infergate.core import ModelProfile, VirtualLoop, ms
from infergate.gateway import Gateway, GatewayConfig


@pytest.fixture
def profile():
    return ModelProfile("m", ms(40), ms(1))


@pytest.fixture
def flat50():
    """Deterministic 50 ms per request regardless of batch."""
    return ModelProfile("m", ms(50), 0)


def make_stack(profile, replicas=1, gateway_config=None, startup_delay=0, q_max=1000, seed=0):
    loop = VirtualLoop()
    fleet = Fleet(loop, {profile.name: profile}, on_complete=lambda r: None,
                  rng=np.random.default_rng(seed), q_max=q_max, startup_delay=startup_delay)
    for _ in range(replicas):
        fleet.spawn(startup_delay=0)
    gw = Gateway(gateway_config or GatewayConfig(), fleet)
    return loop, fleet, gw


def drive_open_loop(backend: BackendInstance, arrivals, batch=1, model="m"):
    """Feed arrival timestamps straight into one backend; returns finished records."""
    from infergate.core import InferenceRequest

    done = []
    for i, t in enumerate(arrivals):
        done += backend.advance(int(t))
        backend.enqueue(InferenceRequest(i, model, batch), int(t))
    done += backend.advance(2**62)
    return done


# acceptance verdict lines, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
