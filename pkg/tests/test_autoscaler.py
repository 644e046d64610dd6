import math

import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_stack
from infergate.autoscaler import Autoscaler, AutoscalerConfig, collect_metric, desired_replicas
from infergate.backend import State
from infergate.core import InvalidArgument, MetricsRegistry, ms, seconds
from infergate.harness.config import DEFAULT_CONFIG, parse_config
from infergate.harness.experiment import run_virtual


def scaler(flat50, replicas=1, startup_delay=seconds(10), **kw):
    loop, fleet, _ = make_stack(flat50, replicas=replicas, startup_delay=startup_delay)
    metrics = MetricsRegistry(window=seconds(300))
    return loop, fleet, metrics, Autoscaler(AutoscalerConfig(**kw), fleet, metrics)


def feed(fleet, metrics, t, queue_ns):
    for b in fleet.live():
        metrics.add_queue_sample(b.id, t, int(queue_ns))


def brute_desired(current, ratio, tol, lo, hi):
    if abs(ratio - 1) <= tol:
        d = current
    else:
        d = math.ceil(current * ratio)
    return min(hi, max(lo, d))


class TestCollectMetric:
    def test_equal_counts(self, flat50):
        _, fleet, metrics, _ = scaler(flat50, replicas=2)
        metrics.add_queue_sample("gpu-0000", seconds(1), ms(100))
        metrics.add_queue_sample("gpu-0001", seconds(1), ms(300))
        assert collect_metric(fleet.live(), metrics, seconds(2), seconds(30)) == ms(200)

    def test_skewed_counts_pool(self, flat50):
        _, fleet, metrics, _ = scaler(flat50, replicas=2)
        for i in range(3):
            metrics.add_queue_sample("gpu-0000", seconds(1 + i), ms(100))
        metrics.add_queue_sample("gpu-0001", seconds(1), ms(300))
        flat = [v for b in ("gpu-0000", "gpu-0001") for _, v in metrics.queue_latency[b].items()]
        got = collect_metric(fleet.live(), metrics, seconds(5), seconds(30))
        assert got == sum(flat) / len(flat) == ms(150)

    def test_no_traffic(self, flat50):
        _, fleet, metrics, _ = scaler(flat50)
        assert collect_metric(fleet.live(), metrics, seconds(5), seconds(30)) is None

    def test_ignores_starting_and_stopped(self, flat50):
        _, fleet, metrics, _ = scaler(flat50, replicas=2)
        metrics.add_queue_sample("gpu-0001", seconds(1), ms(900))
        fleet.drain("gpu-0001")
        metrics.add_queue_sample("gpu-0000", seconds(1), ms(100))
        assert fleet.instances["gpu-0001"].state is State.STOPPED
        assert collect_metric(fleet.ordered(), metrics, seconds(2), seconds(30)) == ms(100)


class TestDesired:
    def test_examples(self):
        assert desired_replicas(1, ms(900), ms(100), max_replicas=10) == 9
        assert desired_replicas(4, ms(105), ms(100), tolerance=0.10) == 4
        assert desired_replicas(8, ms(10), ms(100), min_replicas=1) == 1

    def test_clamped_to_max(self):
        assert desired_replicas(5, ms(1000), ms(100), max_replicas=10) == 10

    @pytest.mark.parametrize("kw", [{"target": 0}, {"target": -1}, {"current": 0}])
    def test_invalid(self, kw):
        args = {"current": 1, "metric": ms(100), "target": ms(100)} | kw
        with pytest.raises(InvalidArgument):
            desired_replicas(**args)

    def test_grid_against_brute_force(self):
        for current in range(1, 11):
            for ratio in (0.1, 0.5, 0.95, 1.05, 3, 9):
                for lo, hi in ((1, 10), (2, 6)):
                    got = desired_replicas(current, ratio * ms(100), ms(100), 0.10, lo, hi)
                    assert got == brute_desired(current, ratio, 0.10, lo, hi), (current, ratio, lo, hi)

    @given(
        st.integers(1, 50),
        st.floats(0, 1e10, allow_nan=False),
        st.floats(0, 1e10, allow_nan=False),
        st.floats(0, 0.5),
    )
    def test_monotone_in_metric(self, current, m1, m2, tol):
        lo, hi = sorted((m1, m2))
        assert desired_replicas(current, lo, ms(100), tol, 1, 100) <= desired_replicas(current, hi, ms(100), tol, 1, 100)


class TestReconcile:
    def test_scale_up_from_one_to_nine(self, flat50):
        loop, fleet, metrics, a = scaler(flat50)
        feed(fleet, metrics, seconds(4), ms(900))
        loop.run(until=seconds(5))
        action = a.reconcile(seconds(5))
        assert (action.kind, action.n) == ("scale_up", 8)
        assert len(fleet.provisioned()) == 9
        assert sum(b.state is State.STARTING for b in fleet.ordered()) == 8

    def test_early_reconcile_rejected(self, flat50):
        _, _, _, a = scaler(flat50)
        a.reconcile(seconds(5))
        with pytest.raises(InvalidArgument):
            a.reconcile(seconds(9))

    def test_absent_metric_is_no_action(self, flat50):
        _, fleet, _, a = scaler(flat50)
        assert a.reconcile(seconds(5)).kind == "none"
        assert len(fleet.provisioned()) == 1

    def test_absent_metric_keeps_current(self, flat50):
        _, fleet, _, a = scaler(flat50, replicas=4, min_replicas=1)
        assert a.reconcile(seconds(5)).kind == "none"
        assert len(fleet.provisioned()) == 4

    def test_downscale_held_by_window(self, flat50):
        loop, fleet, metrics, a = scaler(flat50, startup_delay=0, metric_window=seconds(5))
        feed(fleet, metrics, seconds(4), ms(900))
        assert a.reconcile(seconds(5)).n == 8
        downs = []
        for t in range(10, 301, 5):
            # on target until 200 s, then idle queues
            feed(fleet, metrics, seconds(t) - 1, ms(100) if t <= 200 else ms(1))
            loop.run(until=seconds(t))
            act = a.reconcile(seconds(t))
            if act.kind == "scale_down":
                downs.append((t, act.n))
        assert downs == [(260, 8)]
        assert len(fleet.provisioned()) == 1
        assert [b.id for b in fleet.ordered() if b.state is State.STOPPED] == [f"gpu-{i:04d}" for i in range(1, 9)]

    def test_drains_highest_ids(self, flat50):
        loop, fleet, metrics, a = scaler(flat50, replicas=5, startup_delay=0, downscale_stabilization=0)
        feed(fleet, metrics, seconds(4), ms(40))
        a.reconcile(seconds(5))
        assert [b.id for b in fleet.provisioned()] == ["gpu-0000", "gpu-0001"]

    def test_autoscaler_runs_on_poll_grid(self, flat50):
        loop, fleet, metrics, a = scaler(flat50)
        a.start()
        loop.run(until=seconds(31))
        assert [t for t, *_ in a.history] == [seconds(t) for t in (5, 10, 15, 20, 25, 30)]


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(0, 2_000), min_size=1, max_size=60),
    st.integers(1, 4),
    st.integers(4, 12),
    st.sampled_from([0, 10, 60]),
)
def test_bounds_and_stabilization(metrics_ms, lo, hi, stab_s):
    from infergate.core import ModelProfile

    loop, fleet, metrics, a = scaler(
        ModelProfile("m", ms(50), 0), replicas=lo, startup_delay=seconds(10),
        min_replicas=lo, max_replicas=hi, downscale_stabilization=seconds(stab_s), metric_window=seconds(5),
    )
    holds = []
    for k, q in enumerate(metrics_ms):
        t = seconds(5 * (k + 1))
        feed(fleet, metrics, t - 1, ms(q))
        loop.run(until=t)
        before = len(fleet.provisioned())
        act = a.reconcile(t)
        after = len(fleet.provisioned())
        assert lo <= after <= hi
        if act.kind == "scale_down":
            assert all(t >= h + seconds(stab_s) for h in holds)
        desired = a.history[-1][2]
        if desired >= before:
            holds.append(t)


def constant_load_config(clients, duration=300, **autoscaler):
    raw = yaml.safe_load(DEFAULT_CONFIG)
    raw["schedule"]["phases"] = [{"duration_s": duration, "clients": clients}]
    raw["autoscaler"].update(autoscaler)
    return parse_config(raw)


@pytest.mark.parametrize("clients", [2, 5, 10])
def test_convergence_under_constant_load(clients):
    cfg = constant_load_config(clients)
    res = run_virtual(cfg)
    service = cfg.profiles["model"].nominal(cfg.schedule.client.batch_size) / 1e9
    think = cfg.schedule.client.think_time / 1e9
    load = clients / (service + think)
    need = math.ceil(load * service - 1e-9)
    history = res.scaling_history[:10]
    runs, best = 0, None
    for t, _, _, act in history:
        runs = runs + 1 if act.kind == "none" else 0
        if runs == 5:
            best = t
            break
    assert best is not None, [(t / 1e9, h.kind, h.n) for t, _, _, h in history]
    provisioned = next(r["provisioned_replicas"] for r in res.timeseries if r["time_s"] == best / 1e9)
    assert provisioned >= need
