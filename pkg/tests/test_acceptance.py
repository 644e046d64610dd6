"""End-to-end acceptance criteria; each test prints one PASS/FAIL line."""
import math
import random
import time
from collections import Counter

import numpy as np
import pytest
import yaml

from conftest import ACCEPTANCE, drive_open_loop, make_stack
from infergate.autoscaler import desired_replicas
from infergate.backend import BackendInstance
from infergate.core import InferenceRequest, ModelProfile, Outcome, ms, seconds
from infergate.gateway import GatewayConfig
from infergate.harness.config import DEFAULT_CONFIG, default_config, parse_config
from infergate.harness.experiment import compare, run_virtual
from infergate.harness.protocol import DecodeError, Request, Response, Status, decode_message, encode_message
from infergate.harness.report import write_run

TARGET_S = 0.1


def verdict(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
    print(line)
    ACCEPTANCE.append(line)
    assert ok, line


@pytest.fixture(scope="module")
def default_run():
    t = time.perf_counter()
    res = run_virtual(default_config())
    return res, time.perf_counter() - t


@pytest.fixture(scope="module")
def comparison():
    cfg = default_config()
    t = time.perf_counter()
    rows, results = compare([cfg] + [cfg.with_static(n) for n in (1, 2, 5, 10)])
    return rows, results, time.perf_counter() - t


@pytest.fixture(scope="module")
def fuzz_runs():
    rng = random.Random(2024)
    runs = []
    for _ in range(40):
        raw = yaml.safe_load(DEFAULT_CONFIG)
        raw["seed"] = rng.randrange(10**6)
        raw["schedule"]["phases"] = [
            {"duration_s": rng.choice([1, 2, 5, 8]), "clients": rng.randrange(0, 25)} for _ in range(rng.randrange(1, 5))
        ]
        raw["schedule"]["client"].update(batch_size=rng.randrange(1, 20), think_time_s=rng.choice([0, 0.005, 0.02, 0.05]))
        raw["models"][0]["jitter_sigma"] = rng.choice([0.0, 0.3])
        raw["gateway"]["max_concurrent_connections"] = 5
        raw["backend"].update(startup_delay_s=rng.choice([0, 1, 3]), q_max=rng.choice([1, 3, 1000]))
        raw["autoscaler"].update(poll_interval_s=1, metric_window_s=3, downscale_stabilization_s=2)
        if rng.random() < 0.3:
            raw["autoscaler"] = None
            raw["static_replicas"] = rng.randrange(1, 4)
        runs.append(run_virtual(parse_config(raw), log_events=True))
    return runs


def test_criterion_1_autoscaling_dynamics(default_run):
    res, wall = default_run
    ts = {r["time_s"]: r for r in res.timeseries}
    prov = {t: r["provisioned_replicas"] for t, r in ts.items()}
    phase1 = all(v == 1 for t, v in prov.items() if t <= 300)
    reached = [t for t, v in prov.items() if 300 < t <= 420 and 4 <= v <= 6]
    peak = max(v for t, v in prov.items() if 300 < t <= 600)
    ok_recs = [r for r in res.records if r.outcome is Outcome.OK and seconds(500) < r.t_compute_start <= seconds(600)]
    steady_q = np.mean([r.queue_time for r in ok_recs]) / 1e9
    back = [t for t, v in prov.items() if 600 < t <= 720 and v == 1]
    stays = all(v == 1 for t, v in prov.items() if back and t >= back[0])
    s = res.summary
    no_drop = s["dropped"] == 0 and s["accepted"] == s["completed"] == s["requests_ok"]
    ok = phase1 and bool(reached) and steady_q <= 1.2 * TARGET_S and bool(back) and stays and no_drop and wall < 10
    verdict(
        1,
        "autoscaling dynamics",
        ok,
        f"phase1 at 1: {phase1}; first in [4,6] at t={reached[0] if reached else None}s, peak {peak}; "
        f"last-100s mean queue {steady_q * 1e3:.1f} ms; back to 1 at t={back[0] if back else None}s; "
        f"dropped {s['dropped']}; {wall:.1f}s wall",
    )


def test_criterion_2_static_vs_dynamic(comparison):
    rows, _, wall = comparison
    by = {r["label"]: r for r in rows}
    dyn, s1, s10 = by["dynamic"], by["static-1"], by["static-10"]
    ok = (
        dyn["mean_latency_s"] < s1["mean_latency_s"]
        and dyn["mean_gpu_utilization"] > s10["mean_gpu_utilization"]
        and dyn["replica_seconds"] < s10["replica_seconds"]
        and wall < 60
    )
    verdict(
        2,
        "static-vs-dynamic Pareto",
        ok,
        f"latency {dyn['mean_latency_s']:.3f} vs static-1 {s1['mean_latency_s']:.3f} s; "
        f"util {dyn['mean_gpu_utilization']:.3f} vs static-10 {s10['mean_gpu_utilization']:.3f}; "
        f"replica-s {dyn['replica_seconds']:.0f} vs {s10['replica_seconds']:.0f}; {wall:.1f}s wall",
    )


def test_criterion_3_queueing_oracle():
    rng = np.random.default_rng(3)
    arrivals = np.cumsum(rng.exponential(0.1, 100_000)) * 1e9
    b = BackendInstance("gpu-0000", {"m": ModelProfile("m", ms(50), 0)}, now=0, startup_delay=0, q_max=10**7)
    done = drive_open_loop(b, arrivals)
    wait = np.mean([r.queue_time for r in done]) / 1e9
    end = done[-1].t_compute_end
    util = b.utilization(0, end)
    expected = 0.5 * 0.05 / (2 * 0.5)
    ok = len(done) == 100_000 and abs(wait / expected - 1) < 0.05 and abs(util / 0.5 - 1) < 0.02
    verdict(3, "M/D/1 queueing oracle", ok, f"mean wait {wait * 1e3:.2f} ms vs 25 ms; utilization {util:.4f}")


def test_criterion_4_round_robin_fairness():
    loop, fleet, gw = make_stack(ModelProfile("m", ms(50), 0), replicas=4,
                                 gateway_config=GatewayConfig(max_concurrent_connections=10**5), q_max=10**5)
    recs = [gw.route(InferenceRequest(i, "m", 1)) for i in range(10_000)]
    counts = Counter(r.backend_id for r in recs if r.outcome is Outcome.OK)
    ok = len(counts) == 4 and all(abs(c - 2500) <= 1 for c in counts.values())
    verdict(4, "round-robin fairness", ok, f"counts {sorted(counts.values())}")


def test_criterion_5_rate_limit_safety(fuzz_runs):
    peak, events, sweep_peak = 0, 0, 0
    for res in fuzz_runs:
        log = res.gateway_events
        events += len(log)
        if log:
            peak = max(peak, max(n for _, n in log))
        # independent reconstruction from the records themselves
        edges = []
        for r in res.records:
            if r.outcome is Outcome.OK:
                edges += [(r.t_gateway_in, 1), (r.t_compute_end, -1)]
        n = 0
        for _, d in sorted(edges, key=lambda e: (e[0], e[1])):
            n += d
            sweep_peak = max(sweep_peak, n)
    ok = events > 0 and peak <= 5 and sweep_peak <= 5
    verdict(5, "rate-limit safety", ok, f"{len(fuzz_runs)} fuzzed schedules, {events} events, peak in-flight {peak}")


def test_criterion_6_breakdown_conservation(default_run, comparison, fuzz_runs):
    runs = [default_run[0], *comparison[1], *fuzz_runs]
    checked = bad = 0
    for res in runs:
        for r in res.records:
            if r.outcome is Outcome.OK:
                checked += 1
                parts = (r.network_time, r.queue_time, r.compute_time)
                if r.total_time != sum(parts) or min(parts) < 0:
                    bad += 1
    verdict(6, "latency breakdown conservation", checked > 0 and bad == 0, f"{checked} ok records, {bad} violations")


def test_criterion_7_protocol():
    golden = bytes.fromhex("53 53 49 50 01 01 00 03 61 62 63 00 01 6D 00 00 00 04 00 00 00 00")
    golden_ok = encode_message(Request(b"abc", "m", 4)) == golden
    rng = random.Random(7)
    round_trip_fail = 0
    for _ in range(100_000):
        if rng.random() < 0.5:
            m = Request(rng.randbytes(rng.randrange(16)), "".join(rng.choice("mdl_é0") for _ in range(rng.randrange(12))),
                        rng.randrange(1, 2**32), rng.randbytes(rng.randrange(32)))
        else:
            m = Response(Status(rng.randrange(5)), rng.randrange(2**64), rng.randrange(2**64), rng.randbytes(rng.randrange(32)))
        round_trip_fail += decode_message(encode_message(m)) != m
    crashes = decoded = 0
    for i in range(100_000):
        if i % 2:
            data = rng.randbytes(rng.randrange(48))
        else:
            # mutate a valid frame so the fuzz reaches past the header checks
            data = bytearray(golden)
            for _ in range(rng.randrange(1, 4)):
                data[rng.randrange(len(data))] = rng.randrange(256)
            data = bytes(data[: rng.randrange(len(data) + 1)])
        try:
            decode_message(data)
            decoded += 1
        except DecodeError:
            pass
        except Exception:  # noqa: BLE001
            crashes += 1
    ok = golden_ok and round_trip_fail == 0 and crashes == 0
    verdict(7, "protocol golden bytes and fuzz", ok,
            f"golden {golden_ok}; 1e5 round trips, {round_trip_fail} mismatches; 1e5 fuzzed, {crashes} crashes")


def test_criterion_8_determinism(default_run, tmp_path):
    a = write_run(default_run[0], tmp_path / "a", figures=False)
    b = write_run(run_virtual(default_config()), tmp_path / "b", figures=False)
    same = {name: (a / name).read_bytes() == (b / name).read_bytes() for name in ("timeseries.csv", "summary.json")}
    verdict(8, "determinism", all(same.values()), ", ".join(f"{k} identical: {v}" for k, v in same.items()))


def test_criterion_9_autoscaler_law():
    def brute(current, ratio, tol, lo, hi):
        if 1 - tol <= ratio <= 1 + tol:
            d = current
        else:
            want = current * ratio
            d = int(want) if want == int(want) else int(want) + 1
        # clamped in both branches so bounds hold after every reconcile
        return min(hi, max(lo, d))

    cases = mismatches = 0
    for lo, hi in ((1, 10), (2, 8), (3, 3)):
        for current in range(1, 11):
            for ratio in (0.1, 0.5, 0.95, 1.05, 3, 9):
                cases += 1
                got = desired_replicas(current, ratio * ms(100), ms(100), 0.10, lo, hi)
                mismatches += got != brute(current, ratio, 0.10, lo, hi)
    verdict(9, "autoscaler unit laws", mismatches == 0, f"{cases} grid points, {mismatches} mismatches")
