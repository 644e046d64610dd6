"""Experiment configuration: YAML file -> validated ExperimentConfig.

Every key is optional except `schedule`; unknown keys are rejected so a
misspelled knob fails loudly instead of silently running with a default.
Durations in the file are seconds (`*_s` keys); internally everything is ns.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from ..autoscaler import AutoscalerConfig
from ..backend import DEFAULT_Q_MAX, DEFAULT_STARTUP_DELAY
from ..core.clock import seconds
from ..core.errors import InvalidArgument
from ..core.types import ModelProfile
from ..gateway import GatewayConfig
from ..loadgen import ClientSpec, PhaseSchedule, calibrate


class ConfigError(ValueError):
    def __init__(self, key: str, message: str) -> None:
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class BackendConfig:
    q_max: int = DEFAULT_Q_MAX
    startup_delay: int = DEFAULT_STARTUP_DELAY


@dataclass(frozen=True)
class ExperimentConfig:
    schedule: PhaseSchedule
    models: tuple[ModelProfile, ...]
    mode: str = "virtual"
    seed: int = 0
    compression: float = 20.0
    network_latency: int = 0
    sample_interval: int = seconds(1)
    backend: BackendConfig = field(default_factory=BackendConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    autoscaler: AutoscalerConfig | None = None
    static_replicas: int | None = None
    out_dir: str = "out"
    figures: bool = True
    label: str = ""

    def __post_init__(self) -> None:
        if (self.autoscaler is None) == (self.static_replicas is None):
            raise ConfigError("autoscaler", "set exactly one of autoscaler / static_replicas")
        if self.static_replicas is not None and self.static_replicas < 1:
            raise ConfigError("static_replicas", "must be >= 1")
        if self.mode not in ("virtual", "wallclock"):
            raise ConfigError("mode", f"expected virtual|wallclock, got {self.mode!r}")
        if self.schedule.client.model not in {m.name for m in self.models}:
            raise ConfigError("schedule.client.model", f"unknown model {self.schedule.client.model!r}")
        if self.sample_interval <= 0:
            raise ConfigError("sample_interval_s", "must be positive")

    @property
    def profiles(self) -> dict[str, ModelProfile]:
        return {m.name: m for m in self.models}

    @property
    def dynamic(self) -> bool:
        return self.autoscaler is not None

    @property
    def initial_replicas(self) -> int:
        return self.autoscaler.min_replicas if self.autoscaler else self.static_replicas

    def with_static(self, n: int) -> "ExperimentConfig":
        return replace(self, autoscaler=None, static_replicas=n, label=f"static-{n}")


# ---- parsing -------------------------------------------------------------

_TOP = {
    "mode", "seed", "compression", "network_latency_s", "sample_interval_s", "models",
    "backend", "gateway", "autoscaler", "static_replicas", "schedule", "output", "label",
}
_MODEL = {"name", "base_time_s", "per_item_time_s", "jitter_sigma"}
_BACKEND = {"q_max", "startup_delay_s"}
_GATEWAY = {"auth_enabled", "tokens", "max_concurrent_connections", "external_metric_limit", "listen_address"}
_EXTERNAL = {"metric", "threshold"}
_AUTOSCALER = {
    "target_queue_latency_s", "min_replicas", "max_replicas", "poll_interval_s",
    "tolerance", "downscale_stabilization_s", "metric_window_s",
}
_SCHEDULE = {"phases", "client"}
_PHASE = {"duration_s", "clients"}
_CLIENT = {"model", "batch_size", "think_time_s", "token", "payload_size"}
_OUTPUT = {"dir", "figures"}

EXTERNAL_METRICS = ("avg_queue_latency_s",)


def _section(raw: Any, key: str, allowed: set[str]) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(key, "expected a mapping")
    for k in raw:
        if k not in allowed:
            raise ConfigError(f"{key}.{k}" if key else str(k), "unknown key")
    return raw


def _num(d: dict, key: str, path: str, default: Any, kind=float, minimum: float | None = None) -> Any:
    v = d.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected a number, got {v!r}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(f"{path}.{key}" if path else key, f"expected an integer, got {v!r}")
        v = int(v)
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}.{key}" if path else key, f"must be >= {minimum}")
    return v


def _dur(d: dict, key: str, path: str, default_ns: int) -> int:
    v = _num(d, key, path, None, minimum=0)
    return default_ns if v is None else seconds(v)


def parse_config(raw: Any) -> ExperimentConfig:
    top = _section(raw, "", _TOP)
    if "schedule" not in top:
        raise ConfigError("schedule", "required")

    models = []
    raw_models = top.get("models") or [{"name": "model", "base_time_s": 0.040, "per_item_time_s": 0.001}]
    if not isinstance(raw_models, list):
        raise ConfigError("models", "expected a list")
    for i, m in enumerate(raw_models):
        path = f"models[{i}]"
        m = _section(m, path, _MODEL)
        if "name" not in m:
            raise ConfigError(f"{path}.name", "required")
        try:
            models.append(
                ModelProfile(
                    str(m["name"]),
                    _dur(m, "base_time_s", path, 0),
                    _dur(m, "per_item_time_s", path, 0),
                    float(_num(m, "jitter_sigma", path, 0.0, minimum=0)),
                )
            )
        except InvalidArgument as e:
            raise ConfigError(path, str(e)) from None

    b = _section(top.get("backend"), "backend", _BACKEND)
    backend = BackendConfig(
        q_max=_num(b, "q_max", "backend", DEFAULT_Q_MAX, int, 1),
        startup_delay=_dur(b, "startup_delay_s", "backend", DEFAULT_STARTUP_DELAY),
    )

    g = _section(top.get("gateway"), "gateway", _GATEWAY)
    tokens = g.get("tokens") or []
    if not isinstance(tokens, list):
        raise ConfigError("gateway.tokens", "expected a list of strings")
    ext = g.get("external_metric_limit")
    ext_limit = None
    if ext is not None:
        ext = _section(ext, "gateway.external_metric_limit", _EXTERNAL)
        name = ext.get("metric")
        if name not in EXTERNAL_METRICS:
            raise ConfigError("gateway.external_metric_limit.metric", f"expected one of {EXTERNAL_METRICS}")
        thr = _num(ext, "threshold", "gateway.external_metric_limit", None, minimum=0)
        if thr is None:
            raise ConfigError("gateway.external_metric_limit.threshold", "required")
        ext_limit = (name, float(thr))
    try:
        gateway = GatewayConfig(
            auth_enabled=bool(g.get("auth_enabled", False)),
            valid_tokens=frozenset(str(t).encode() for t in tokens),
            max_concurrent_connections=_num(g, "max_concurrent_connections", "gateway", 100, int, 1),
            external_metric_limit=ext_limit,
            listen_address=str(g.get("listen_address", "127.0.0.1:0")),
        )
    except InvalidArgument as e:
        raise ConfigError("gateway", str(e)) from None

    autoscaler = None
    if top.get("autoscaler") is not None:
        a = _section(top["autoscaler"], "autoscaler", _AUTOSCALER)
        d = AutoscalerConfig()
        try:
            autoscaler = AutoscalerConfig(
                target_queue_latency=_dur(a, "target_queue_latency_s", "autoscaler", d.target_queue_latency),
                min_replicas=_num(a, "min_replicas", "autoscaler", d.min_replicas, int, 1),
                max_replicas=_num(a, "max_replicas", "autoscaler", d.max_replicas, int, 1),
                poll_interval=_dur(a, "poll_interval_s", "autoscaler", d.poll_interval),
                tolerance=float(_num(a, "tolerance", "autoscaler", d.tolerance, minimum=0)),
                downscale_stabilization=_dur(a, "downscale_stabilization_s", "autoscaler", d.downscale_stabilization),
                metric_window=_dur(a, "metric_window_s", "autoscaler", d.metric_window),
            )
        except InvalidArgument as e:
            raise ConfigError("autoscaler", str(e)) from None

    s = _section(top["schedule"], "schedule", _SCHEDULE)
    raw_phases = s.get("phases")
    if not isinstance(raw_phases, list) or not raw_phases:
        raise ConfigError("schedule.phases", "expected a non-empty list")
    phases = []
    for i, p in enumerate(raw_phases):
        path = f"schedule.phases[{i}]"
        p = _section(p, path, _PHASE)
        dur = _num(p, "duration_s", path, None)
        if dur is None or dur <= 0:
            raise ConfigError(f"{path}.duration_s", "required and > 0")
        phases.append((seconds(dur), _num(p, "clients", path, 0, int, 0)))
    c = _section(s.get("client"), "schedule.client", _CLIENT)
    model = str(c.get("model", models[0].name))
    profile = next((m for m in models if m.name == model), None)
    if profile is None:
        raise ConfigError("schedule.client.model", f"unknown model {model!r}")
    batch, think = c.get("batch_size", "auto"), c.get("think_time_s", "auto")
    if batch == "auto" or think == "auto":
        try:
            cal_batch, cal_think = calibrate(profile)
        except InvalidArgument as e:
            raise ConfigError("schedule.client", str(e)) from None
        batch = cal_batch if batch == "auto" else batch
        think_ns = cal_think if think == "auto" else None
    else:
        think_ns = None
    batch = _num({"batch_size": batch}, "batch_size", "schedule.client", None, int, 1)
    if think_ns is None:
        think_ns = _dur({"think_time_s": think}, "think_time_s", "schedule.client", 0)
    client = ClientSpec(
        model=model,
        batch_size=batch,
        think_time=think_ns,
        token=str(c.get("token", "")).encode(),
        payload_size=_num(c, "payload_size", "schedule.client", 0, int, 0),
    )
    schedule = PhaseSchedule(tuple(phases), client)

    o = _section(top.get("output"), "output", _OUTPUT)
    mode = top.get("mode", "virtual")
    return ExperimentConfig(
        schedule=schedule,
        models=tuple(models),
        mode=mode,
        seed=_num(top, "seed", "", 0, int),
        compression=float(_num(top, "compression", "", 20.0, minimum=1e-9)),
        network_latency=_dur(top, "network_latency_s", "", 0),
        sample_interval=_dur(top, "sample_interval_s", "", seconds(1)),
        backend=backend,
        gateway=gateway,
        autoscaler=autoscaler,
        static_replicas=_num(top, "static_replicas", "", None, int, 1),
        out_dir=str(o.get("dir", "out")),
        figures=bool(o.get("figures", True)),
        label=str(top.get("label", "dynamic" if autoscaler is not None else f"static-{top.get('static_replicas')}")),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ConfigError("<file>", f"not valid YAML: {e}") from None
    except OSError as e:
        raise ConfigError("<file>", str(e)) from None
    return parse_config(raw)


DEFAULT_CONFIG = """\
# Experiment config. Durations are seconds; every key below shows its default.
mode: virtual              # virtual | wallclock
seed: 0
compression: 20.0          # wallclock only: virtual seconds per real second
network_latency_s: 0.0     # one-way client<->gateway delay
sample_interval_s: 1.0     # time-series resolution
models:
  - name: model
    base_time_s: 0.040     # per-request GPU overhead
    per_item_time_s: 0.001 # per batch element
    jitter_sigma: 0.0      # lognormal sigma; 0 = deterministic
backend:
  q_max: 1000
  startup_delay_s: 10.0
gateway:
  auth_enabled: false
  tokens: []
  max_concurrent_connections: 100
  external_metric_limit: null   # e.g. {metric: avg_queue_latency_s, threshold: 2.0}
  listen_address: "127.0.0.1:0"
autoscaler:                # omit and set static_replicas for a fixed fleet
  target_queue_latency_s: 0.1
  min_replicas: 1
  max_replicas: 10
  poll_interval_s: 5.0
  tolerance: 0.10
  downscale_stabilization_s: 60.0
  metric_window_s: 30.0
static_replicas: null
schedule:
  phases:
    - {duration_s: 300, clients: 1}
    - {duration_s: 300, clients: 10}
    - {duration_s: 300, clients: 1}
  client:
    model: model
    batch_size: auto       # auto = calibrate: one client fits one GPU, ten do not
    think_time_s: auto
    token: ""
    payload_size: 0
output:
  dir: out
  figures: true
"""


def default_config() -> ExperimentConfig:
    return parse_config(yaml.safe_load(DEFAULT_CONFIG))
