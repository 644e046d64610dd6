"""Prometheus text exposition (format 0.0.4) for a MetricsRegistry."""
from __future__ import annotations

import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from ..core.metrics import HELP, MetricsRegistry

CONTENT_TYPE = "text/plain; version=0.0.4; charset=utf-8"


def _escape(v: str) -> str:
    return v.replace("\\", "\\\\").replace("\n", "\\n").replace('"', '\\"')


def _labels(labels, extra: tuple[tuple[str, str], ...] = ()) -> str:
    items = tuple(labels) + extra
    if not items:
        return ""
    return "{" + ",".join(f'{k}="{_escape(str(v))}"' for k, v in items) + "}"


def _value(v: float) -> str:
    if isinstance(v, int) or (isinstance(v, float) and v.is_integer() and abs(v) < 1e15):
        return str(int(v))
    if math.isinf(v):
        return "+Inf" if v > 0 else "-Inf"
    if math.isnan(v):
        return "NaN"
    return repr(float(v))


def _header(lines: list[str], name: str, kind: str) -> None:
    lines.append(f"# HELP {name} {HELP.get(name, name)}")
    lines.append(f"# TYPE {name} {kind}")


def render(registry: MetricsRegistry) -> str:
    snap = registry.snapshot()
    lines: list[str] = []
    counters = dict(snap["counters"])
    counters.setdefault("requests_total", {})
    for name in sorted(counters):
        _header(lines, name, "counter")
        for labels, v in sorted(counters[name].items()):
            lines.append(f"{name}{_labels(labels)} {_value(v)}")
    for name in sorted(snap["gauges"]):
        _header(lines, name, "gauge")
        for labels, v in sorted(snap["gauges"][name].items()):
            lines.append(f"{name}{_labels(labels)} {_value(v)}")
    for name, (buckets, total, n) in sorted(snap["histograms"].items()):
        _header(lines, name, "histogram")
        if n == 0:
            continue
        for le, c in buckets:
            le_s = "+Inf" if math.isinf(le) else repr(float(le))
            lines.append(f"{name}_bucket{_labels((), (('le', le_s),))} {c}")
        lines.append(f"{name}_sum {_value(total)}")
        lines.append(f"{name}_count {n}")
    return "\n".join(lines) + "\n"


class _Handler(BaseHTTPRequestHandler):
    registry: MetricsRegistry

    def do_GET(self) -> None:  # noqa: N802
        if self.path.split("?")[0] not in ("/metrics", "/"):
            self.send_error(404)
            return
        body = render(self.registry).encode()
        self.send_response(200)
        self.send_header("Content-Type", CONTENT_TYPE)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args) -> None:
        pass


class MetricsServer:
    def __init__(self, httpd: ThreadingHTTPServer) -> None:
        self.httpd = httpd
        self.thread = threading.Thread(target=httpd.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)

    @property
    def address(self) -> tuple[str, int]:
        return self.httpd.server_address[:2]

    def close(self) -> None:
        self.httpd.shutdown()
        self.httpd.server_close()
        self.thread.join(timeout=5)


def serve_metrics(registry: MetricsRegistry, address: tuple[str, int] = ("127.0.0.1", 0)) -> MetricsServer:
    """Serve `render(registry)` at /metrics on a background thread."""
    handler = type("MetricsHandler", (_Handler,), {"registry": registry})
    server = MetricsServer(ThreadingHTTPServer(address, handler))
    server.thread.start()
    return server
