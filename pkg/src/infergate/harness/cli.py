"""Command line entry point: `infergate run` and `infergate compare`.

Exit codes: 0 success, 1 config error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import DEFAULT_CONFIG, ConfigError, load_config

log = logging.getLogger("infergate")


def _parse_static(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("--static", f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise ConfigError("--static", "replica counts must be >= 1")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="infergate", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--mode", choices=("virtual", "wallclock"))
    run.add_argument("--no-figures", action="store_true")

    cmp_ = sub.add_parser("compare", help="dynamic config vs. static fleets")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--static", default="1,2,5,10")
    cmp_.add_argument("--out", required=True)
    cmp_.add_argument("--seed", type=int)
    cmp_.add_argument("--no-figures", action="store_true")

    sub.add_parser("default-config", help="print the default config file")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.cmd == "default-config":
        sys.stdout.write(DEFAULT_CONFIG)
        return 0
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if getattr(args, "mode", None):
            cfg = dataclasses.replace(cfg, mode=args.mode)
        statics = _parse_static(args.static) if args.cmd == "compare" else []
        if args.cmd == "compare" and cfg.autoscaler is None:
            raise ConfigError("autoscaler", "compare needs a config with an autoscaler block")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1

    from .experiment import compare, run_experiment
    from .report import write_comparison, write_run

    try:
        if args.cmd == "run":
            res = run_experiment(cfg)
            out = write_run(res, args.out, figures=cfg.figures and not args.no_figures)
            s = res.summary
            print(
                f"{s['label']}: mean latency {s['mean_end_to_end_latency_s']} s, "
                f"utilization {s['mean_gpu_utilization']}, replica-seconds {s['replica_seconds']} -> {out}"
            )
        else:
            configs = [dataclasses.replace(cfg, label="dynamic")] + [cfg.with_static(n) for n in statics]
            rows, results = compare(configs)
            out = write_comparison(rows, results, args.out, figures=cfg.figures and not args.no_figures)
            for r in rows:
                print(f"{r['label']:>10}  latency {r['mean_latency_s']!s:>12} s  util {r['mean_gpu_utilization']!s:>12}  "
                      f"replica-s {r['replica_seconds']}")
            print(f"-> {out}")
    except Exception as e:  # noqa: BLE001
        log.exception("run failed")
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
