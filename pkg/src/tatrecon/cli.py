"""Command line: ``tatrecon {validate,run,metrics,plot,list}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys


def _threads(n: int | None) -> None:
    if n:
        for var in ("OMP_NUM_THREADS", "NUMBA_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tatrecon", description="Microlocal reconstruction scenarios.")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("config", help="scenario JSON path or bundled scenario name")
        sp.add_argument("--threads", type=int, default=None, help="thread count for numeric kernels")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("validate", help="parse a scenario and run the pre-compute checks")
    common(sp)
    sp = sub.add_parser("run", help="run a scenario end to end")
    common(sp)
    sp.add_argument("-o", "--output", default=None, help="artifact directory (default runs/<name>)")
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--plots", action="store_true", help="also write the figures")
    sp = sub.add_parser("metrics", help="recompute edge metrics from an artifact directory")
    sp.add_argument("directory")
    sp.add_argument("--config", default=None, help="override the config saved in the directory")
    common(sp, config=False)
    sp = sub.add_parser("plot", help="write figures for an artifact directory")
    sp.add_argument("directory")
    common(sp, config=False)
    sp = sub.add_parser("list", help="list bundled scenarios")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _threads(getattr(args, "threads", None))
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(message)s")
    from . import harness

    if args.verb == "list":
        for name in harness.bundled_scenarios():
            print(name)
        return 0
    if args.verb == "validate":
        try:
            sc = harness.validate(args.config)
        except harness.ScenarioError as exc:
            print(f"validation failure: {exc}", file=sys.stderr)
            return harness.EXIT_VALIDATION
        print(json.dumps({"scenario": sc.name, "status": "ok", **{k: float(v) for k, v in sc.derived.items()}},
                         indent=2))
        return 0
    if args.verb == "run":
        status, out = harness.run_scenario(args.config, args.output, args.seed)
        if status == harness.EXIT_VALIDATION:
            try:
                harness.validate(args.config)
            except harness.ScenarioError as exc:
                print(f"validation failure: {exc}", file=sys.stderr)
            return status
        if args.plots:
            harness.export_plots(out)
        summary = json.loads((out / "summary.json").read_text())
        print(json.dumps({k: summary.get(k) for k in ("scenario", "status", "passed", "edges", "error")
                          if k in summary}, indent=2))
        print(f"artifacts in {out}")
        return status
    if args.verb == "metrics":
        try:
            rep = harness.metrics_from_dir(args.directory, args.config)
        except (FileNotFoundError, harness.ScenarioError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        print(json.dumps(rep, indent=2))
        return 0
    if args.verb == "plot":
        images, warnings = harness.export_plots(args.directory)
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)
        for im in images:
            print(im)
        return 0
    return 1


if __name__ == "__main__":
    sys.exit(main())
