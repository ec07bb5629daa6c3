"""Command-line front end: ``anosov-lab <command> --config run.yaml``."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import load_config
from .errors import AnosovLabError
from .export import export_pipeline
from .pipeline import COMMANDS, Pipeline
from .plotting import plot_pipeline

OUTPUT_ENV = "ANOSOV_LAB_OUTPUT"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_UNRESOLVED = 2


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="anosov-lab",
        description=(
            "Chain recurrence, laminations and global sections for discretized "
            "partially hyperbolic maps of mapping tori of T^2."
        ),
        epilog=(
            f"Exit status: 0 success, 2 unresolved at the current resolution, 1 error. "
            f"The output directory is --output, else ${OUTPUT_ENV}, else the config's 'output'."
        ),
    )
    p.add_argument("command", choices=COMMANDS, help="stage to run (prerequisite stages run first)")
    p.add_argument("--config", "-c", default=None, help="YAML run configuration (defaults: k=2 sinusoidal roof)")
    p.add_argument("--output", "-o", default=None, help="output directory (overrides the env var and config)")
    p.add_argument("--threads", type=int, default=None, help="cap on numba worker threads")
    p.add_argument("--no-plots", action="store_true", help="skip the SVG slices")
    p.add_argument("--quiet", "-q", action="store_true", help="do not print the summary line")
    return p


def _output_dir(args, cfg) -> Path:
    if args.output:
        return Path(args.output)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    return Path(cfg.output)


def _summary(report: dict) -> str:
    keys = ("terminal_classes", "laminations", "L", "epsilon", "verdict")
    parts = [f"{k}={report[k]}" for k in keys if k in report]
    return f"{report.get('command')}: " + " ".join(parts)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        import numba

        numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    pipe = None
    try:
        cfg = load_config(args.config)
        out = _output_dir(args, cfg)
        pipe = Pipeline(cfg)
        pipe.run(args.command)
        export_pipeline(pipe, out)
        if not args.no_plots:
            plot_pipeline(pipe, out)
    except (AnosovLabError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if pipe is not None and isinstance(exc, AnosovLabError):
            # keep what the completed stages computed, with the failure recorded
            pipe.report["error"] = {"type": type(exc).__name__, "message": str(exc)}
            try:
                export_pipeline(pipe, out)
            except OSError:
                pass
        return EXIT_ERROR
    if not args.quiet:
        print(_summary(pipe.report))
    code = pipe.exit_code()
    if code == EXIT_UNRESOLVED:
        print(f"unresolved at resolution: {pipe.report.get('verdict_details', {}).get('advice', 'refine the grid')}",
              file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
