"""Command-line entry point: ``deene collect | solve | run | bench | plot-data``.

Exit status is 0 on success, 2 on a configuration error and 3 on a solver
failure. ``DEENE_OUTPUT_DIR`` redirects every output to one directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .deepc import InitialWindow, dump_problem_json, reference_window
from .errors import (
    ConfigurationError,
    DeePCError,
    InfeasibleError,
    InvalidArgumentError,
    NonConvergenceError,
    NotPositiveDefiniteError,
    SingularKKTError,
)
from .plants import Box
from .signal_data import load_trajectories

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3

_SOLVER_ERRORS = (DeePCError, InfeasibleError, NonConvergenceError, SingularKKTError, NotPositiveDefiniteError)

logger = logging.getLogger("deene")


def _load_config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    overrides = {}
    if getattr(args, "mode", None):
        overrides.setdefault("controller", {})["mode"] = args.mode
    if getattr(args, "s", None) is not None and args.command == "run":
        overrides.setdefault("controller", {})["s"] = int(args.s)
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("data", {})["seed"] = int(args.seed)
    return cfg.with_overrides(**overrides) if overrides else cfg


def _trajectories(args, cfg):
    if getattr(args, "data", None):
        return load_trajectories(args.data, cfg.plant.get("sample_period", 1.0))
    return None


def _parse_s_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"--s expects comma-separated integers, got {text!r}") from exc


def cmd_collect(args) -> int:
    cfg = _load_config(args)
    trajs = harness.collect_data(cfg)
    target = harness.output_path(args.out, is_dir=not str(args.out).endswith(".json"))
    path = harness.save_dataset(target, trajs)
    print(f"wrote {len(trajs)} trajectories to {path}")
    return EXIT_OK


def cmd_solve(args) -> int:
    """One DeePC solve for the window at the end of the first data trajectory."""
    cfg = _load_config(args)
    exp = harness.prepare(cfg, _trajectories(args, cfg))
    part, T_ini = exp.partition, exp.problem.config.T_ini
    first = exp.trajectories[0]
    w = InitialWindow.from_samples(first.inputs[-T_ini:], first.outputs[-T_ini:])
    r = reference_window(exp.reference, 0, exp.problem.config.N)
    sol = exp.problem.solve(w.w_ini, r)
    out = harness.output_path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_problem_json(out, exp.problem, w.w_ini, r, sol)
    print(f"L={part.L} objective={sol.objective:.6g} active={len(sol.active_set)} -> {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    exp = harness.prepare(cfg, _trajectories(args, cfg))
    trace = harness.run_experiment(exp)
    out = harness.output_path(args.out, is_dir=True)
    out.mkdir(parents=True, exist_ok=True)
    trace.to_csv(out / "trace.csv")
    trace.save_summary_json(out / "summary.json", cfg.rmse_channels)
    sm = trace.summary(cfg.rmse_channels)
    print(json.dumps({k: sm[k] for k in ("mode", "s", "rmse_all", "median_loop_seconds", "fallback_count")}))
    if trace.aborted:
        print(f"controller aborted: {trace.error}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    s_values = _parse_s_list(args.s) if args.s is not None else [int(cfg.controller.get("s", 0))]
    report = harness.run_benchmark(cfg, s_values, trajectories=_trajectories(args, cfg))
    out = harness.output_path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save_json(out)
    md = report.to_markdown()
    if args.markdown:
        harness.output_path(args.markdown).write_text(md)
    print(md, end="")
    failed = [r for r in report.rows if r.failed]
    for r in failed:
        print(f"row {r.controller} s={r.s} failed: {r.error}", file=sys.stderr)
    return EXIT_SOLVER if failed else EXIT_OK


def cmd_plot_data(args) -> int:
    if (args.trace is None) == (args.report is None):
        raise ConfigurationError("give exactly one of --trace or --report")
    out = harness.output_path(args.out, is_dir=True)
    if args.report:
        source = harness.BenchmarkReport.from_dict(json.loads(Path(args.report).read_text()))
        files = harness.emit_plot_data(source, out)
    else:
        box = face = None
        if args.box:
            doc = json.loads(Path(args.box).read_text())
            box = Box(doc["lo"], doc["hi"], doc.get("channels", (0, 1)))
            if "face" in doc:
                f = doc["face"]
                face = harness.SeparatingFace(int(f["channel"]), float(f["sign"]), float(f["bound"]))
        files = harness.emit_plot_data(args.trace, out, box=box, face=face)
    for f in files:
        print(f)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deene", description="DeePC and neighboring-extremal benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="run the data-collection campaign")
    p.add_argument("--config")
    p.add_argument("--out", default="data")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("solve", help="solve one DeePC problem and dump it as JSON")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out", default="solution.json")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="run one closed loop")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--mode", choices=("deepc", "deene"))
    p.add_argument("--s", type=int)
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="compare DeePC and DeeNE over open-loop lengths")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--s", help="comma-separated open-loop lengths, e.g. 0,10,20")
    p.add_argument("--report", default="report.json")
    p.add_argument("--markdown")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("plot-data", help="write CSV series behind the figures")
    p.add_argument("--trace")
    p.add_argument("--report")
    p.add_argument("--box")
    p.add_argument("--out", default="figs")
    p.set_defaults(func=cmd_plot_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, InvalidArgumentError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
