"""Command-line entry point: train, eval, compare, fit-qoe, verify.

Exit codes: 0 success, 1 usage error, 2 data/runtime error, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import __version__, qoe, svgplot, training, verify
from .core import (ConfigError, builtin_scenarios, default_hyperparams,
                   default_qoe_coefficients, default_sim_config, load_config)
from .rl import NonFiniteLossError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _load_config_arg(path: str | None):
    if path is None:
        return default_sim_config(), default_hyperparams(), default_qoe_coefficients()
    return load_config(path)


def _scenario_list(arg: str) -> list[str]:
    names = [s.strip().lower() for s in arg.split(",") if s.strip()]
    known = {s.name for s in builtin_scenarios()}
    for name in names:
        if name not in known:
            raise ConfigError(f"unknown scenario {name!r} (expected s1..s6)")
    if not names:
        raise ConfigError("empty scenario list")
    return names


def cmd_train(args) -> int:
    cfg, hp, coeffs = _load_config_arg(args.config)
    scenarios = _scenario_list(args.scenarios)
    result = training.train(cfg, hp, coeffs, args.method, scenarios,
                            seed=args.seed, out_dir=args.out,
                            episodes=args.episodes)
    last = result.episode_rewards[-min(20, len(result.episode_rewards)):].mean()
    print(f"trained {args.method} for {result.episodes} episodes "
          f"({len(result.overhead)} aggregation rounds); "
          f"mean reward over final episodes: {last:.4f}")
    print(f"artifacts in {result.out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg, hp, coeffs = _load_config_arg(args.config)
    scenarios = _scenario_list(args.scenarios)
    trace_fh = None
    trace = None
    if args.trace:
        trace_fh = open(args.trace, "w", encoding="utf-8", newline="")
        from .netsim import TraceWriter
        trace = TraceWriter(trace_fh)
    try:
        summaries = []
        for scen in scenarios:
            if args.controller:
                summary = training.evaluate_controller(
                    args.controller, scen, args.episodes, args.seed, cfg, hp,
                    coeffs, trace=trace)
            else:
                agents = training.load_checkpoint_agents(args.checkpoint)
                label = args.label or _method_from_manifest(args.checkpoint)
                summary = training.evaluate_agents(
                    agents, scen, args.episodes, args.seed, cfg, hp, coeffs,
                    method=label, trace=trace)
            summaries.append(summary)
            print(f"{summary.method} @ {summary.scenario}: "
                  f"QoE/step {summary.qoe_mean:.4f} +/- {summary.qoe_std:.4f}, "
                  f"QoE/episode {summary.qoe_episode_mean:.4f} +/- "
                  f"{summary.qoe_episode_std:.4f}, latency {summary.latency_ms_mean:.1f} ms, "
                  f"loss {summary.lost_packets_mean:.1f} pkts/step, "
                  f"fps {summary.frame_rate_mean:.1f}")
    finally:
        if trace_fh is not None:
            trace_fh.close()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"eval_{summaries[0].method}.csv"
        training.write_eval_csv(path, summaries)
        print(f"wrote {path}")
    return EXIT_OK


def _method_from_manifest(checkpoint_dir: str) -> str:
    # checkpoint dirs live at <run>/checkpoints/<tag>; the manifest sits at
    # the run root
    for parent in (Path(checkpoint_dir), *Path(checkpoint_dir).parents):
        manifest = parent / training.MANIFEST_FILE
        if manifest.exists():
            try:
                return json.loads(manifest.read_text(encoding="utf-8"))["method"]
            except (ValueError, KeyError):
                return "unknown"
    return "unknown"


def _read_eval_source(path: Path) -> list[dict]:
    """Rows with at least (method, scenario, qoe_mean[, qoe_std])."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"method", "scenario", "qoe_mean"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"{path}: need columns {sorted(required)}, "
                             f"got {reader.fieldnames}")
        for line_no, row in enumerate(reader, start=2):
            try:
                rows.append({
                    "method": row["method"].strip(),
                    "scenario": row["scenario"].strip().lower(),
                    "qoe_mean": float(row["qoe_mean"]),
                    "qoe_std": float(row.get("qoe_std") or 0.0),
                })
            except (ValueError, AttributeError) as exc:
                raise ValueError(f"{path} line {line_no}: {exc}") from None
    return rows


def cmd_compare(args) -> int:
    sources = []
    for raw in args.inputs:
        path = Path(raw)
        if path.is_dir():
            found = sorted(path.rglob("eval_*.csv"))
            if not found:
                raise ValueError(f"{path}: no eval_*.csv files found")
            sources.extend(found)
        else:
            sources.append(path)
    if len(sources) < 2:
        raise ValueError("compare needs at least two eval sources")
    rows = []
    for src in sources:
        rows.extend(_read_eval_source(src))

    methods = sorted({r["method"] for r in rows})
    scenarios = sorted({r["scenario"] for r in rows})
    cells = {(r["method"], r["scenario"]): r["qoe_mean"] for r in rows}
    if not cells:
        raise ValueError("no comparable rows found")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    matrix_path = out / "comparison.csv"
    with open(matrix_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method"] + scenarios)
        for method in methods:
            writer.writerow([method] + [
                repr(cells[(method, s)]) if (method, s) in cells else ""
                for s in scenarios])
    print(f"wrote {matrix_path} ({len(methods)} methods x {len(scenarios)} scenarios)")

    for scen in scenarios:
        series = {m: [cells.get((m, scen))] for m in methods}
        svg = svgplot.grouped_bars([scen], series, f"QoE by method ({scen})")
        svg_path = out / f"compare_{scen}.svg"
        svg_path.write_text(svg, encoding="utf-8")
        print(f"wrote {svg_path}")
    return EXIT_OK


def cmd_fit_qoe(args) -> int:
    records = qoe.load_ratings_csv(args.ratings)
    if args.grid:
        try:
            start, stop, step = (float(v) for v in args.grid.split(":"))
        except ValueError:
            raise ConfigError(f"--grid must be start:stop:step, got {args.grid!r}")
        axis = []
        v = start
        while v <= stop + 1e-12:
            axis.append(round(v, 10))
            v += step
        grid = tuple(tuple(axis) for _ in range(5))
    else:
        grid = qoe.DEFAULT_GRID
    fit = qoe.fit_coefficients(records, grid)
    sens = qoe.coefficient_sensitivity(fit.coefficients, records)

    report = {
        "records": len(records),
        "grid": [list(axis) for axis in fit.grid],
        "coefficients": {k: getattr(fit.coefficients, k)
                         for k in ("alpha", "beta", "gamma", "delta1", "delta2")},
        "rmse": fit.rmse,
        "r_squared": fit.r_squared,
        "mos_scale": fit.scale,
        "mos_offset": fit.offset,
        "sensitivity": {
            "baseline_rmse": sens.baseline_rmse,
            "per_coefficient_rmse_at_minus20_plus20": {
                k: list(v) for k, v in sens.perturbed.items()},
            "mean_abs_rmse_change": sens.mean_abs_change,
            "mean_rel_rmse_change": sens.mean_rel_change,
        },
    }
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "qoe_fit.json").write_text(text, encoding="utf-8")
        print(f"wrote {out / 'qoe_fit.json'}")
    c = fit.coefficients
    print(f"fitted weights: alpha={c.alpha} beta={c.beta} gamma={c.gamma} "
          f"delta1={c.delta1} delta2={c.delta2}")
    print(f"rmse={fit.rmse:.4f} r_squared={fit.r_squared:.4f}")
    if sens.mean_rel_change is not None:
        print(f"sensitivity: mean |rmse change| at +/-20% = "
              f"{100 * sens.mean_rel_change:.1f}% of baseline")
    else:
        print("sensitivity: baseline rmse is 0; absolute changes reported in the report")
    return EXIT_OK


def cmd_verify(args) -> int:
    failures = 0

    def report(result: verify.CheckResult) -> None:
        nonlocal failures
        tag = "PASS" if result.passed else "FAIL"
        print(f"[{tag}] {result.name}: {result.detail}")
        if not result.passed:
            failures += 1

    only = args.only.split(",") if args.only else None
    results = verify.run_checks(seed=args.seed, full=args.full, only=only,
                                report=report)
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return EXIT_OK if failures == 0 else EXIT_VERIFY


def build_parser() -> _Parser:
    parser = _Parser(prog="asms", description=__doc__)
    parser.add_argument("--version", action="version", version=f"asms {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a training experiment")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--method", choices=training.METHODS, default="fmappo")
    p.add_argument("--scenarios", default="s1,s2,s3,s4,s5,s6",
                   help="comma-separated scenario names (default all six)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, help="override the configured episode count")
    p.add_argument("--out", required=True, help="run directory for artifacts")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or rule controller")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", help="checkpoint directory (e.g. run/checkpoints/final)")
    group.add_argument("--controller", choices=("delay", "probe", "random"))
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--scenarios", default="s1", help="comma-separated scenario names")
    p.add_argument("--episodes", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label", help="method label for reports (default: run manifest)")
    p.add_argument("--trace", help="write a per-step trace CSV to this path")
    p.add_argument("--out", help="directory for the eval summary CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="align eval results into a table and charts")
    p.add_argument("inputs", nargs="+",
                   help="run directories or eval/external CSV files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("fit-qoe", help="grid-search QoE weights against ratings")
    p.add_argument("--ratings", required=True, help="ratings CSV")
    p.add_argument("--grid", help="start:stop:step applied to all five weights")
    p.add_argument("--out", help="directory for the fit report")
    p.set_defaults(func=cmd_fit_qoe)

    p = sub.add_parser("verify", help="run the oracle and invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full", action="store_true",
                   help="include the minutes-scale learning-behavior checks")
    p.add_argument("--only", help="comma-separated name filters")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, NonFiniteLossError) as exc:
        print(f"asms: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
