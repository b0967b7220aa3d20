"""Command line entry point: ``fairmatch <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import harness, theory
from .harness import ExperimentConfig, PolicySpec
from .instance import Instance
from .lp_benchmark import GROUPED, HOMOGENEOUS, solve_benchmark


def parse_params(text: Optional[str]) -> Dict[str, Any]:
    """``k=v;k=v`` with JSON values (bare words stay strings)."""
    out: Dict[str, Any] = {}
    if not text:
        return out
    for part in text.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ValueError(f"parameter {part!r} is not key=value")
        k, v = part.split("=", 1)
        try:
            out[k.strip()] = json.loads(v)
        except json.JSONDecodeError:
            out[k.strip()] = v.strip()
    return out


def load_instance_arg(text: str) -> Instance:
    """A JSON instance file, or ``builder:k=v;k=v`` such as ``central_star:n=100``."""
    path = Path(text)
    if path.exists():
        return Instance.load(path)
    name, _, params = text.partition(":")
    if name in harness.BUILDERS:
        return harness.BUILDERS[name](**parse_params(params))
    raise SystemExit(f"no instance file or builder named {text!r}")


def _open_out(path: Optional[str]):
    return open(path, "w", newline="") if path else sys.stdout


def cmd_solve_lp(args) -> int:
    inst = load_instance_arg(args.instance)
    sol = solve_benchmark(inst, args.variant)
    print(f"s*={sol.s_star!r}")
    if args.x or args.out:
        fh = _open_out(args.out)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "x"])
        for (i, j) in sorted(sol.x):
            w.writerow([i, j, repr(float(sol.x[i, j]))])
        if fh is not sys.stdout:
            fh.close()
    return 0


def _theory_reports(fn: str, p: Dict[str, Any]) -> List[theory.BoundReport]:
    R = theory.BoundReport
    if fn == "g":
        return [R("g", p, theory.g(int(p["b"]), float(p.get("s", 1.0))), "exact"),
                theory.g_tail_bounds(int(p["b"]), float(p.get("s", 1.0)))]
    if fn == "h":
        return [R("h", p, theory.h(float(p["lam"]), float(p.get("s", 1.0))), "exact")]
    if fn == "f":
        b, L = int(p.get("b", 1)), float(p.get("Lambda", 1.0))
        return [R("fcfs_fair_b_ratio", p, theory.fcfs_fair_b_ratio(b, L), "lower_bound")]
    if fn == "ode":
        lam = float(p.get("lam", 1.0))
        return [R("ode_competitive_ratio", p, theory.ode_competitive_ratio(lam), "upper_bound")]
    if fn == "bounds":
        return theory.prob_reject_bounds(float(p["b"]), float(p["Lambda"]))
    raise ValueError(fn)


def cmd_theory(args) -> int:
    reports = _theory_reports(args.fn, parse_params(args.params))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(theory.CSV_HEADER)
    for r in reports:
        w.writerow(r.as_row())
    return 0


def cmd_simulate(args) -> int:
    inst = load_instance_arg(args.instance)
    cfg = ExperimentConfig(
        instance={"inline": True}, policies=[PolicySpec(args.policy, parse_params(args.params))],
        objective=args.objective, trials=args.trials, inner=args.inner, seed=args.seed, out=args.out,
    )
    bench = harness._benchmark(inst, cfg.objective)
    row = harness.run_cell(inst, cfg.policies[0], cfg, bench)
    row["instance_label"] = inst.label or args.instance
    text = harness.results_csv([row])
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 1 if row["error"] else 0


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = args.out or cfg.out
    rows = harness.run_sweep(cfg, base_dir=Path(args.config).resolve().parent)
    if out:
        harness.write_results(rows, out)
    else:
        sys.stdout.write(harness.results_csv(rows))
    return 0


def cmd_ingest(args) -> int:
    records, skipped = harness.read_trips(args.trips)
    inst = harness.ingest_trips(records, args.window, args.top_k, args.days, args.grouping)
    inst.metadata["skipped_rows"] = skipped
    inst.save(args.out)
    print(f"{inst.num_agents} agents, {inst.num_types} types, {inst.num_groups} groups -> {args.out}")
    return 0


def cmd_synth_trips(args) -> int:
    recs = harness.synthetic_trips(args.areas, args.days, args.seed, args.daily_trips)
    harness.write_trips(recs, args.out)
    print(f"{len(recs)} trips -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fairmatch", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve-lp", help="solve the benchmark LP and print s*")
    p.add_argument("--instance", required=True, help="instance JSON or builder:k=v;...")
    p.add_argument("--variant", choices=[HOMOGENEOUS, GROUPED], default=None)
    p.add_argument("--x", action="store_true", help="also print x* as CSV (i,j,x)")
    p.add_argument("--out", help="write x* CSV here")
    p.set_defaults(func=cmd_solve_lp)

    p = sub.add_parser("theory", help="evaluate a closed form or bound")
    p.add_argument("--fn", required=True, choices=["g", "h", "f", "ode", "bounds"])
    p.add_argument("--params", default="", help="k=v;k=v, e.g. b=3;s=1.5")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="estimate one policy's fairness")
    p.add_argument("--instance", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--params", default="", help="policy parameters k=v;k=v")
    p.add_argument("--objective", choices=["fair-a", "fair-b"], default="fair-a")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--inner", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ingest", help="build an instance from a trips CSV")
    p.add_argument("--trips", required=True)
    p.add_argument("--window", default="18:00-19:00")
    p.add_argument("--top-k", type=int, default=484)
    p.add_argument("--days", type=int, default=None, help="default: distinct dates in the window")
    p.add_argument("--grouping", choices=["homogeneous", "destination"], default="homogeneous")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth-trips", help="write a synthetic trips CSV")
    p.add_argument("--areas", type=int, default=8)
    p.add_argument("--days", type=int, default=30)
    p.add_argument("--daily-trips", type=float, default=400.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth_trips)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        print(f"fairmatch: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
