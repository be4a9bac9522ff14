"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 run aborted on a singularity,
4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import catalog
from .constraints import Consolidation
from .expressions import ExpressionError
from .oracle import (GridSpec, alpha_star_series, check_boundedness_sampled,
                     critical_point_scan, fd_validate, non_maximum_critical_points)
from .plotting import KINDS, PlotUsageError, emit_plot
from .scenario_io import (build_constraints, build_scenario, emit_trace, load_document,
                          parse_patch, read_oracle_csv, read_trace, write_oracle_csv)
from .sim import ScenarioError, run_closed_loop, sweep

EXIT_OK, EXIT_VALIDATION, EXIT_ABORTED, EXIT_IO = 0, 2, 3, 4


class UsageError(Exception):
    pass


def _document(ref: str):
    """Scenario document from a file path or a builtin scenario name."""
    if ref in catalog.SCENARIOS and not Path(ref).exists():
        return catalog.scenario_document(ref)
    return load_document(ref)


def _target(ref: str):
    """``(consolidation, box, t_range, doc)`` for a scenario or a builtin set."""
    if ref in catalog.set_names():
        cs = catalog.catalog_set(ref)
        return cs.consolidation(), cs.box, cs.t_range, None
    doc = _document(ref)
    s = build_scenario(doc)
    if "oracle" not in doc:
        raise UsageError(f"{ref}: the scenario has no oracle section (box)")
    box = tuple(tuple(b) for b in doc["oracle"]["box"])
    return s.consolidation, box, (0.0, s.integration.horizon), doc


def cmd_simulate(args) -> int:
    s = build_scenario(_document(args.scenario))
    trace = run_closed_loop(s)
    paths = emit_trace(trace, args.out)
    status = trace.metadata.get("status", "completed")
    print(f"{s.name}: {status}, {len(trace)} rows -> {paths['trace']}")
    for t, kind, detail in trace.events:
        print(f"  t={t:.6g} {kind}: {detail}")
    return EXIT_ABORTED if trace.aborted else EXIT_OK


def _grid(args, box, doc) -> GridSpec:
    orc = (doc or {}).get("oracle", {})
    res = args.grid if args.grid is not None else orc.get("resolution", 201)
    polish = args.polish if args.polish is not None else orc.get("polish_steps", 50)
    return GridSpec(box, resolution=res, polish_steps=polish)


def cmd_oracle(args) -> int:
    cons, box, t_range, doc = _target(args.scenario)
    grid = _grid(args, box, doc)
    t0, t1 = t_range
    times = np.round(np.arange(t0, t1 + 0.5 * args.dt, args.dt), 12)
    a_star, argmax, abar_star, _ = alpha_star_series(cons, times, grid)
    write_oracle_csv(args.out, times, a_star, argmax, abar_star)
    bad = int(np.count_nonzero(abar_star < 0.0))
    print(f"{len(times)} times -> {args.out}; infeasible at {bad}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cons, box, t_range, _ = _target(args.scenario)
    fd = fd_validate(cons, box, t_range, samples=args.samples, seed=args.seed)
    print("derivatives: " + ", ".join(f"{k} max rel {v:.2e}" for k, v in fd.max_rel.items()))
    for f in fd.failures:
        print(f"  FAIL {f}")
    t = t_range[0]
    center = np.array([0.5 * (lo + hi) for lo, hi in box])
    span = max(hi - lo for lo, hi in box)
    bnd = check_boundedness_sampled(cons, t, [span, 10 * span, 100 * span], center=center)
    print(f"boundedness (t={t:g}): {bnd.summary()}")
    pts = critical_point_scan(cons, t, GridSpec(box, resolution=args.grid))
    bad = non_maximum_critical_points(pts)
    print(f"critical points (t={t:g}): {len(pts)} found, {len(bad)} not maximizers")
    for c in bad:
        loc = ", ".join(f"{v:.4g}" for v in c.point)
        print(f"  WARN {c.kind} at [{loc}] alpha={c.value:.4g}")
    return EXIT_OK if fd.passed else EXIT_VALIDATION


def cmd_plot(args) -> int:
    trace = read_trace(args.trace)
    oracle = read_oracle_csv(args.oracle) if args.oracle else None
    cons = box = None
    if args.kind == "xy_snapshots":
        src = trace.metadata.get("source")
        if src is None:
            raise UsageError("xy_snapshots needs manifest.json next to the trace")
        n = src["plant"]["params"].get("n", 2) if src["plant"]["model"] != "robot" else 2
        cons = Consolidation(build_constraints(src, n), float(src["consolidation"]["nu"]))
        box = src.get("oracle", {}).get("box")
    emit_plot(trace, args.kind, args.out, oracle=oracle, cons=cons, times=args.times, box=box)
    print(f"{args.kind} -> {args.out}")
    return EXIT_OK


def _patch_set(text: str) -> dict:
    out = {}
    for part in text.split(";"):
        if part.strip():
            k, v = parse_patch(part)
            out[k] = v
    return out


def cmd_sweep(args) -> int:
    base = build_scenario(_document(args.scenario))
    patches = [_patch_set(p) for p in args.patch]
    results = sweep(base, patches)
    out = Path(args.out)
    summary = []
    status = EXIT_OK
    for k, res in enumerate(results):
        run = out / f"run_{k:03d}"
        entry = {"run": run.name, "patch": res.patch, "error": res.error}
        if res.trace is not None:
            emit_trace(res.trace, run)
            entry["status"] = res.trace.metadata.get("status", "completed")
        else:
            entry["status"] = "failed"
        if entry["status"] != "completed":
            status = EXIT_ABORTED
        summary.append(entry)
        print(f"{run.name} {json.dumps(res.patch, sort_keys=True)}: {entry['status']}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return status


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="consolidated-control",
                                description="Constraint-consolidating control: simulate, "
                                            "validate and plot scenarios.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a scenario and write trace.csv, manifest.json, "
                                        "events.log")
    s.add_argument("scenario", help="scenario YAML file or builtin scenario name")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="alpha* over time on a grid")
    o.add_argument("scenario", help="scenario file, builtin scenario or builtin set")
    o.add_argument("--grid", type=int, default=None, help="points per dimension")
    o.add_argument("--polish", type=int, default=None, help="gradient-ascent steps")
    o.add_argument("--dt", type=float, default=0.1, help="time spacing [s]")
    o.add_argument("--out", required=True, help="output CSV")
    o.set_defaults(func=cmd_oracle)

    v = sub.add_parser("validate", help="derivative audit, boundedness and critical points")
    v.add_argument("scenario", help="scenario file, builtin scenario or builtin set")
    v.add_argument("--samples", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--grid", type=int, default=101, help="points per dimension for the scan")
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("plot", help="SVG figure from a trace")
    g.add_argument("trace", help="trace.csv written by simulate")
    g.add_argument("--kind", required=True, help=f"one of {', '.join(KINDS)}")
    g.add_argument("--oracle", help="oracle CSV to overlay alpha*")
    g.add_argument("--times", type=float, nargs="+", default=None,
                   help="snapshot times for xy_snapshots")
    g.add_argument("--out", required=True, help="output SVG")
    g.set_defaults(func=cmd_plot)

    w = sub.add_parser("sweep", help="one run per patch")
    w.add_argument("scenario", help="scenario YAML file or builtin scenario name")
    w.add_argument("--patch", action="append", default=[], metavar="K=V[;K=V...]",
                   help="overrides for one run; repeat for more runs")
    w.add_argument("--out", required=True, help="output directory")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, PlotUsageError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ScenarioError, ExpressionError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
