"""Command-line scenario runner.

    avoidmpc run <config> [--out DIR] [--steps K] [--no-plots]
    avoidmpc validate <config>
    avoidmpc probe-doa <config> [--points K] [--out FILE]
    avoidmpc diagnose <trajectory.csv>

Exit codes: 0 success, 2 configuration error, 3 infeasible start.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .controller import (domain_of_attraction_probe, iss_diagnostics, read_records_csv,
                         write_records_csv)
from .exceptions import ConfigError, ScenarioInfeasible
from .scenarios import build_scenario, run, validate_config

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 2, 3


def _cmd_run(args) -> int:
    sc = build_scenario(args.config)
    out = Path(args.out or Path("runs") / sc.name)
    out.mkdir(parents=True, exist_ok=True)
    res = run(sc, steps=args.steps)
    phys = res.physical
    write_records_csv(phys, out / "trajectory.csv")
    summary = res.summary()
    rep = iss_diagnostics(res.records)
    summary["decrease_check_violations"] = len(rep.violations)
    lines = [f"{k}: {v}" for k, v in summary.items()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    if not args.no_plots:
        from .plots import write_plots
        write_plots(res, out)
    print("\n".join(lines))
    return EXIT_OK


def _cmd_validate(args) -> int:
    rep = validate_config(args.config)
    for msg in rep.issues:
        print(f"issue: {msg}")
    for msg in rep.warnings:
        print(f"warning: {msg}")
    print(json.dumps(rep.info, indent=2, default=str))
    print("ok" if rep.ok else f"{len(rep.issues)} issue(s)")
    return EXIT_OK if rep.ok else EXIT_CONFIG


def _cmd_probe(args) -> int:
    """Feasibility over a grid in the first two state coordinates around x0."""
    sc = build_scenario(args.config)
    Z = sc.template.Z
    lo, hi = Z.bounding_box()
    n = sc.model.n
    x0 = sc.x0 - sc.x_eq
    k = args.points
    g0 = np.linspace(lo[0] * 1.1, hi[0] * 1.1, k)
    g1 = np.linspace(lo[1] * 1.1, hi[1] * 1.1, k) if n > 1 else np.zeros(1)
    grid = []
    for a in g0:
        for b in g1:
            x = x0.copy()
            x[0] = a
            if n > 1:
                x[1] = b
            grid.append(x)
    grid = np.array(grid)
    feas = domain_of_attraction_probe(sc.template, grid)
    out = Path(args.out or f"{sc.name}_doa.csv")
    with open(out, "w") as fh:
        fh.write("x0_0,x0_1,feasible\n")
        for x, f in zip(grid + sc.x_eq, feas):
            fh.write(f"{x[0]:.10g},{x[1] if n > 1 else 0.0:.10g},{int(f)}\n")
    print(f"{int(feas.sum())} of {feas.size} grid points feasible; written to {out}")
    return EXIT_OK


def _cmd_diagnose(args) -> int:
    recs = read_records_csv(args.trajectory)
    rep = iss_diagnostics(recs, tol=args.tol)
    print(f"steps: {len(recs)}")
    print(f"checked transitions: {int(rep.checked.sum())}")
    print(f"decrease-inequality violations: {len(rep.violations)}"
          + (f" at k = {rep.violations[:10]}" if rep.violations else ""))
    print(f"avoidance cost vanishes: {rep.avoidance_vanishes}")
    print(f"tracking error converged: {rep.error_converged}")
    print(f"error plateau: {rep.plateau} (final error {rep.final_error:.6g})")
    print(f"feasible at every step: {all(r.feasible for r in recs)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avoidmpc", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario and write logs and plots")
    r.add_argument("config")
    r.add_argument("--out")
    r.add_argument("--steps", type=int)
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(func=_cmd_run)
    v = sub.add_parser("validate", help="check a scenario config")
    v.add_argument("config")
    v.set_defaults(func=_cmd_validate)
    d = sub.add_parser("probe-doa", help="sample the feasible initial states")
    d.add_argument("config")
    d.add_argument("--points", type=int, default=21)
    d.add_argument("--out")
    d.set_defaults(func=_cmd_probe)
    g = sub.add_parser("diagnose", help="check the decrease inequality on a logged run")
    g.add_argument("trajectory")
    g.add_argument("--tol", type=float, default=1e-6)
    g.set_defaults(func=_cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
