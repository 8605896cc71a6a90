"""Command-line front end.

Subcommands:
  solve      solve the recursions, emit cre.json / gains.json / cost.json
  simulate   Monte Carlo rollout, emit summary.json (and trace CSVs)
  evaluate   exact expected cost of the synthesized gains, emit evaluate.json
  check      run the full invariant suite, emit check.json
  sweep      dropout-rate sweep, emit sweep.json

Exit codes: 0 success, 1 input error, 2 solvability failure,
3 invariant failure.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import oracle, serialize, simulator
from .model import ModelError, load_config, stack, validate
from .riccati import (RiccatiError, SingularLambda, SingularLambdaTilde,
                      SingularPi, check_definiteness, solve_cre,
                      solve_cre_additive, solve_cre_single, solve_generalized)
from .synthesis import gains, optimal_cost

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVABILITY = 2
EXIT_INVARIANT = 3


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="ncslq",
        description="Finite-horizon LQ control of lossy-uplink networked systems")
    parser.add_argument("--config", required=True, help="model document (JSON)")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="master RNG seed")
    parser.add_argument("--mode", choices=["definite", "indefinite"],
                        default="definite")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve")
    sim = sub.add_parser("simulate")
    sim.add_argument("--trials", type=int, default=1000)
    sim.add_argument("--retain-traces", action="store_true")
    sim.add_argument("--horizon", type=int, default=None)
    sub.add_parser("evaluate")
    sub.add_parser("check")
    swp = sub.add_parser("sweep")
    swp.add_argument("--p", type=float, action="append", default=[])
    swp.add_argument("--trials", type=int, default=1000)
    return parser


def _load(args):
    model = load_config(args.config)
    vm = validate(model, mode=args.mode)
    return vm, stack(vm)


def cmd_solve(args, outdir):
    vm, st = _load(args)
    if args.mode == "indefinite":
        gen = solve_generalized(st, vm)
        serialize.dump({
            "mode": "indefinite",
            "Delta": gen.Delta,
            "Upsilon": gen.Upsilon,
            "M": gen.M,
            "upsilon_psd": [bool(v) for v in gen.upsilon_psd],
        }, outdir / "cre.json")
        sol = solve_cre(st, vm)
    else:
        sol = solve_cre(st, vm)
        serialize.dump(serialize.cre_to_dict(sol), outdir / "cre.json")
    sched = gains(sol)
    serialize.dump(serialize.gains_to_dict(sched), outdir / "gains.json")
    doc = {"formula_cost": None,
           "oracle_cost": oracle.exact_cost(vm, st, sched)}
    try:
        doc["formula_cost"] = optimal_cost(sol, vm)
    except RuntimeError as exc:
        # closed form undefined when the recursion degrades numerically
        # (possible under indefinite weights); the oracle value stands alone
        doc["formula_error"] = str(exc)
    serialize.dump(doc, outdir / "cost.json")
    return EXIT_OK


def cmd_simulate(args, outdir):
    if args.trials < 1:
        print("trials >= 1 required", file=sys.stderr)
        return EXIT_INPUT
    vm, st = _load(args)
    sched = gains(solve_cre(st, vm))
    summary = simulator.simulate(vm, st, sched, args.seed, args.trials,
                                 retain_traces=args.retain_traces,
                                 horizon=args.horizon)
    serialize.dump(summary.to_dict(), outdir / "summary.json")
    for tr in summary.traces:
        _write_trace(outdir / f"trace_{tr.trial}.csv", tr)
    return EXIT_OK


def _write_trace(path, tr):
    NL = tr.X.shape[1]
    L = tr.Gamma.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"]
                   + [f"x{j}" for j in range(NL)]
                   + [f"xhat{j}" for j in range(NL)]
                   + [f"u{j}" for j in range(tr.U.shape[1])]
                   + [f"gamma{i + 1}" for i in range(L)]
                   + ["stage_cost"])
        for k in range(tr.X.shape[0]):
            u = tr.U[k].tolist() if k < tr.U.shape[0] else [""] * tr.U.shape[1]
            stage = (format(tr.stage_costs[k], ".17g") if k < tr.U.shape[0]
                     else format(tr.terminal_cost, ".17g"))
            w.writerow([k]
                       + [format(v, ".17g") for v in tr.X[k]]
                       + [format(v, ".17g") for v in tr.Xhat[k]]
                       + [format(v, ".17g") if v != "" else "" for v in u]
                       + [int(v) for v in tr.Gamma[k]]
                       + [stage])


def cmd_evaluate(args, outdir):
    vm, st = _load(args)
    sol = solve_cre(st, vm)
    sched = gains(sol)
    serialize.dump({
        "exact_cost": oracle.exact_cost(vm, st, sched),
        "formula_cost": optimal_cost(sol, vm),
    }, outdir / "evaluate.json")
    return EXIT_OK


def cmd_check(args, outdir):
    """Full invariant suite; exit 3 if any named invariant fails."""
    vm, st = _load(args)
    model = vm.model
    report = {}

    sol = solve_cre(st, vm)
    sched = gains(sol)

    defin = check_definiteness(sol, vm)
    report["definiteness"] = {"ok": defin.ok,
                              "violations": [list(v) for v in defin.violations]}

    # reductions
    if all(s.sigma_w == 0.0 for s in model.subsystems):
        add = solve_cre_additive(st, vm)
        err = float(np.max(np.abs(add.P - sol.P)) / (1.0 + np.max(np.abs(sol.P))))
        report["additive_reduction"] = {"ok": err <= 1e-10, "relative_error": err}
    if model.L == 1:
        single = solve_cre_single(st, vm)
        err = float(np.max(np.abs(single.P - sol.P)) / (1.0 + np.max(np.abs(sol.P))))
        report["single_reduction"] = {"ok": err <= 1e-10, "relative_error": err}

    # stationarity of the synthesized gains under the exact-cost oracle
    stat = oracle.stationarity_check(vm, st, sched)
    report["stationarity"] = {
        "ok": stat.stationary,
        "cost": stat.cost,
        "max_abs_derivative": stat.max_abs_derivative,
        "threshold": stat.threshold,
        "entries_probed": stat.entries_probed,
        "min_second_difference": stat.min_second_difference,
    }

    # costate telescoping
    cm = oracle.costate_moments(vm, st, sched, sol)
    report["costate_telescoping"] = {
        "ok": cm.max_relative_residual <= 1e-8,
        "max_relative_residual": cm.max_relative_residual,
    }

    # closed-form cost vs oracle
    formula = optimal_cost(sol, vm)
    exact = oracle.exact_cost(vm, st, sched)
    rel = abs(formula - exact) / (1.0 + abs(exact))
    report["cost_formula_vs_oracle"] = {
        "ok": rel <= 1e-8, "formula": formula, "oracle": exact,
        "relative_error": rel,
    }

    # Monte Carlo vs oracle (3 standard errors)
    summary = simulator.simulate(vm, st, sched, args.seed, 20000)
    z = abs(summary.cost_mean - exact) / max(summary.cost_stderr, 1e-300)
    report["monte_carlo_vs_oracle"] = {
        "ok": z <= 3.0, "mean": summary.cost_mean,
        "stderr": summary.cost_stderr, "z": z,
    }

    ok = all(sect["ok"] for sect in report.values())
    report["ok"] = ok
    serialize.dump(report, outdir / "check.json")
    if not ok:
        failed = [k for k, v in report.items() if k != "ok" and not v["ok"]]
        print("invariant failure: " + ", ".join(failed), file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def cmd_sweep(args, outdir):
    if not args.p:
        print("at least one --p value required", file=sys.stderr)
        return EXIT_INPUT
    if args.trials < 1:
        print("trials >= 1 required", file=sys.stderr)
        return EXIT_INPUT
    vm, _ = _load(args)
    records = simulator.sweep_dropout(vm, args.p, args.seed, args.trials,
                                      mode=args.mode)
    doc = {}
    for rec in records:
        entry = {k: v for k, v in rec.items() if k not in ("summary", "p")}
        doc[format(rec["p"], ".17g")] = entry
    serialize.dump(doc, outdir / "sweep.json")
    return EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    outdir = Path(args.out)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"cannot create output directory: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        if args.command == "solve":
            return cmd_solve(args, outdir)
        if args.command == "simulate":
            return cmd_simulate(args, outdir)
        if args.command == "evaluate":
            return cmd_evaluate(args, outdir)
        if args.command == "check":
            return cmd_check(args, outdir)
        if args.command == "sweep":
            return cmd_sweep(args, outdir)
        return EXIT_INPUT
    except (SingularLambda, SingularLambdaTilde, SingularPi) as exc:
        print(f"solvability failure: {exc}", file=sys.stderr)
        return EXIT_SOLVABILITY
    except RiccatiError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVABILITY
    except (ModelError, FileNotFoundError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
