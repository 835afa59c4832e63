"""Command-line front end: single runs, the two sweep experiments, a
solver comparison and generators for the benchmark plant and scenarios.

Every command writes CSV/key-value files under --out. Exit codes: 0 on
success, 2 when a runtime invariant of the toolkit is violated.
"""

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import benchmark as bench
from . import metrics
from .model_io import load_model, save_model
from .mpc import ControlParametrization
from .qp import InvariantViolation, PenaltyConfig
from .simulate import (
    SOLVER_ACTIVE_SET,
    SOLVER_ODE,
    ComputeBudget,
    ControllerConfig,
    PlantSim,
    fine_step_for,
    load_scenario,
    run_closed_loop,
    save_scenario,
)


def _write_summary(path, pairs):
    with open(path, "w") as fh:
        for key, val in pairs:
            fh.write(f"{key} = {val}\n")


def _fmt(x):
    return repr(float(x))


def _load_setup(args):
    """Model/operating point, parametrization, weights, bounds, penalty."""
    if args.model:
        model, op = load_model(args.model)
    else:
        model, op = bench.make_benchmark_plant()
    par = bench.ci_parametrization() if args.profile == "ci" \
        else bench.desk_parametrization()
    weights = bench.default_weights()
    bounds = bench.default_bounds()
    penalty = PenaltyConfig(weight=args.alpha, exponent=args.mu)
    return model, op, par, weights, bounds, penalty


def _controller(args, solver):
    model, op, par, weights, bounds, penalty = _load_setup(args)
    return model, ControllerConfig(
        model=model, par=par, weights=weights, bounds=bounds, op=op,
        solver=solver, penalty=penalty, q_max=args.q_max, delta=args.delta,
        forecast=args.forecast)


def _scenario(args):
    if args.scenario:
        return load_scenario(args.scenario)
    return bench.scenario_segments(args.duration)[args.segment]


def _budget(args):
    return ComputeBudget(normalized_power=args.power)


def cmd_simulate(args):
    model, ctrl = _controller(args, args.solver)
    scn = _scenario(args)
    budget = _budget(args)
    tau_q = budget.quantum(ctrl.solver)
    if args.adaptive:
        fine = fine_step_for(tau_q)
        q0 = args.q if args.q else 2
    else:
        q0 = args.q if args.q else metrics.iterations_allowed(
            budget, ctrl.solver, model.sample_period)
        fine = fine_step_for(tau_q, q=q0)
    plant = PlantSim(model=model, fine_step=fine)
    rec = run_closed_loop(plant, ctrl, scn, budget, adaptive=args.adaptive,
                          q0=q0, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    run_csv = os.path.join(args.out, "run.csv")
    rec.to_csv(run_csv)
    cb = metrics.cost_breakdown(rec)
    _write_summary(os.path.join(args.out, "summary.txt"), [
        ("label", rec.label),
        ("solver", ctrl.solver),
        ("adaptive", int(args.adaptive)),
        ("windows", len(rec.windows)),
        ("dev_total", _fmt(cb.dev_total)),
        ("cst_total", _fmt(cb.cst_total)),
        ("open_loop_total", _fmt(cb.open_loop_total)),
        ("closed_loop_total", _fmt(cb.closed_loop_total)),
        ("c1", _fmt(cb.c1)),
        ("c2", _fmt(cb.c2)),
    ])
    print(f"wrote {run_csv} ({len(rec.windows)} windows)")


def _sweep_rows(result, modes):
    rows = []
    for i, axis_val in enumerate(result.axis):
        for mode in modes:
            cb = result.points[mode][i]
            ref = result.points["reference"][i]
            if cb is None:
                rows.append([axis_val, mode, "unavailable"] + [""] * 6)
                continue
            norm = cb.open_loop_total / max(ref.open_loop_total, 1e-12)
            rows.append([axis_val, mode, "ok", cb.dev_total, cb.cst_total,
                         cb.closed_loop_total, cb.c1, cb.c2, norm])
    return rows


def cmd_sweep_power(args):
    model, ctrl_ode = _controller(args, SOLVER_ODE)
    _, ctrl_as = _controller(args, SOLVER_ACTIVE_SET)
    scn = _scenario(args)
    powers = [float(p) for p in args.powers.split(",")]
    result = metrics.sweep_power(model, ctrl_ode, ctrl_as, scn, powers,
                                 budget=ComputeBudget(), seed=args.seed,
                                 charge_prep=args.charge_prep)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep_power.csv")
    with open(path, "w") as fh:
        fh.write("power,mode,status,dev_total,cst_total,closed_loop_total,"
                 "c1,c2,normalized_open_loop\n")
        for row in _sweep_rows(result, [SOLVER_ODE, SOLVER_ACTIVE_SET,
                                        "reference"]):
            fh.write(",".join(str(v) if isinstance(v, str)
                              else _fmt(v) for v in row) + "\n")
    _write_summary(os.path.join(args.out, "summary.txt"), [
        ("scenario", scn.label),
        ("crossover_power", "none" if result.crossover is None
         else _fmt(result.crossover)),
    ])
    print(f"wrote {path}; crossover = {result.crossover}")


def cmd_sweep_period(args):
    model, ctrl = _controller(args, SOLVER_ODE)
    if args.scenario:
        scenarios = [load_scenario(args.scenario)]
    else:
        scenarios = bench.scenario_segments(args.duration)
    q_values = [int(q) for q in args.q_values.split(",")]
    result = metrics.sweep_period(model, ctrl, scenarios, q_values,
                                  budget=ComputeBudget(), seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep_period.csv")
    with open(path, "w") as fh:
        fh.write("scenario,mode,q,dev_total,cst_total,closed_loop_total,"
                 "c1,c2,normalized_open_loop\n")
        for label, entry in result.items():
            for q, cb, norm in zip(q_values, entry["fixed"],
                                   entry["normalized"]):
                fh.write(f"{label},fixed,{q}," + ",".join(_fmt(v) for v in (
                    cb.dev_total, cb.cst_total, cb.closed_loop_total,
                    cb.c1, cb.c2, norm)) + "\n")
            cb = entry["adaptive"]
            fh.write(f"{label},adaptive,-1," + ",".join(_fmt(v) for v in (
                cb.dev_total, cb.cst_total, cb.closed_loop_total,
                cb.c1, cb.c2, entry["adaptive_normalized"])) + "\n")
    summary = []
    for label, entry in result.items():
        best = int(np.argmin(entry["normalized"]))
        summary.append((f"argmin_q_{label}", q_values[best]))
        summary.append((f"adaptive_vs_best_{label}", _fmt(
            entry["adaptive_normalized"] / max(min(entry["normalized"]),
                                               1e-12))))
    _write_summary(os.path.join(args.out, "summary.txt"), summary)
    print(f"wrote {path}")


def cmd_compare_solvers(args):
    model, ctrl_ode = _controller(args, SOLVER_ODE)
    _, ctrl_as = _controller(args, SOLVER_ACTIVE_SET)
    scn = _scenario(args)
    budget = _budget(args)
    rows = []
    for name, ctrl in ((SOLVER_ODE, ctrl_ode), (SOLVER_ACTIVE_SET, ctrl_as)):
        q = metrics.iterations_allowed(budget, name, model.sample_period)
        plant = PlantSim(model=model,
                         fine_step=fine_step_for(budget.quantum(name), q=q))
        rec = run_closed_loop(plant, ctrl, scn, budget, q0=q, seed=args.seed)
        rows.append((f"{name}_q{q}", metrics.cost_breakdown(rec)))
    ref = metrics.cost_breakdown(metrics.reference_run(
        model, ctrl_as, scn, budget, seed=args.seed))
    rows.append(("active_set_unlimited", ref))
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "compare_solvers.csv")
    with open(path, "w") as fh:
        fh.write("mode,dev_total,cst_total,closed_loop_total,c1,c2\n")
        for name, cb in rows:
            fh.write(f"{name}," + ",".join(_fmt(v) for v in (
                cb.dev_total, cb.cst_total, cb.closed_loop_total,
                cb.c1, cb.c2)) + "\n")
    print(f"wrote {path}")


def cmd_gen_plant(args):
    model, op = bench.make_benchmark_plant(seed=args.plant_seed)
    os.makedirs(os.path.dirname(os.path.abspath(args.path)), exist_ok=True)
    save_model(args.path, model, op)
    print(f"wrote {args.path}")


def cmd_gen_scenario(args):
    scenarios = bench.scenario_segments(args.duration)
    os.makedirs(args.out, exist_ok=True)
    for scn in scenarios:
        path = os.path.join(args.out, f"{scn.label}.csv")
        save_scenario(path, scn)
        print(f"wrote {path}")


def _add_common(p):
    p.add_argument("--model", help="model file (default: built-in benchmark)")
    p.add_argument("--scenario", help="scenario CSV (default: built-in segment)")
    p.add_argument("--segment", type=int, default=1,
                   help="built-in scenario segment index 0..5")
    p.add_argument("--duration", type=float, default=3600.0,
                   help="duration of built-in scenarios [s]")
    p.add_argument("--profile", choices=("desk", "ci"), default="desk",
                   help="parametrization profile")
    p.add_argument("--power", type=float, default=1.0,
                   help="normalized compute power")
    p.add_argument("--alpha", type=float, default=bench.DEFAULT_ALPHA,
                   help="constraint penalty weight")
    p.add_argument("--mu", type=float, default=2.0,
                   help="constraint penalty exponent")
    p.add_argument("--q-max", type=int, default=20)
    p.add_argument("--delta", type=int, default=2)
    p.add_argument("--forecast", choices=("hold", "oracle"), default="hold")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="rtmpc",
        description="iteration-budgeted MPC benchmark toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="one closed-loop run")
    _add_common(p)
    p.add_argument("--solver", choices=(SOLVER_ODE, SOLVER_ACTIVE_SET),
                   default=SOLVER_ODE)
    p.add_argument("--q", type=int, help="iterations per update "
                   "(default: what the budget affords)")
    p.add_argument("--adaptive", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-power", help="solver comparison vs compute power")
    _add_common(p)
    p.add_argument("--powers", default="0.25,0.5,1,2,4,8")
    p.add_argument("--charge-prep", action="store_true",
                   help="reserve preparation time before counting iterations")
    p.set_defaults(func=cmd_sweep_power)

    p = sub.add_parser("sweep-period", help="fixed vs adaptive updating period")
    _add_common(p)
    p.add_argument("--q-values", default="4,8,12,16,20")
    p.set_defaults(func=cmd_sweep_period)

    p = sub.add_parser("compare-solvers", help="both solvers plus unlimited reference")
    _add_common(p)
    p.set_defaults(func=cmd_compare_solvers)

    p = sub.add_parser("gen-plant", help="write the benchmark model file")
    p.add_argument("path")
    p.add_argument("--plant-seed", type=int, default=bench.BENCHMARK_SEED)
    p.set_defaults(func=cmd_gen_plant)

    p = sub.add_parser("gen-scenario", help="write the scenario library CSVs")
    p.add_argument("out")
    p.add_argument("--duration", type=float, default=3600.0)
    p.set_defaults(func=cmd_gen_scenario)

    args = parser.parse_args(argv)
    try:
        args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
