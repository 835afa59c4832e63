"""Evaluation quantities and the two headline sweep experiments.

Per update window the record keeps the delivered parameter and the problem
data it was computed for, so the open-loop deviation and violation costs,
the predicted-violation statistics and the realized closed-loop cost can
all be recomputed offline. Sweeps normalize costs by a reference run whose
budget is generous enough to solve every window to optimality.
"""

from dataclasses import dataclass, replace

import numpy as np

from .simulate import (
    SOLVER_ACTIVE_SET,
    SOLVER_ODE,
    ComputeBudget,
    PlantSim,
    fine_step_for,
    iterations_allowed,
    run_closed_loop,
)

REFERENCE_ITERATIONS = 1000


@dataclass(frozen=True)
class CostBreakdown:
    dev_total: float           # summed predicted deviation cost
    cst_total: float           # summed predicted violation cost
    closed_loop_total: float   # summed realized stage cost
    c1: float                  # max predicted constraint violation
    c2: float                  # mean predicted constraint violation

    def __post_init__(self):
        for name in ("dev_total", "cst_total", "closed_loop_total", "c1", "c2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def open_loop_total(self):
        return self.dev_total + self.cst_total


@dataclass(frozen=True)
class SweepResult:
    axis: tuple
    points: dict        # mode -> tuple of CostBreakdown (or None), one per axis value
    crossover: float = None

    def __post_init__(self):
        ax = tuple(float(a) for a in self.axis)
        if any(b <= a for a, b in zip(ax, ax[1:])):
            raise ValueError("axis must be strictly increasing")
        object.__setattr__(self, "axis", ax)


def stage_cost(x, u, v, weights):
    """Realized instantaneous cost ||x||_Q^2 + ||u||_R^2 + ||v||_rho^2."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return float(x @ weights.q_state @ x + u @ weights.r_input @ u
                 + v @ weights.rho_violation @ v)


def open_loop_costs(record):
    """Per-window predicted deviation and violation cost series under the
    delivered parameter, evaluated on the prediction the solver worked
    with (state estimate and disturbance forecast)."""
    builder = record.builder
    weights = record.config.weights
    dev, cst = [], []
    for w in record.windows:
        traj = builder.rollout(w.x_hat, w.p_delivered, w.w_forecast)
        viol = builder.violation_profile(traj)
        dev.append(float(
            np.einsum("ja,ab,jb->", traj.states, weights.q_state, traj.states)
            + np.einsum("ja,ab,jb->", traj.inputs, weights.r_input, traj.inputs)))
        cst.append(float(
            np.einsum("ja,ab,jb->", viol, weights.rho_violation, viol)))
    return np.array(dev), np.array(cst)


def violation_stats(record):
    """(c1, c2): max and mean over windows of the worst predicted
    polyhedral-row violation of the delivered parameter."""
    gam = record.builder.ineq_matrix
    worst = np.array([
        float(np.maximum(gam @ w.p_delivered - w.gamma_bound, 0.0).max(initial=0.0))
        for w in record.windows
    ])
    if worst.size == 0:
        return 0.0, 0.0
    return float(worst.max()), float(worst.mean())


def cost_breakdown(record):
    dev, cst = open_loop_costs(record)
    c1, c2 = violation_stats(record)
    bf = float(sum(w.stage_cost for w in record.windows))
    return CostBreakdown(float(dev.sum()), float(cst.sum()), bf, c1, c2)


def reference_budget(budget, tau_u=None):
    """Budget of an idealized device that fits REFERENCE_ITERATIONS
    active-set iterations into one updating period."""
    tau_u = float(tau_u) if tau_u is not None else 5.0
    return replace(budget, normalized_power=1.0,
                   sec_per_iter_activeset=tau_u / REFERENCE_ITERATIONS)


def reference_run(plant_model, ctrl, scenario, budget, fine_target=0.25,
                  seed=0):
    """Closed loop with per-window optimal solves: the normalizer for
    sweep plots and the stand-in for an unlimited optimizer."""
    tau_u = ctrl.model.sample_period
    ctrl_ref = replace(ctrl, solver=SOLVER_ACTIVE_SET)
    ref = reference_budget(budget, tau_u)
    plant = PlantSim(model=plant_model,
                     fine_step=fine_step_for(tau_u, q=1, target=fine_target),
                     noise_scale=0.0)
    return run_closed_loop(plant, ctrl_ref, scenario, ref,
                           q0=REFERENCE_ITERATIONS, seed=seed,
                           label=f"{scenario.label}-reference")


def _run_fixed(plant_model, ctrl, scenario, budget, q, fine_target, seed):
    tau_q = budget.quantum(ctrl.solver)
    plant = PlantSim(model=plant_model,
                     fine_step=fine_step_for(tau_q, q=q, target=fine_target))
    return run_closed_loop(plant, ctrl, scenario, budget, q0=q, seed=seed)


def sweep_power(plant_model, ctrl_ode, ctrl_as, scenario, powers,
                budget=None, tau_u=None, fine_target=0.25, seed=0,
                charge_prep=False):
    """Fixed-q closed loops for both solvers across normalized compute
    powers; each point gets the iterations its budget affords within one
    updating period. Returns per-solver cost breakdowns plus the reference
    and the interpolated crossover power where the active-set total drops
    below the gradient-flow total. Points whose budget affords no iteration
    are marked None."""
    powers = tuple(float(p) for p in powers)
    tau_u = float(tau_u) if tau_u is not None else ctrl_ode.model.sample_period
    base = budget if budget is not None else ComputeBudget()
    points = {SOLVER_ODE: [], SOLVER_ACTIVE_SET: []}
    for ctrl, kind in ((ctrl_ode, SOLVER_ODE), (ctrl_as, SOLVER_ACTIVE_SET)):
        if ctrl.solver != kind:
            raise ValueError(f"controller for {kind} has solver {ctrl.solver}")
        for p_bar in powers:
            point_budget = replace(base, normalized_power=p_bar)
            try:
                q = iterations_allowed(point_budget, kind, tau_u,
                                       charge_prep=charge_prep)
            except ValueError:
                points[kind].append(None)
                continue
            rec = _run_fixed(plant_model, ctrl, scenario, point_budget, q,
                             fine_target, seed)
            points[kind].append(cost_breakdown(rec))
    ref_rec = reference_run(plant_model, ctrl_as, scenario, base,
                            fine_target, seed)
    points["reference"] = [cost_breakdown(ref_rec)] * len(powers)
    crossover = _crossover(powers, points[SOLVER_ODE],
                           points[SOLVER_ACTIVE_SET])
    return SweepResult(axis=powers,
                       points={k: tuple(v) for k, v in points.items()},
                       crossover=crossover)


def _crossover(powers, ode_points, as_points):
    """Smallest power where the active-set total undercuts the
    gradient-flow total, linearly interpolated between axis points."""
    diffs = []
    for o, a in zip(ode_points, as_points):
        diffs.append(np.nan if o is None or a is None
                     else a.closed_loop_total - o.closed_loop_total)
    for i, d in enumerate(diffs):
        if np.isnan(d) or d >= 0:
            continue
        if i == 0 or np.isnan(diffs[i - 1]):
            return float(powers[i])
        p0, p1, d0, d1 = powers[i - 1], powers[i], diffs[i - 1], diffs[i]
        return float(p0 + (p1 - p0) * d0 / (d0 - d1))
    return None


def sweep_period(plant_model, ctrl, scenarios, q_values, budget=None,
                 fine_target=0.25, seed=0, include_adaptive=True):
    """Fixed-q gradient-flow runs across the q axis for every scenario
    segment, plus one adaptive run per segment. Costs are the open-loop
    dev+cst totals normalized by each segment's reference run."""
    if ctrl.solver != SOLVER_ODE:
        raise ValueError("period sweeps drive the gradient-flow solver")
    q_values = tuple(int(q) for q in q_values)
    budget = budget if budget is not None else ComputeBudget()
    out = {}
    for scn in scenarios:
        ref = cost_breakdown(reference_run(plant_model, ctrl, scn, budget,
                                           fine_target, seed))
        norm = max(ref.open_loop_total, 1e-12)
        fixed = []
        for q in q_values:
            rec = _run_fixed(plant_model, ctrl, scn, budget, q, fine_target,
                             seed)
            fixed.append(cost_breakdown(rec))
        entry = {
            "fixed": tuple(fixed),
            "normalized": tuple(c.open_loop_total / norm for c in fixed),
            "reference": ref,
        }
        if include_adaptive:
            tau_q = budget.quantum(SOLVER_ODE)
            plant = PlantSim(model=plant_model,
                             fine_step=fine_step_for(tau_q,
                                                     target=fine_target))
            rec_ad = run_closed_loop(plant, ctrl, scn, budget, adaptive=True,
                                     q0=max(2, min(q_values)), seed=seed)
            cb = cost_breakdown(rec_ad)
            entry["adaptive"] = cb
            entry["adaptive_normalized"] = cb.open_loop_total / norm
        out[scn.label] = entry
    return out
