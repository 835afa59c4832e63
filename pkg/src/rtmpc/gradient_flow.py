"""Monotonic any-time QP solver based on integrating the descent flow
dz/dt = -dJ/dz of the penalty-augmented cost.

The flow is stiff for large penalty weights, so each iteration takes one
implicit TR-BDF2 step (trapezoidal substep to t + g*dt, then a BDF2 substep
to t + dt), hard-projects the result onto the variable box, and only accepts
it if the augmented cost decreased; otherwise the step size shrinks and the
step is retried. The cost trace is therefore non-increasing no matter what,
which is the property the updating-period adaptation relies on.

One call to :func:`iterate_once` is the unbreakable compute quantum: callers
ask for exactly k iterations and get exactly k appended trace entries.
"""

from dataclasses import dataclass, replace

import numpy as np

from .qp import (
    PenaltyConfig,
    augmented_cost,
    augmented_gradient,
    augmented_hessian,
    project_to_box,
)

GAMMA_DEFAULT = 2.0 - np.sqrt(2.0)

_MAX_SHRINKS = 30


@dataclass(frozen=True)
class OdeSolverConfig:
    penalty: PenaltyConfig = PenaltyConfig()
    newton_tol: float = 1e-8
    newton_max: int = 10
    gamma: float = GAMMA_DEFAULT   # TR-BDF2 split point
    step_shrink: float = 0.5
    floor: float = 1.0
    # below this gradient inf-norm no float-representable decrease is left;
    # the iteration becomes a cheap no-op instead of burning shrink retries
    stationary_tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.gamma < 2.0:
            raise ValueError("gamma must lie in (0, 2)")
        if not 0.0 < self.step_shrink < 1.0:
            raise ValueError("step_shrink must lie in (0, 1)")


@dataclass(frozen=True)
class OdeSolverState:
    iterate: np.ndarray
    step_size: float
    iterations_done: int
    cost_trace: tuple  # augmented cost after 0, 1, ..., iterations_done steps


def init_state(prob, cfg, z0, step_size=None):
    """Project z0 into the box and size the first step as sqrt(1/||dz/dt||).

    A zero gradient (already stationary) falls back to step 1.0; iterations
    from there are no-ops. Passing step_size overrides the rule, which lets a
    caller carry the step across hot starts.
    """
    z = project_to_box(prob, np.asarray(z0, dtype=float))
    if step_size is None:
        speed = float(np.linalg.norm(augmented_gradient(prob, cfg.penalty, z)))
        step_size = 1.0 if speed == 0.0 else float(np.sqrt(1.0 / speed))
    cost = augmented_cost(prob, cfg.penalty, z, cfg.floor)
    return OdeSolverState(z, step_size, 0, (cost,))


def _implicit_stage(prob, cfg, rhs, coeff, w0):
    """Newton-solve w + coeff * grad J(w) = rhs, starting from w0.

    Returns the final w, or None on numerical breakdown. Hitting newton_max
    is not a failure by itself: the cost-decrease acceptance test is the
    judge of the resulting step.
    """
    w = w0.copy()
    for _ in range(cfg.newton_max):
        g = w + coeff * augmented_gradient(prob, cfg.penalty, w) - rhs
        if not np.all(np.isfinite(g)):
            return None
        if np.abs(g).max() <= cfg.newton_tol:
            return w
        jac = np.eye(prob.n_z) + coeff * augmented_hessian(prob, cfg.penalty, w)
        try:
            w = w - np.linalg.solve(jac, g)
        except np.linalg.LinAlgError:
            return None
    return w if np.all(np.isfinite(w)) else None


def _trbdf2_step(prob, cfg, z, dt, f0):
    """One TR-BDF2 step of dz/dt = -grad J from z; None on breakdown."""
    g = cfg.gamma
    # trapezoidal substep to t + g*dt
    c1 = g * dt / 2.0
    zg = _implicit_stage(prob, cfg, z + c1 * f0, c1, z)
    if zg is None:
        return None
    # BDF2 substep to t + dt
    denom = g * (2.0 - g)
    rhs = zg / denom - ((1.0 - g) ** 2 / denom) * z
    c2 = (1.0 - g) / (2.0 - g) * dt
    return _implicit_stage(prob, cfg, rhs, c2, zg)


def iterate_once(prob, cfg, state):
    """Advance one iteration: TR-BDF2 step, box projection, accept only on
    strict cost decrease (shrinking the step up to 30 times), else return
    the iterate unchanged. The appended trace entry never increases."""
    z = state.iterate
    cost = state.cost_trace[-1]
    dt = state.step_size
    f0 = -augmented_gradient(prob, cfg.penalty, z)
    if np.abs(f0).max(initial=0.0) > cfg.stationary_tol:
        for _ in range(_MAX_SHRINKS + 1):
            z_new = _trbdf2_step(prob, cfg, z, dt, f0)
            if z_new is not None:
                z_new = project_to_box(prob, z_new)
                if np.array_equal(z_new, z):
                    break  # projection pinned the step; shrinking won't help
                new_cost = augmented_cost(prob, cfg.penalty, z_new, cfg.floor)
                if new_cost < cost:
                    return OdeSolverState(
                        z_new, dt, state.iterations_done + 1,
                        state.cost_trace + (new_cost,),
                    )
            dt *= cfg.step_shrink
    # stationary point or no acceptable step: stand still
    return OdeSolverState(
        z, dt, state.iterations_done + 1, state.cost_trace + (cost,)
    )


def run(prob, cfg, z0, k, step_size=None):
    """Exactly k iterations from a fresh state at z0. Deterministic."""
    if k < 1:
        raise ValueError("iteration count must be >= 1")
    state = init_state(prob, cfg, z0, step_size=step_size)
    for _ in range(k):
        state = iterate_once(prob, cfg, state)
    return state
