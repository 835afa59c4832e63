"""Closed-loop execution of iteration-budgeted MPC against a simulated plant.

Time is organized in update windows of q iteration quanta: while the current
control profile is applied to the plant, the solver performs exactly q
iterations on the problem built for the predicted state at the next delivery
instant, hot-started from the shifted previous parameter. The plant itself
integrates on a finer fixed step with zero-order-hold inputs, so control
timing and plant accuracy stay decoupled. The controller's prediction model
lives on its own sampling grid; delivery instants that fall between grid
points are rounded to the nearest grid state (documented approximation,
exact whenever the window is a multiple of the model period).

Per window the four augmented-cost observations feeding the updating-period
rule are evaluated with a shared floor that restores the state-dependent
constant dropped by condensing, keeping every cost at its true nonnegative
value.
"""

import os
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import expm, logm

from . import active_set as aset
from . import gradient_flow as gflow
from .adaptation import AdaptationConfig, collect_inputs, update_q
from .mpc import MpcQpBuilder, expand_profile, hot_start_shift
from .qp import InvariantViolation, PenaltyConfig, augmented_cost

SOLVER_ODE = "gradient_flow"
SOLVER_ACTIVE_SET = "active_set"

_TIME_EPS = 1e-9


@dataclass(frozen=True)
class ComputeBudget:
    """Per-iteration wall time of each solver on the reference hardware and
    the normalized power of the actual device (1.0 = reference)."""

    sec_per_iter_ode: float = 0.25
    sec_per_iter_activeset: float = 0.48
    normalized_power: float = 1.0
    prep_time: float = 0.5

    def __post_init__(self):
        for name in ("sec_per_iter_ode", "sec_per_iter_activeset",
                     "normalized_power", "prep_time"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def sec_per_iter(self, solver_kind):
        if solver_kind == SOLVER_ODE:
            return self.sec_per_iter_ode
        if solver_kind == SOLVER_ACTIVE_SET:
            return self.sec_per_iter_activeset
        raise ValueError(f"unknown solver kind {solver_kind!r}")

    def quantum(self, solver_kind):
        """Wall-clock time one iteration takes on this device."""
        return self.sec_per_iter(solver_kind) / self.normalized_power


def iterations_allowed(budget, solver_kind, tau_u, charge_prep=False):
    """Iterations deliverable within an updating period tau_u.

    charge_prep additionally reserves the per-window problem preparation
    time before counting iterations (hardware-faithful accounting); the
    default matches pure iteration counting.
    """
    sec = budget.sec_per_iter(solver_kind)
    usable = tau_u - budget.prep_time if charge_prep else tau_u
    if tau_u < budget.quantum(solver_kind):
        raise ValueError("updating period shorter than one iteration")
    n = int(np.floor(usable * budget.normalized_power / sec + _TIME_EPS))
    if n < 1:
        raise ValueError("compute budget allows no iteration per update")
    return n


@dataclass(frozen=True)
class Scenario:
    """Piecewise-constant heat-load profile in absolute units (Watts)."""

    duration: float
    times: np.ndarray
    loads: np.ndarray
    label: str = "scenario"

    def __post_init__(self):
        t = np.atleast_1d(np.asarray(self.times, dtype=float))
        w = np.atleast_1d(np.asarray(self.loads, dtype=float))
        if t.size != w.size or t.size == 0:
            raise ValueError("times and loads must be equal-length, nonempty")
        if t[0] > 0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must start at or before 0 and increase")
        if t[-1] > self.duration:
            raise ValueError("breakpoints must not exceed duration")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "loads", w)

    def value(self, t):
        """Hold-last interpolation at time t."""
        i = int(np.searchsorted(self.times, t + _TIME_EPS, side="right")) - 1
        return float(self.loads[max(i, 0)])


def save_scenario(path, scenario):
    with open(path, "w") as fh:
        fh.write("time_s,heat_load_W\n")
        for t, w in zip(scenario.times, scenario.loads):
            fh.write(f"{t!r},{w!r}\n")


def load_scenario(path, duration=None, label=None):
    times, loads = [], []
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "time_s,heat_load_W":
            raise ValueError(f"unexpected scenario header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            t, w = line.split(",")
            times.append(float(t))
            loads.append(float(w))
    return Scenario(
        duration=duration if duration is not None else times[-1],
        times=np.array(times), loads=np.array(loads),
        label=label or os.path.splitext(os.path.basename(path))[0],
    )


def rediscretize(model, new_period):
    """Resample a discrete LTI model to a new period via the matrix
    logarithm of its one-step map. Requires the principal logarithm to be
    real (true for plants generated from a continuous model with modest
    oscillation); raises otherwise."""
    if abs(new_period - model.sample_period) < _TIME_EPS:
        return model
    n, n_in = model.n, model.n_u + model.n_w
    block = np.zeros((n + n_in, n + n_in))
    block[:n, :n] = model.a
    block[:n, n:] = np.hstack([model.b, model.f])
    block[n:, n:] = np.eye(n_in)
    gen = logm(block) / model.sample_period
    if np.abs(np.imag(gen)).max() > 1e-8:
        raise ValueError(
            "model has no real matrix logarithm; supply a model sampled "
            "at the simulation step instead")
    gen = np.real(gen)
    stepped = expm(gen * new_period)
    a_new = stepped[:n, :n]
    b_new = stepped[:n, n:n + model.n_u]
    f_new = stepped[:n, n + model.n_u:]
    return replace(model, a=a_new, b=b_new, f=f_new,
                   sample_period=new_period)


@dataclass(frozen=True)
class PlantSim:
    """True plant: a discrete LTI model integrated at fine_step with
    optional white process noise (scaled by sqrt(step))."""

    model: "LtiModel"
    fine_step: float = 0.25
    noise_scale: float = 0.0

    def __post_init__(self):
        if not self.fine_step > 0:
            raise ValueError("fine_step must be positive")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass(frozen=True)
class ControllerConfig:
    """Everything the compute-limited controller knows: its prediction
    model, the reduced parametrization, weights, bounds, operating point,
    penalty treatment and solver choice."""

    model: "LtiModel"
    par: "ControlParametrization"
    weights: "MpcWeights"
    bounds: "MpcBounds"
    op: "OperatingPoint"
    solver: str = SOLVER_ODE
    penalty: PenaltyConfig = PenaltyConfig()
    floor: float = 1.0
    forecast: str = "hold"          # hold | oracle
    newton_tol: float = 1e-8
    newton_max: int = 10
    step_shrink: float = 0.5
    carry_step: bool = False        # keep the flow step size across updates
    q_max: int = 20
    delta: int = 2

    def __post_init__(self):
        if self.solver not in (SOLVER_ODE, SOLVER_ACTIVE_SET):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.forecast not in ("hold", "oracle"):
            raise ValueError("forecast must be 'hold' or 'oracle'")
        self.op.check_model(self.model)

    def adaptation_config(self):
        return AdaptationConfig(q_max=self.q_max, delta=self.delta)

    def ode_config(self, floor):
        return gflow.OdeSolverConfig(
            penalty=self.penalty, newton_tol=self.newton_tol,
            newton_max=self.newton_max, step_shrink=self.step_shrink,
            floor=floor)


@dataclass
class WindowRow:
    """Everything logged for one completed update window."""

    index: int
    t_start: float
    t_end: float
    q: int
    iterations_used: int
    solver_status: str
    x_true: np.ndarray
    y_true: np.ndarray
    u_applied: np.ndarray       # deviation units
    v_real: np.ndarray
    stage_cost: float
    j_k: float
    j_k_plus: float
    j_hat_next: float
    j_next: float
    e_abs: float
    d_abs: float
    clipped: bool
    e_r: float = np.nan
    d_r: float = np.nan
    k_r: float = np.nan
    gamma: float = np.nan
    q_next: int = -1
    # retained problem data for offline metrics (not serialized to CSV)
    p_delivered: np.ndarray = None
    p_hot: np.ndarray = None
    x_hat: np.ndarray = None
    u_prev: np.ndarray = None
    w_forecast: np.ndarray = None
    gamma_bound: np.ndarray = None


_CSV_SCALARS = [
    "t_end", "q", "iterations_used", "solver_status", "stage_cost",
    "j_k", "j_k_plus", "j_hat_next", "j_next", "e_abs", "d_abs",
    "e_r", "d_r", "k_r", "gamma", "q_next", "clipped",
]


@dataclass
class RunRecord:
    label: str
    solver: str
    adaptive: bool
    seed: int
    windows: list = field(default_factory=list)
    builder: MpcQpBuilder = None
    config: ControllerConfig = None
    final_time: float = 0.0
    final_state: np.ndarray = None

    def times(self):
        return np.array([w.t_end for w in self.windows])

    def column(self, name):
        return np.array([getattr(w, name) for w in self.windows])

    def to_csv(self, path):
        w0 = self.windows[0]
        vec_cols = [("x", w0.x_true.size), ("y", w0.y_true.size),
                    ("u", w0.u_applied.size), ("v", w0.v_real.size)]
        header = _CSV_SCALARS + [f"{n}{i}" for n, k in vec_cols for i in range(k)]
        lines = [",".join(header)]
        for w in self.windows:
            vals = []
            for name in _CSV_SCALARS:
                v = getattr(w, name)
                if isinstance(v, str):
                    vals.append(v)
                elif isinstance(v, (bool, np.bool_)):
                    vals.append(str(int(v)))
                elif isinstance(v, (int, np.integer)):
                    vals.append(str(int(v)))
                else:
                    vals.append(repr(float(v)))
            for arr in (w.x_true, w.y_true, w.u_applied, w.v_real):
                vals.extend(repr(float(x)) for x in arr)
            lines.append(",".join(vals))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def mismatch_ratio(record, k):
    """Realized-over-predicted augmented cost of window k; 1 under a
    perfect model with fully forecast disturbance."""
    w = record.windows[k]
    return w.j_next / w.j_hat_next


def _window_alignment(plant, tau_q, q0, adaptive):
    """Delivery instants must land on the plant's fine grid: for adaptive
    runs every multiple of the quantum must, for fixed-q runs only the
    window length."""
    base = tau_q if adaptive else q0 * tau_q
    ratio = base / plant.fine_step
    if abs(ratio - round(ratio)) > 1e-6:
        raise ValueError(
            f"fine_step {plant.fine_step} does not divide "
            f"{'the iteration quantum' if adaptive else 'the update window'} "
            f"{base}; pick fine_step with fine_step_for()")


def fine_step_for(tau_q, q=None, target=0.25):
    """Largest step <= target that divides the iteration quantum (or the
    whole window when q is given)."""
    base = tau_q if q is None else q * tau_q
    return base / int(np.ceil(base / target - _TIME_EPS))


def run_closed_loop(plant, ctrl, scenario, budget, adaptive=False, q0=None,
                    x_init=None, p_init=None, seed=0, label=None):
    """Execute the update-window loop over a disturbance scenario.

    Returns a RunRecord with one row per completed window. Deterministic
    for fixed inputs and seed. The gradient-flow solver receives exactly q
    iterations per window; the active-set solver at most q (it may certify
    optimality earlier). Adaptation requires the monotonic gradient-flow
    solver.
    """
    if adaptive and ctrl.solver != SOLVER_ODE:
        raise ValueError("adaptation requires the monotonic gradient-flow solver")
    tau_q = budget.quantum(ctrl.solver)
    if q0 is None:
        q0 = 2 if adaptive else iterations_allowed(budget, ctrl.solver,
                                                   ctrl.model.sample_period)
    q0 = int(q0)
    if adaptive and not 2 <= q0 <= ctrl.q_max:
        raise ValueError("q0 must lie in [2, q_max]")
    _window_alignment(plant, tau_q, q0, adaptive)

    builder = MpcQpBuilder(ctrl.model, ctrl.par, ctrl.weights, ctrl.bounds)
    par, op = ctrl.par, ctrl.op
    n_u = par.n_physical
    tau_m = ctrl.model.sample_period
    plant_fine = rediscretize(plant.model, plant.fine_step)
    ctrl_fine = rediscretize(ctrl.model, plant.fine_step)
    rng = np.random.default_rng(seed)
    cidx = list(ctrl.bounds.constrained_output_indices)

    def w_dev(at):
        return scenario.value(at) - float(op.w0[0])

    def forecast_from(anchor, t_measure):
        """Horizon disturbance forecast: sample j covers
        [anchor + j*tau_m, anchor + (j+1)*tau_m)."""
        if ctrl.forecast == "hold":
            return np.full((par.horizon, 1), w_dev(t_measure))
        return np.array([[w_dev(anchor + j * tau_m)]
                         for j in range(par.horizon)])

    x_true = np.zeros(ctrl.model.n) if x_init is None \
        else np.asarray(x_init, dtype=float)
    p = np.zeros(par.n_param) if p_init is None \
        else np.asarray(p_init, dtype=float)
    q = q0
    t = 0.0
    u_prev = np.zeros(n_u)
    warm = None
    carry_dt = None

    w_fc = forecast_from(0.0, 0.0)
    prob0 = builder.condense(x_true, u_prev, w_fc)
    j_realized = augmented_cost(prob0, ctrl.penalty, p,
                                builder.cost_offset(x_true, w_fc) + ctrl.floor)

    record = RunRecord(label=label or scenario.label, solver=ctrl.solver,
                       adaptive=adaptive, seed=seed, builder=builder,
                       config=ctrl)
    index = 0
    while t + q * tau_q <= scenario.duration + _TIME_EPS:
        t_next = t + q * tau_q
        # the delivered profile's samples are anchored at the window start;
        # the hot-start translation is the window length rounded to whole
        # samples (a whole number whenever the window is grid-aligned)
        n_shift = int(round((t_next - t) / tau_m))
        x_start = x_true

        # (a) apply the current profile to the plant on the fine grid, and
        # in parallel roll the controller model over the same inputs to
        # predict the delivery-instant state (step charged as negligible);
        # the prediction uses the forecast disturbance, the plant the real one
        profile = expand_profile(p, par)[:, :n_u]
        n_fine = int(round((t_next - t) / plant.fine_step))
        clipped = False
        x_hat = x_start
        s = t
        for _ in range(n_fine):
            sample = int(np.floor((s - t) / tau_m + _TIME_EPS)) + 1
            sample = min(max(sample, 1), par.horizon)
            u_apply = np.clip(profile[sample - 1], ctrl.bounds.u_min,
                              ctrl.bounds.u_max)
            if np.any(np.abs(u_apply - profile[sample - 1]) > 1e-12):
                clipped = True
            w_guess = w_dev(t) if ctrl.forecast == "hold" else w_dev(s)
            x_hat = (ctrl_fine.a @ x_hat + ctrl_fine.b @ u_apply
                     + ctrl_fine.f[:, 0] * w_guess)
            x_true = (plant_fine.a @ x_true + plant_fine.b @ u_apply
                      + plant_fine.f[:, 0] * w_dev(s))
            if plant.noise_scale > 0:
                x_true = x_true + plant.noise_scale * \
                    np.sqrt(plant.fine_step) * rng.standard_normal(x_true.size)
            u_prev = u_apply
            s += plant.fine_step

        # (c) condense at the predicted state, hot start, iterate exactly q
        w_next = forecast_from(t_next, t)
        prob_next = builder.condense(x_hat, u_prev, w_next)
        floor_next = builder.cost_offset(x_hat, w_next) + ctrl.floor
        p_hot = hot_start_shift(p, par, n_shift)
        j_k_plus = augmented_cost(prob_next, ctrl.penalty, p_hot, floor_next)

        trace = None
        if ctrl.solver == SOLVER_ODE:
            state = gflow.run(prob_next, ctrl.ode_config(floor_next), p_hot, q,
                              step_size=carry_dt if ctrl.carry_step else None)
            if len(state.cost_trace) != q + 1:
                raise InvariantViolation(
                    "gradient-flow solver broke its iteration contract")
            if ctrl.carry_step:
                carry_dt = state.step_size
            p_new = state.iterate
            trace = state.cost_trace
            iterations_used = q
            status = "ok"
            j_hat_next = trace[-1]
        else:
            res = aset.solve(prob_next, warm, p_hot, cap=q)
            if res.iterations_used > q:
                raise InvariantViolation("active-set solver exceeded its cap")
            warm = res.working_set
            p_new = res.iterate
            iterations_used = res.iterations_used
            status = res.status
            j_hat_next = augmented_cost(prob_next, ctrl.penalty, p_new,
                                        floor_next)

        # (d) realized cost: same parameter, same forecast, true state
        prob_true = builder.condense(x_true, u_prev, w_next)
        j_next = augmented_cost(prob_true, ctrl.penalty, p_new,
                                builder.cost_offset(x_true, w_next) + ctrl.floor)

        w_now = w_dev(t_next)
        y_true = (ctrl.model.c @ x_true + ctrl.model.d @ u_prev
                  + ctrl.model.g[:, 0] * w_now)
        y_c = y_true[cidx]
        v_real = np.concatenate([
            np.maximum(y_c - ctrl.bounds.yc_max, 0.0),
            np.maximum(ctrl.bounds.yc_min - y_c, 0.0),
        ])
        stage = float(x_true @ ctrl.weights.q_state @ x_true
                      + u_prev @ ctrl.weights.r_input @ u_prev
                      + v_real @ ctrl.weights.rho_violation @ v_real)

        row = WindowRow(
            index=index, t_start=t, t_end=t_next, q=q,
            iterations_used=iterations_used, solver_status=status,
            x_true=x_true.copy(), y_true=y_true, u_applied=u_prev.copy(),
            v_real=v_real, stage_cost=stage,
            j_k=j_realized, j_k_plus=j_k_plus, j_hat_next=j_hat_next,
            j_next=j_next, e_abs=j_k_plus - j_next, d_abs=j_k_plus - j_realized,
            clipped=clipped,
            p_delivered=p_new.copy(), p_hot=p_hot, x_hat=x_hat,
            u_prev=u_prev.copy(), w_forecast=w_next,
            gamma_bound=prob_next.ineq_bound,
        )

        # (e) updating-period rule (diagnostics logged for every monotonic
        # run; the step is applied only in adaptive mode)
        if trace is not None and q >= 2:
            diag = update_q(collect_inputs(trace, j_realized, j_next, q),
                            ctrl.adaptation_config())
            row.e_r, row.d_r, row.k_r = diag.e_r, diag.d_r, diag.k_r
            row.gamma, row.q_next = diag.gamma, diag.q_next
            if adaptive:
                q = diag.q_next
        record.windows.append(row)

        j_realized = j_next
        p = p_new
        t = t_next
        index += 1

    # tail shorter than one window: keep applying the last profile so the
    # simulated span matches the scenario duration
    n_tail = int(round((scenario.duration - t) / plant.fine_step))
    s = t
    profile = expand_profile(p, par)[:, :n_u]
    for _ in range(n_tail):
        sample = int(np.floor((s - t) / tau_m + _TIME_EPS)) + 1
        sample = min(max(sample, 1), par.horizon)
        u_apply = np.clip(profile[sample - 1], ctrl.bounds.u_min,
                          ctrl.bounds.u_max)
        x_true = (plant_fine.a @ x_true + plant_fine.b @ u_apply
                  + plant_fine.f[:, 0] * w_dev(s))
        if plant.noise_scale > 0:
            x_true = x_true + plant.noise_scale * \
                np.sqrt(plant.fine_step) * rng.standard_normal(x_true.size)
        s += plant.fine_step
    record.final_time = s
    record.final_state = x_true
    return record
