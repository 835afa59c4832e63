"""Condensed MPC problem construction for discrete LTI models.

The control profile over the horizon is parametrized by its values at a few
decision instants (piecewise-affine in between, held after the last), for
both physical inputs and the nonnegative virtual inputs that relax the
output constraints. Condensing eliminates the predicted states, producing a
QP in the parameter vector only. The Hessian and constraint matrix depend
only on the static problem data and are built once; each control update
refreshes just the affine term and the constraint bounds from the current
state, previous input and disturbance forecast.

All quantities are deviations from the operating point; the operating point
only enters when converting applied controls back to absolute units.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .qp import QpProblem


@dataclass(frozen=True)
class LtiModel:
    """x+ = A x + B u + F w,  y = C x + D u + G w, in deviation variables."""

    a: np.ndarray
    b: np.ndarray
    f: np.ndarray
    c: np.ndarray
    d: np.ndarray
    g: np.ndarray
    sample_period: float = 5.0

    def __post_init__(self):
        for name in ("a", "b", "f", "c", "d", "g"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n = self.a.shape[0]
        if self.a.shape != (n, n):
            raise ValueError("A must be square")
        if self.b.shape[0] != n or self.f.shape[0] != n:
            raise ValueError("B and F must have as many rows as A")
        n_y = self.c.shape[0]
        if self.c.shape[1] != n:
            raise ValueError("C must have as many columns as states")
        if self.d.shape != (n_y, self.b.shape[1]) or self.g.shape != (n_y, self.f.shape[1]):
            raise ValueError("D/G dimensions inconsistent with C, B, F")
        if not self.sample_period > 0:
            raise ValueError("sample_period must be positive")

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def n_u(self):
        return self.b.shape[1]

    @property
    def n_w(self):
        return self.f.shape[1]

    @property
    def n_y(self):
        return self.c.shape[0]

    def spectral_radius(self):
        return float(np.abs(np.linalg.eigvals(self.a)).max())


@dataclass(frozen=True)
class OperatingPoint:
    x0: np.ndarray
    u0: np.ndarray
    y0: np.ndarray
    w0: np.ndarray

    def __post_init__(self):
        for name in ("x0", "u0", "y0", "w0"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))

    def check_model(self, model):
        if (self.x0.size, self.u0.size, self.y0.size, self.w0.size) != \
                (model.n, model.n_u, model.n_y, model.n_w):
            raise ValueError("operating point dimensions do not match model")


DECISION_INSTANTS_DEFAULT = (1, 2, 4, 8, 16, 50, 100)
CHECK_INSTANTS_DEFAULT = (1, 2, 3, 4, 6, 8, 16, 24, 32, 48, 60, 72, 84, 100)


@dataclass(frozen=True)
class ControlParametrization:
    """Decision instants carrying the parameter values and check instants
    where output constraints are enforced. Instants are 1-based sample
    indices into the horizon; duplicates are dropped."""

    decision_instants: tuple = DECISION_INSTANTS_DEFAULT
    check_instants: tuple = CHECK_INSTANTS_DEFAULT
    horizon: int = 100
    n_physical: int = 3
    n_virtual: int = 4

    def __post_init__(self):
        dec = tuple(sorted(set(int(i) for i in self.decision_instants)))
        chk = tuple(sorted(set(int(i) for i in self.check_instants)))
        object.__setattr__(self, "decision_instants", dec)
        object.__setattr__(self, "check_instants", chk)
        if not dec or dec[0] < 1 or dec[-1] > self.horizon:
            raise ValueError("decision instants must lie in [1, horizon]")
        if not chk or chk[0] < 1 or chk[-1] > self.horizon:
            raise ValueError("check instants must lie in [1, horizon]")
        if self.n_physical < 1 or self.n_virtual < 0:
            raise ValueError("need at least one physical input")

    @property
    def n_inputs(self):
        return self.n_physical + self.n_virtual

    @property
    def n_param(self):
        # one block of all inputs per decision instant, instant-major
        return self.n_inputs * len(self.decision_instants)


def interpolation_weights(par):
    """(horizon, n_instants) matrix mapping decision values to per-sample
    values: affine between bracketing instants, held outside. Rows sum to 1."""
    dec = np.asarray(par.decision_instants, dtype=float)
    w = np.zeros((par.horizon, len(dec)))
    for j in range(1, par.horizon + 1):
        if j <= dec[0]:
            w[j - 1, 0] = 1.0
        elif j >= dec[-1]:
            w[j - 1, -1] = 1.0
        else:
            k = int(np.searchsorted(dec, j, side="right")) - 1
            gap = dec[k + 1] - dec[k]
            t = (j - dec[k]) / gap
            w[j - 1, k] = 1.0 - t
            w[j - 1, k + 1] = t
    return w


def expand_profile(p, par):
    """Map the parameter vector to the (horizon, n_inputs) control profile."""
    p = np.asarray(p, dtype=float)
    if p.shape != (par.n_param,):
        raise ValueError(f"parameter must have shape ({par.n_param},)")
    values = p.reshape(len(par.decision_instants), par.n_inputs)
    return interpolation_weights(par) @ values


def predict(model, x, profile, w_forecast, j):
    """State after j steps of x+ = A x + B u + F w. Plain rollout, used as
    the oracle the condensed fast path is checked against."""
    if j > profile.shape[0]:
        raise ValueError("j exceeds the provided profile length")
    x = np.asarray(x, dtype=float)
    if x.shape != (model.n,):
        raise ValueError("state dimension mismatch")
    w = np.asarray(w_forecast, dtype=float).reshape(-1, model.n_w)
    for i in range(j):
        x = model.a @ x + model.b @ profile[i, :model.n_u] + model.f @ w[i]
    return x


def hot_start_shift(p, par, shift):
    """Translate the parameter by shift samples: expand, shift left holding
    the last value, re-sample at the decision instants."""
    if shift < 0:
        raise ValueError("shift must be >= 0")
    if shift == 0:
        return np.asarray(p, dtype=float).copy()
    prof = expand_profile(p, par)
    idx = np.minimum(np.arange(par.horizon) + shift, par.horizon - 1)
    shifted = prof[idx]
    rows = np.asarray(par.decision_instants) - 1
    return shifted[rows].reshape(-1).copy()


def first_controls(p, par, q, op=None):
    """Physical-input samples 1..q of the expanded profile; absolute units
    when an operating point is given."""
    if not 1 <= q <= par.horizon:
        raise ValueError("q must lie in [1, horizon]")
    u = expand_profile(p, par)[:q, :par.n_physical]
    if op is not None:
        u = u + op.u0
    return u


def _check_symmetric(mat, name):
    m = np.atleast_2d(np.asarray(mat, dtype=float))
    if m.shape[0] != m.shape[1] or not np.allclose(m, m.T, atol=1e-10):
        raise ValueError(f"{name} must be symmetric")
    return m


@dataclass(frozen=True)
class MpcWeights:
    q_state: np.ndarray       # PSD
    r_input: np.ndarray       # PD
    rho_violation: np.ndarray  # PD

    def __post_init__(self):
        q = _check_symmetric(self.q_state, "q_state")
        r = _check_symmetric(self.r_input, "r_input")
        rho = _check_symmetric(self.rho_violation, "rho_violation")
        if np.linalg.eigvalsh(q).min() < -1e-10:
            raise ValueError("q_state must be positive semidefinite")
        if np.linalg.eigvalsh(r).min() <= 0:
            raise ValueError("r_input must be positive definite")
        if rho.size and np.linalg.eigvalsh(rho).min() <= 0:
            raise ValueError("rho_violation must be positive definite")
        object.__setattr__(self, "q_state", q)
        object.__setattr__(self, "r_input", r)
        object.__setattr__(self, "rho_violation", rho)


@dataclass(frozen=True)
class MpcBounds:
    """Actuator, rate and output limits, in deviation units.

    rate_uprev_inputs selects which physical inputs additionally tie their
    first decision value to the previously applied control; together with
    two-sided rows on every inter-instant link this sets the polyhedral
    rate-row count (default layout: 2*(7*3 - 2) = 38 rows).
    """

    u_min: np.ndarray
    u_max: np.ndarray
    du_max: np.ndarray                  # per-sample rate bound, symmetric
    yc_min: np.ndarray
    yc_max: np.ndarray
    constrained_output_indices: tuple = (0, 1)
    v_max: float = 1e6
    rate_uprev_inputs: tuple = (0,)

    def __post_init__(self):
        for name in ("u_min", "u_max", "du_max", "yc_min", "yc_max"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "constrained_output_indices",
                           tuple(int(i) for i in self.constrained_output_indices))
        object.__setattr__(self, "rate_uprev_inputs",
                           tuple(int(i) for i in self.rate_uprev_inputs))
        if np.any(self.u_min > self.u_max):
            raise ValueError("u_min must not exceed u_max")
        if np.any(self.du_max <= 0):
            raise ValueError("du_max must be positive (bounds are symmetric)")
        if np.any(self.yc_min > self.yc_max):
            raise ValueError("yc_min must not exceed yc_max")
        if not self.v_max > 0:
            raise ValueError("v_max must be positive")

    @classmethod
    def from_absolute(cls, op, constrained_output_indices, u_min, u_max,
                      du_max, yc_low, yc_high, **kw):
        """Build deviation bounds from absolute-unit limits. Output bands
        given with inverted components are sorted, with a warning."""
        idx = tuple(int(i) for i in constrained_output_indices)
        y_ref = op.y0[list(idx)]
        lo = np.asarray(yc_low, dtype=float)
        hi = np.asarray(yc_high, dtype=float)
        if np.any(lo > hi):
            warnings.warn("output bounds inverted for some components; sorting")
            lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
        return cls(
            u_min=np.asarray(u_min, dtype=float) - op.u0,
            u_max=np.asarray(u_max, dtype=float) - op.u0,
            du_max=np.asarray(du_max, dtype=float),
            yc_min=lo - y_ref,
            yc_max=hi - y_ref,
            constrained_output_indices=idx,
            **kw,
        )


@dataclass(frozen=True)
class PredictedTrajectory:
    states: np.ndarray     # (horizon, n)
    inputs: np.ndarray     # (horizon, n_physical)
    virtuals: np.ndarray   # (horizon, n_virtual)
    outputs_c: np.ndarray  # (horizon, n_constrained)


class MpcQpBuilder:
    """Precomputes every state-independent piece of the condensed QP.

    ``condense`` then just assembles three matrix-vector products per
    update. Rows are ordered as: output softening rows grouped per check
    instant (upper bounds for each constrained output, then lower), followed
    by the rate rows.
    """

    def __init__(self, model, par, weights, bounds):
        if model.n_u != par.n_physical:
            raise ValueError("model input count must equal n_physical")
        n_yc = len(bounds.constrained_output_indices)
        if par.n_virtual != 2 * n_yc:
            raise ValueError("n_virtual must be 2 * number of constrained outputs")
        if bounds.u_min.size != par.n_physical or bounds.yc_min.size != n_yc:
            raise ValueError("bounds dimensions inconsistent with parametrization")
        if any(i >= par.n_physical for i in bounds.rate_uprev_inputs):
            raise ValueError("rate_uprev_inputs out of range")
        self.model = model
        self.par = par
        self.weights = weights
        self.bounds = bounds

        n, n_p = model.n, par.n_param
        n_u, n_v = par.n_physical, par.n_virtual
        n_tot = par.n_inputs
        hor, n_w = par.horizon, model.n_w
        inst = par.decision_instants
        n_inst = len(inst)

        w_interp = interpolation_weights(par)
        # per-sample selector blocks of the expansion map, (hor, n_*, n_p)
        eu = np.zeros((hor, n_u, n_p))
        ev = np.zeros((hor, n_v, n_p))
        for i in range(n_inst):
            base = i * n_tot
            for k in range(n_u):
                eu[:, k, base + k] = w_interp[:, i]
            for k in range(n_v):
                ev[:, k, base + n_u + k] = w_interp[:, i]
        self._eu, self._ev = eu, ev

        # state maps x(j) = apow[j] x + m[j] p + nw[j] w_stacked
        apow = np.zeros((hor, n, n))
        m = np.zeros((hor, n, n_p))
        nw = np.zeros((hor, n, hor * n_w))
        acc_a = np.eye(n)
        for j in range(hor):
            acc_a = model.a @ acc_a
            apow[j] = acc_a
            prev_m = m[j - 1] if j else np.zeros((n, n_p))
            prev_n = nw[j - 1] if j else np.zeros((n, hor * n_w))
            m[j] = model.a @ prev_m + model.b @ eu[j]
            nw[j] = model.a @ prev_n
            nw[j][:, j * n_w:(j + 1) * n_w] += model.f
        self._apow, self._m, self._nw = apow, m, nw

        q, r, rho = weights.q_state, weights.r_input, weights.rho_violation
        hess = np.einsum("jan,ab,jbm->nm", m, q, m)
        hess += np.einsum("jan,ab,jbm->nm", eu, r, eu)
        if n_v:
            hess += np.einsum("jan,ab,jbm->nm", ev, rho, ev)
        self.hessian = 0.5 * (hess + hess.T)

        qm = np.einsum("ab,jbm->jam", q, m)
        self._phi_x = 2.0 * np.einsum("jam,jan->mn", qm, apow)       # (n_p, n)
        self._phi_w = 2.0 * np.einsum("jam,jan->mn", qm, nw)         # (n_p, hor*n_w)
        # state-dependent constant of the cost, needed to keep the
        # augmented cost at its true nonnegative value
        self._cxx = np.einsum("jan,ab,jbm->nm", apow, q, apow)
        self._cxw = np.einsum("jan,ab,jbm->nm", apow, q, nw)
        self._cww = np.einsum("jan,ab,jbm->nm", nw, q, nw)

        cidx = list(bounds.constrained_output_indices)
        c_c = model.c[cidx]
        d_c = model.d[cidx]
        g_c = model.g[cidx]
        p_up = np.zeros((n_yc, n_v))
        p_lo = np.zeros((n_yc, n_v))
        p_up[:, :n_yc] = np.eye(n_yc)
        p_lo[:, n_yc:] = np.eye(n_yc)

        rows, g0, gx, gw, gu = [], [], [], [], []
        for s in par.check_instants:
            j = s - 1
            out_p = c_c @ m[j] + d_c @ eu[j]            # (n_yc, n_p)
            out_x = c_c @ apow[j]                       # (n_yc, n)
            out_w = c_c @ nw[j]                         # (n_yc, hor*n_w)
            out_w[:, j * n_w:(j + 1) * n_w] += g_c
            rows.append(out_p - p_up @ ev[j])
            g0.append(bounds.yc_max)
            gx.append(-out_x)
            gw.append(-out_w)
            gu.append(np.zeros((n_yc, n_u)))
            rows.append(-out_p - p_lo @ ev[j])
            g0.append(-bounds.yc_min)
            gx.append(out_x)
            gw.append(out_w)
            gu.append(np.zeros((n_yc, n_u)))
        self.n_output_rows = len(par.check_instants) * 2 * n_yc

        # rate rows: value links per physical input, scaled by the sample gap
        n_rate = 0
        for k in range(n_u):
            links = []
            if k in bounds.rate_uprev_inputs:
                links.append((None, 0, inst[0]))
            links += [(i, i + 1, inst[i + 1] - inst[i]) for i in range(n_inst - 1)]
            for prev, cur, gap in links:
                sel = np.zeros(n_p)
                sel[cur * n_tot + k] = 1.0
                uprev_row = np.zeros(n_u)
                if prev is None:
                    uprev_row[k] = 1.0
                else:
                    sel[prev * n_tot + k] = -1.0
                bound = gap * bounds.du_max[k]
                for sign in (1.0, -1.0):
                    rows.append(sign * sel[None, :])
                    g0.append(np.atleast_1d(bound))
                    gx.append(np.zeros((1, n)))
                    gw.append(np.zeros((1, hor * n_w)))
                    gu.append(sign * uprev_row[None, :])
                    n_rate += 1
        self.n_rate_rows = n_rate

        self.ineq_matrix = np.vstack(rows)
        self._g0 = np.concatenate(g0)
        self._gx = np.vstack(gx)
        self._gw = np.vstack(gw)
        self._gu = np.vstack(gu)

        lower = np.empty(n_p)
        upper = np.empty(n_p)
        for i in range(n_inst):
            base = i * n_tot
            lower[base:base + n_u] = bounds.u_min
            upper[base:base + n_u] = bounds.u_max
            lower[base + n_u:base + n_tot] = 0.0
            upper[base + n_u:base + n_tot] = bounds.v_max
        self.lower, self.upper = lower, upper

    def _w_stack(self, w_forecast):
        w = np.asarray(w_forecast, dtype=float).reshape(self.par.horizon, self.model.n_w)
        return w.reshape(-1)

    def condense(self, x, u_prev, w_forecast):
        """Assemble the QP for the given state, previous applied input and
        disturbance forecast over the horizon."""
        x = np.asarray(x, dtype=float)
        u_prev = np.asarray(u_prev, dtype=float)
        if x.shape != (self.model.n,) or u_prev.shape != (self.par.n_physical,):
            raise ValueError("state or previous-input dimension mismatch")
        wv = self._w_stack(w_forecast)
        affine = self._phi_x @ x + self._phi_w @ wv
        gamma = self._g0 + self._gx @ x + self._gw @ wv + self._gu @ u_prev
        return QpProblem(self.hessian, affine, self.ineq_matrix, gamma,
                         self.lower, self.upper)

    def cost_offset(self, x, w_forecast):
        """State/disturbance constant dropped from the condensed quadratic;
        adding it back recovers the true (nonnegative) predicted cost."""
        x = np.asarray(x, dtype=float)
        wv = self._w_stack(w_forecast)
        return float(x @ self._cxx @ x + 2.0 * x @ self._cxw @ wv + wv @ self._cww @ wv)

    def rollout(self, x, p, w_forecast):
        """Predicted states, inputs, virtuals and constrained outputs under
        parameter p, aligned on samples 1..horizon."""
        x = np.asarray(x, dtype=float)
        wv = self._w_stack(w_forecast)
        prof = expand_profile(p, self.par)
        n_u = self.par.n_physical
        states = (self._apow @ x + self._m @ np.asarray(p, dtype=float)
                  + self._nw @ wv)
        cidx = list(self.bounds.constrained_output_indices)
        w2d = wv.reshape(self.par.horizon, self.model.n_w)
        outputs = (states @ self.model.c[cidx].T
                   + prof[:, :n_u] @ self.model.d[cidx].T
                   + w2d @ self.model.g[cidx].T)
        return PredictedTrajectory(states, prof[:, :n_u], prof[:, n_u:], outputs)

    def violation_profile(self, traj):
        """Samplewise max-based output-constraint violation of a predicted
        trajectory, one row per sample: exceedance above the band plus
        shortfall below it, per constrained output (stacked up, then low)."""
        up = np.maximum(traj.outputs_c - self.bounds.yc_max, 0.0)
        lo = np.maximum(self.bounds.yc_min - traj.outputs_c, 0.0)
        return np.hstack([up, lo])
