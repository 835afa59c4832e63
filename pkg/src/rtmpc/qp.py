"""Dense QP problem container, penalty-augmented cost and KKT diagnostics.

The problem solved throughout the package is

    min  J0(z) = z^T Phi z + z^T phi
    s.t. Gamma z - gamma <= 0
         z_lo <= z <= z_hi

(note: no 1/2 factor on the quadratic term). Both solvers consume the same
:class:`QpProblem`; the gradient-flow solver additionally works on the
penalty-augmented cost built from :class:`PenaltyConfig`.
"""

from dataclasses import dataclass, field

import numpy as np


class InvariantViolation(RuntimeError):
    """A runtime contract of the toolkit was broken (bad solver trace, budget
    overrun, infeasible timing). CLI entry points turn this into a nonzero
    exit code."""


def _as_vector(x, n, name):
    v = np.asarray(x, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {v.shape}")
    return v


@dataclass(frozen=True)
class QpProblem:
    """Convex QP data: hessian Phi, affine phi, rows Gamma z <= gamma, box."""

    hessian: np.ndarray      # (n_z, n_z), symmetric PSD
    affine: np.ndarray       # (n_z,)
    ineq_matrix: np.ndarray  # (n_c, n_z)
    ineq_bound: np.ndarray   # (n_c,)
    lower: np.ndarray        # (n_z,), -inf allowed
    upper: np.ndarray        # (n_z,), +inf allowed

    def __post_init__(self):
        phi = np.asarray(self.hessian, dtype=float)
        if phi.ndim != 2 or phi.shape[0] != phi.shape[1]:
            raise ValueError(f"hessian must be square, got {phi.shape}")
        n_z = phi.shape[0]
        object.__setattr__(self, "hessian", phi)
        object.__setattr__(self, "affine", _as_vector(self.affine, n_z, "affine"))
        gam = np.asarray(self.ineq_matrix, dtype=float).reshape(-1, n_z)
        object.__setattr__(self, "ineq_matrix", gam)
        object.__setattr__(
            self, "ineq_bound", _as_vector(self.ineq_bound, gam.shape[0], "ineq_bound")
        )
        object.__setattr__(self, "lower", _as_vector(self.lower, n_z, "lower"))
        object.__setattr__(self, "upper", _as_vector(self.upper, n_z, "upper"))

        scale = float(np.abs(phi).max()) if n_z else 0.0
        if not np.allclose(phi, phi.T, atol=1e-9 * max(scale, 1.0), rtol=0.0):
            raise ValueError("hessian is not symmetric")
        eigs = np.linalg.eigvalsh(0.5 * (phi + phi.T))
        spec = float(np.abs(eigs).max()) if n_z else 0.0
        if n_z and eigs.min() < -1e-9 * max(spec, 1.0):
            raise ValueError(
                f"hessian is not positive semidefinite (min eig {eigs.min():.3e})"
            )
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n_z(self):
        return self.hessian.shape[0]

    @property
    def n_c(self):
        return self.ineq_matrix.shape[0]


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalty weight and exponent for the augmented cost.

    exponent >= 2 keeps the augmented cost continuously differentiable;
    the default exponent 2 gives a piecewise-quadratic penalty whose
    Hessian is constant on each activity region.
    """

    weight: float = 1e4
    exponent: float = 2.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError("penalty weight must be positive")
        if not self.exponent >= 2:
            raise ValueError("penalty exponent must be >= 2")


@dataclass(frozen=True)
class KktReport:
    stationarity_residual: float
    max_primal_violation: float
    complementarity_residual: float

    def __post_init__(self):
        for name in ("stationarity_residual", "max_primal_violation",
                     "complementarity_residual"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def quadratic_cost(prob, z):
    """z^T Phi z + z^T phi."""
    z = _as_vector(z, prob.n_z, "z")
    return float(z @ prob.hessian @ z + z @ prob.affine)


def _violations(prob, z):
    """Positive parts of (Gamma z - gamma, z - upper, lower - z)."""
    row = np.maximum(prob.ineq_matrix @ z - prob.ineq_bound, 0.0) \
        if prob.n_c else np.zeros(0)
    up = np.maximum(z - prob.upper, 0.0)
    lo = np.maximum(prob.lower - z, 0.0)
    return row, up, lo


def augmented_cost(prob, cfg, z, floor=1.0):
    """J0(z) plus weighted mu-th-power penalties on all constraint
    violations, plus a positive floor that keeps the value bounded away
    from zero (ratio-based diagnostics divide by it)."""
    if floor < 0:
        raise ValueError("floor must be >= 0")
    z = _as_vector(z, prob.n_z, "z")
    row, up, lo = _violations(prob, z)
    mu, alpha = cfg.exponent, cfg.weight
    pen = alpha * (np.sum(row**mu) + np.sum(up**mu) + np.sum(lo**mu))
    return quadratic_cost(prob, z) + float(pen) + floor


def augmented_gradient(prob, cfg, z):
    """Exact gradient of :func:`augmented_cost` with respect to z."""
    z = _as_vector(z, prob.n_z, "z")
    row, up, lo = _violations(prob, z)
    mu, alpha = cfg.exponent, cfg.weight
    g = 2.0 * (prob.hessian @ z) + prob.affine
    if prob.n_c:
        g = g + alpha * mu * (prob.ineq_matrix.T @ row ** (mu - 1.0))
    g = g + alpha * mu * up ** (mu - 1.0)
    g = g - alpha * mu * lo ** (mu - 1.0)
    return g


def augmented_hessian(prob, cfg, z):
    """Hessian of the augmented cost at z (piecewise constant for mu=2).

    At a point exactly on a constraint boundary the inactive branch is
    used; the gradient is continuous there so the choice only affects
    Newton's local model, never correctness of a converged step.
    """
    z = _as_vector(z, prob.n_z, "z")
    row, up, lo = _violations(prob, z)
    mu, alpha = cfg.exponent, cfg.weight
    h = 2.0 * prob.hessian.copy()
    if prob.n_c:
        active = row > 0.0
        if np.any(active):
            ga = prob.ineq_matrix[active]
            w = alpha * mu * (mu - 1.0) * row[active] ** (mu - 2.0)
            h += (ga.T * w) @ ga
    diag = alpha * mu * (mu - 1.0) * (
        np.where(up > 0, up ** (mu - 2.0), 0.0)
        + np.where(lo > 0, lo ** (mu - 2.0), 0.0)
    )
    h[np.diag_indices_from(h)] += diag
    return h


def project_to_box(prob, z):
    """Clip z into [lower, upper]."""
    return np.minimum(np.maximum(np.asarray(z, dtype=float), prob.lower), prob.upper)


def kkt_report(prob, z, multipliers):
    """First-order optimality residuals at (z, multipliers).

    multipliers stacks [rows (n_c), upper box (n_z), lower box (n_z)],
    all required nonnegative. Stationarity is the inf-norm of
    2 Phi z + phi + Gamma^T lam_rows + lam_up - lam_lo.
    """
    z = _as_vector(z, prob.n_z, "z")
    n_c, n_z = prob.n_c, prob.n_z
    lam = _as_vector(multipliers, n_c + 2 * n_z, "multipliers")
    if np.any(lam < 0):
        raise ValueError("multipliers must be nonnegative (dual feasibility)")
    lam_c, lam_up, lam_lo = lam[:n_c], lam[n_c:n_c + n_z], lam[n_c + n_z:]

    grad = 2.0 * (prob.hessian @ z) + prob.affine + lam_up - lam_lo
    if n_c:
        grad = grad + prob.ineq_matrix.T @ lam_c
    stationarity = float(np.abs(grad).max()) if n_z else 0.0

    row, up, lo = _violations(prob, z)
    primal = float(max(row.max(initial=0.0), up.max(initial=0.0), lo.max(initial=0.0)))

    slacks = np.concatenate([
        prob.ineq_bound - prob.ineq_matrix @ z if n_c else np.zeros(0),
        prob.upper - z,
        z - prob.lower,
    ])
    # a zero multiplier kills the product even against an infinite slack
    comp = np.zeros_like(lam)
    nz = lam != 0.0
    comp[nz] = np.abs(lam[nz] * slacks[nz])
    complementarity = float(comp.max()) if comp.size else 0.0

    return KktReport(stationarity, primal, complementarity)
