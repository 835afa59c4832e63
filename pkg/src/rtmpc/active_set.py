"""Warm-startable primal active-set QP solver with an exact iteration cap.

Constraints are enumerated as rows a_j^T z <= b_j in a fixed order:
polyhedral rows first (0 .. n_c-1), then upper box sides (n_c .. n_c+n_z-1),
then lower box sides. One iteration is one KKT solve on the current working
set plus at most one working-set change; the solver stops at optimality or
when the cap is hit, returning the partial primal iterate in the latter
case. Not monotonic in the augmented-cost sense, so the updating-period
adaptation never drives it.
"""

from dataclasses import dataclass

import numpy as np

_ZERO_STEP = 1e-12   # step floor: smaller ratios are degenerate moves
_DIR_TOL = 1e-11     # ||d||_inf below this counts as a stationary subproblem
_MULT_TOL = 1e-9     # multipliers above -_MULT_TOL count as dual feasible
_FEAS_TOL = 1e-10
_REG = 1e-9          # Tikhonov fallback when the KKT system is singular


@dataclass(frozen=True)
class WorkingSet:
    """Ordered active constraint identifiers with independent gradients."""

    active_indices: tuple

    def __post_init__(self):
        object.__setattr__(self, "active_indices", tuple(self.active_indices))


@dataclass(frozen=True)
class ActiveSetResult:
    iterate: np.ndarray
    working_set: WorkingSet
    iterations_used: int
    status: str                 # optimal | iteration_capped | infeasible_subproblem
    multipliers: np.ndarray     # length n_c + 2*n_z, zeros off the working set
    trajectory: tuple           # iterate after each completed iteration


def _constraint_rows(prob):
    """Stack (A, b) for polyhedral rows, upper box, lower box."""
    n_z = prob.n_z
    eye = np.eye(n_z)
    a = np.vstack([prob.ineq_matrix, eye, -eye]) if prob.n_c else np.vstack([eye, -eye])
    b = np.concatenate([prob.ineq_bound, prob.upper, -prob.lower])
    return a, b


def _independent_subset(a, indices):
    """Greedily keep indices whose rows stay linearly independent."""
    kept = []
    rows = np.zeros((0, a.shape[1]))
    for j in indices:
        cand = np.vstack([rows, a[j]])
        if np.linalg.matrix_rank(cand, tol=1e-10) == cand.shape[0]:
            kept.append(int(j))
            rows = cand
        if len(kept) == a.shape[1]:
            break
    return kept


def _extends_rank(a, work, j):
    rows = a[work + [j]]
    return np.linalg.matrix_rank(rows, tol=1e-10) == rows.shape[0]


def _kkt_solve(h, a_w, g, resid):
    """Solve [h a_w^T; a_w 0] [d; lam] = [-g; resid].

    resid = b_W - A_W z restores working-set rows to their bounds, which is
    0 for already-active rows and positive for tolerated violated rows. The
    plain system is tried first; a Tikhonov-regularized Hessian is the
    fallback when it is singular (Phi only positive semidefinite on the
    working-set null space). Returns None when even that fails.
    """
    n, m = h.shape[0], a_w.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = h
    kkt[:n, n:] = a_w.T
    kkt[n:, :n] = a_w
    rhs = np.concatenate([-g, resid])
    scale = max(1.0, float(np.abs(rhs).max()))
    for attempt in range(2):
        try:
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            sol = None
        if sol is not None and np.all(np.isfinite(sol)) \
                and np.abs(kkt @ sol - rhs).max() <= 1e-8 * scale:
            return sol[:n], sol[n:]
        if attempt == 0:
            kkt[:n, :n] = h + _REG * np.eye(n)
    return None, None


def solve(prob, warm=None, z0=None, cap=100):
    """Run the capped primal active-set iteration.

    A box-infeasible start is clipped; polyhedral infeasibility is tolerated
    by seeding the working set with the most violated rows, which the next
    equality-constrained steps land back on. Remaining violated rows are
    pulled into the working set whenever the subproblem is stationary, so an
    ``optimal`` status always certifies a primal-feasible KKT point. Ties in
    the ratio test and in multiplier removal go to the lowest constraint
    index (Bland-style, which also rules out cycling).
    """
    if cap < 1:
        raise ValueError("iteration cap must be >= 1")
    n_z, n_c = prob.n_z, prob.n_c
    m = n_c + 2 * n_z
    a, b = _constraint_rows(prob)
    h = 2.0 * prob.hessian

    z = np.minimum(np.maximum(
        np.zeros(n_z) if z0 is None else np.asarray(z0, dtype=float),
        prob.lower), prob.upper)

    # seed: warm-start identifiers first, then the most violated rows at the
    # (clipped) start point, keeping gradients independent; landing on the
    # violated rows in one equality step is what makes infeasible hot starts
    # cheap instead of a one-row-per-stationarity crawl
    seed = [j for j in warm.active_indices if 0 <= j < m] if warm is not None else []
    viol = a @ z - b
    seed += [int(j) for j in np.argsort(-viol)
             if viol[j] > _FEAS_TOL and int(j) not in seed]
    work = _independent_subset(a, seed)

    def worst_violation(point):
        viol = a @ point - b
        viol[work] = 0.0
        j = int(np.argmax(viol))
        return (j, viol[j]) if viol[j] > _FEAS_TOL else (-1, 0.0)

    lam_full = np.zeros(m)
    status = "iteration_capped"
    trajectory = []
    iterations = 0
    zero_streak = 0      # consecutive iterations without primal movement
    stall_limit = n_z + 16
    for iterations in range(1, cap + 1):
        # long degenerate stalls switch constraint selection to pure
        # lowest-index (Bland) until the iterate moves again
        bland = zero_streak > stall_limit
        a_w = a[work] if work else np.zeros((0, n_z))
        g = 2.0 * (prob.hessian @ z) + prob.affine
        d, lam_w = _kkt_solve(h, a_w, g, b[work] - a_w @ z)
        if d is None:
            status = "infeasible_subproblem"
            break

        if np.abs(d).max(initial=0.0) <= _DIR_TOL:
            zero_streak += 1
            # stationary on the working set: first restore any tolerated
            # violation, then certify optimality or drop a constraint
            j_bad, _ = worst_violation(z)
            if j_bad >= 0:
                if _extends_rank(a, work, j_bad):
                    work.append(j_bad)
                else:
                    # violated row depends on the working set; progress needs
                    # relaxing a row it leans on with positive weight, and if
                    # none exists the rows prove the problem infeasible
                    coef, *_ = np.linalg.lstsq(a[work].T, a[j_bad], rcond=None)
                    pos = [i for i in range(len(work)) if coef[i] > 1e-10]
                    if not pos:
                        status = "infeasible_subproblem"
                        break
                    if bland:
                        drop = min(work[i] for i in pos)
                    else:
                        _, drop = min((-coef[i], work[i]) for i in pos)
                    work.remove(drop)
                trajectory.append(z.copy())
                continue
            if work:
                lam_w, *_ = np.linalg.lstsq(a_w.T, -g, rcond=None)
            if not work or lam_w.min() >= -_MULT_TOL:
                lam_full = np.zeros(m)
                if work:
                    lam_full[work] = np.maximum(lam_w, 0.0)
                status = "optimal"
                trajectory.append(z.copy())
                break
            negs = [i for i in range(len(work)) if lam_w[i] < -_MULT_TOL]
            if bland:
                drop = min(work[i] for i in negs)
            else:
                _, drop = min((lam_w[i], work[i]) for i in negs)
            work.remove(drop)
            trajectory.append(z.copy())
            continue

        # ratio test against rows outside the working set that the step
        # approaches from their feasible side
        step = 1.0
        blocker = -1
        ad = a @ d
        slack = b - a @ z
        for j in range(m):
            if j in work or ad[j] <= _DIR_TOL or not np.isfinite(b[j]):
                continue
            if slack[j] < -_FEAS_TOL:
                continue  # tolerated violated row: handled at stationarity
            t = max(slack[j], 0.0) / ad[j]
            if t < step - _ZERO_STEP:
                step, blocker = t, j
        if step < _ZERO_STEP:
            step = 0.0
            zero_streak += 1
        else:
            zero_streak = 0
        z = z + step * d
        if blocker >= 0:
            if _extends_rank(a, work, blocker):
                work.append(blocker)
            else:
                # dependent blocker: relax the working-set row it leans on
                # hardest; with no positively-weighted row the blocker plus
                # working set prove infeasibility
                coef, *_ = np.linalg.lstsq(a[work].T, a[blocker], rcond=None)
                pos = [i for i in range(len(work)) if coef[i] > 1e-10]
                if not pos:
                    status = "infeasible_subproblem"
                    trajectory.append(z.copy())
                    break
                if bland:
                    drop = min(work[i] for i in pos)
                else:
                    _, drop = min((-coef[i], work[i]) for i in pos)
                work.remove(drop)
        trajectory.append(z.copy())
        if blocker < 0 and step == 1.0:
            # full unblocked step lands on the subproblem optimum whose
            # multipliers the KKT solve already produced: certify now
            j_bad, _ = worst_violation(z)
            if j_bad < 0 and (not work or lam_w.min() >= -_MULT_TOL):
                lam_full = np.zeros(m)
                if work:
                    lam_full[work] = np.maximum(lam_w, 0.0)
                status = "optimal"
                break

    return ActiveSetResult(
        iterate=z,
        working_set=WorkingSet(tuple(work)),
        iterations_used=iterations,
        status=status,
        multipliers=lam_full,
        trajectory=tuple(trajectory),
    )
