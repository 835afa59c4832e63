"""On-line adaptation of the number of solver iterations per control update.

Every update window yields four augmented-cost observations: the realized
cost at the previous delivery (j_k), the hot-start cost on the new problem
before any iteration (j_k_plus), the delivered cost on the predicted state
(j_hat_next) and the realized cost on the true state (j_next). Their ratios
split the per-window cost contraction into a solver-efficiency factor E^r
and a disturbance-plus-shift degradation factor D^r, whose product K^r
drives a projected one-step update of q: move along the sign of the
contraction slope while contraction fails (K^r >= 1), and along the sign of
the expected-response-time slope once it succeeds.

All quantities are ratios of positive costs, so the rule is invariant to
cost scaling and costs no more than a handful of scalar operations.
"""

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class AdaptationInputs:
    q: int                # iterations performed during the elapsed window
    j_k: float            # realized cost at the previous delivery
    j_k_plus: float       # hot-start cost, predicted state
    j_hat_next: float     # delivered cost, predicted state
    j_next: float         # delivered cost, true state
    j_last: float         # trace[q], equals j_hat_next
    j_prev_last: float    # trace[q-1]
    j_first: float        # trace[0], equals j_k_plus

    def __post_init__(self):
        object.__setattr__(self, "q", int(self.q))
        if self.q < 1:
            raise ValueError("q must be >= 1")
        for name in ("j_k", "j_k_plus", "j_hat_next", "j_next",
                     "j_last", "j_prev_last", "j_first"):
            object.__setattr__(self, name, float(getattr(self, name)))
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive "
                                 "(augmented costs are floored above zero)")


@dataclass(frozen=True)
class AdaptationConfig:
    q_max: int = 20
    delta: int = 2
    k_r_guard: float = 1e-9   # band around K^r = 1 where log(K^r)^2 degenerates

    def __post_init__(self):
        if self.q_max < 2:
            raise ValueError("q_max must be >= 2")
        if not 1 <= self.delta <= self.q_max:
            raise ValueError("delta must lie in [1, q_max]")
        if not self.k_r_guard >= 0:
            raise ValueError("k_r_guard must be >= 0")


@dataclass(frozen=True)
class AdaptationDiagnostics:
    e_r: float
    d_r: float
    k_r: float
    dd_dq: float
    de_dq: float
    dk_dq: float
    dtr_dq: float
    gamma: float
    q_next: int


def _sign(x):
    return (x > 0) - (x < 0)


def update_q(inp, cfg):
    """One projected step of the iteration-count update rule.

    The K^r < 1 branch divides by log(K^r)^2; inside the guard band around
    K^r = 1 that slope blows up while only its sign matters, so the
    contraction slope is used instead there.
    """
    if inp.q < 2:
        raise ValueError("updating requires q >= 2")
    e_r = inp.j_hat_next / inp.j_k_plus
    d_r = (inp.j_next * inp.j_k_plus) / (inp.j_hat_next * inp.j_k)
    k_r = e_r * d_r
    dd_dq = (d_r - 1.0) / inp.q
    de_dq = (inp.j_last - inp.j_prev_last) / inp.j_first
    dk_dq = e_r * dd_dq + d_r * de_dq
    log_k = math.log(k_r)
    if k_r >= 1.0:
        gamma = dk_dq
        dtr_dq = math.nan if log_k == 0.0 else \
            (-log_k + (inp.q / k_r) * dk_dq) / log_k**2
    elif abs(log_k) < cfg.k_r_guard:
        gamma = dk_dq
        dtr_dq = math.nan
    else:
        dtr_dq = (-log_k + (inp.q / k_r) * dk_dq) / log_k**2
        gamma = dtr_dq
    q_next = max(2, min(cfg.q_max, inp.q - cfg.delta * _sign(gamma)))
    return AdaptationDiagnostics(e_r, d_r, k_r, dd_dq, de_dq, dk_dq,
                                 dtr_dq, gamma, q_next)


def collect_inputs(trace, j_k, j_next, q):
    """Extract the rule's inputs from a monotonic solver cost trace of
    length q+1 (hot-start cost plus one entry per iteration)."""
    if len(trace) != q + 1:
        raise ValueError(
            f"cost trace has {len(trace)} entries, expected q+1 = {q + 1} "
            "(solver did not honor its iteration contract)")
    return AdaptationInputs(
        q=q,
        j_k=float(j_k),
        j_k_plus=float(trace[0]),
        j_hat_next=float(trace[q]),
        j_next=float(j_next),
        j_last=float(trace[q]),
        j_prev_last=float(trace[q - 1]),
        j_first=float(trace[0]),
    )
