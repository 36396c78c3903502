"""Analytic performance guarantees for the threshold heuristics.

:func:`bound_report` evaluates, for one solved instance, the revenue lower
bound and cost upper bound of cutoff-static policies run at the optimal
policy's effective arrival rate, the optimality-gap bound of the best
two-price policy, and the 15/19 ratio guarantee where its hypotheses hold.
Each bound is paired with the realized quantity so callers can check it.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from apq import chain
from apq._search import golden_max
from apq.chain import Policy, log_weights, normalized
from apq.heuristics import (
    CutoffStaticResult,
    TwoPriceResult,
    best_cutoff_static,
    best_two_price,
)
from apq.mdp import SolveResult
from apq.model import Instance

RATIO_15_19 = 15.0 / 19.0
SERIES_RTOL = 1e-15


def erlang_a_infinite(inst: Instance) -> tuple[float, float]:
    """Idle-server and all-busy probabilities at rate ``max_rate`` with unlimited buffer.

    The product-form series is summed in log space and truncated once it
    is decreasing and the next term is below ``SERIES_RTOL`` of the partial sum.
    """
    Lam, m = inst.max_rate, inst.m
    rs, tq = inst.mu + inst.theta_s, inst.theta_q
    log_terms = [0.0]
    logt = 0.0
    n = 0
    while True:
        n += 1
        gam = min(n, m) * rs + max(n - m, 0) * tq
        logt += math.log(Lam) - math.log(gam)
        log_terms.append(logt)
        if n > m and Lam < gam:
            top = max(log_terms)
            if logt - top - math.log(sum(math.exp(t - top) for t in log_terms)) < math.log(SERIES_RTOL):
                break
    t = np.array(log_terms)
    w = np.exp(t - t.max())
    total = w.sum()
    return float(w[:m].sum() / total), float(w[m:].sum() / total)


def _cutoff_probs(inst: Instance, K: int, deltas) -> np.ndarray:
    n = np.arange(inst.N + 1)
    rates = np.asarray(deltas, dtype=float)[:, None] * (n < K)
    return normalized(log_weights(rates, inst.gamma))


def _cost_case(inst: Instance):
    a_s = inst.c_s * inst.theta_s
    a_q = inst.c_q * inst.theta_q
    if a_q >= a_s > 0:
        return 1
    if a_s >= a_q > 0:
        return 2
    return None


def cost_bound_factor(inst: Instance, K: int, case: int) -> float:
    """``max_delta`` of the steady-state ratio multiplying the optimal cost.

    At ``delta -> 0`` the ratio tends to ``M / gamma_1`` (case 1) or
    ``(1 + coef) M / gamma_1`` (case 2), with ``M = max(mu + theta_s, theta_q)``;
    that limit is included as a candidate.
    """
    M = max(inst.mu + inst.theta_s, inst.theta_q)
    n = np.arange(inst.N + 1)
    a_s = inst.c_s * inst.theta_s
    a_q = inst.c_q * inst.theta_q
    if case == 1:
        coef = (a_q - a_s) / (inst.c_h + a_s)
        extra_w = np.where((n >= inst.m + 1) & (n <= K), n, 0)
    else:
        coef = (a_s - a_q) / (inst.c_h + a_q)
        extra_w = np.where((n >= 1) & (n <= K), np.minimum(n, inst.m), 0)
    main_w = np.where(n <= K, n, 0)
    g1 = inst.gamma[1]
    limit = M / g1 * (1.0 + (coef if case == 2 else 0.0))

    def phi(d):
        d = np.atleast_1d(np.asarray(d, dtype=float))
        P = _cutoff_probs(inst, K, d)
        return (P @ main_w + coef * (P @ extra_w)) * M / d

    Lam = inst.max_rate
    grid = np.linspace(0.0, Lam, 129)[1:]
    vals = phi(grid)
    i = int(np.argmax(vals))
    best = float(vals[i])
    lo = grid[i - 1] if i > 0 else grid[0] * 1e-6
    hi = grid[min(i + 1, grid.size - 1)]
    _, fx = golden_max(phi, lo, hi, 1e-9 * Lam)
    return max(best, float(fx), limit)


@dataclass
class CutoffBound:
    K: int
    revenue: float
    revenue_lower_bound: float
    revenue_ok: bool | None
    cost: float
    cost_upper_bound: float | None
    cost_ok: bool | None


@dataclass
class BoundReport:
    regular: bool
    g_star: float
    C_s: float
    C_q: float
    effective_rate: float
    revenue_opt: float
    cost_opt: float
    myopic_R_s: float
    myopic_R_q: float
    myopic_delta_s: float
    myopic_delta_q: float
    P_s_T: float
    P_q_T: float
    P_N_T: float
    P_s_inf: float
    P_q_inf: float
    cost_case: int | None
    cutoff: list = field(default_factory=list)
    g_T: float | None = None
    g_C: float | None = None
    gap_case: str | None = None
    gap_bound: float | None = None
    gap_ok: bool | None = None
    ratio_15_19_applicable: bool = False
    ratio_C: float | None = None
    ratio_15_19_ok: bool | None = None

    def slack(self) -> float:
        return 1e-7 * (1.0 + abs(self.g_star))

    def all_ok(self) -> bool:
        flags = [self.gap_ok, self.ratio_15_19_ok]
        for c in self.cutoff:
            flags += [c.revenue_ok, c.cost_ok]
        return all(f is not False for f in flags)

    def to_json(self) -> dict:
        out = asdict(self)
        out["all_ok"] = self.all_ok()
        return out


def _cutoff_bound(inst, K, delta_hat, R_opt, C_opt, case, tol) -> CutoffBound:
    R_K, C_K = chain.revenue_and_cost(inst, Policy.cutoff(inst.N, K, delta_hat))
    head = log_weights(np.full(inst.N + 1, inst.max_rate), inst.gamma)[: K + 1]
    tail_share = float(normalized(head)[K])
    r_lb = R_opt * (1.0 - tail_share)
    c_ub = None if case is None else C_opt * cost_bound_factor(inst, K, case)
    return CutoffBound(
        K=K,
        revenue=R_K,
        revenue_lower_bound=r_lb,
        revenue_ok=bool(R_K >= r_lb - tol) if inst.distribution.regular else None,
        cost=C_K,
        cost_upper_bound=c_ub,
        cost_ok=None if c_ub is None else bool(C_K <= c_ub + tol),
    )


def bound_report(
    inst: Instance,
    solve: SolveResult,
    two_price: TwoPriceResult | None = None,
    cutoff: CutoffStaticResult | None = None,
) -> BoundReport:
    """Evaluate every applicable guarantee for ``inst`` given its optimal solution."""
    F = inst.distribution
    cc = inst.costs
    g_star = solve.gain
    lam_opt = solve.policy
    delta_hat = chain.effective_arrival_rate(inst, lam_opt)
    R_opt, C_opt = chain.revenue_and_cost(inst, lam_opt)

    d_s, R_s = inst.maximize_revenue_plus_linear(-cc.C_s)
    d_q, R_q = inst.maximize_revenue_plus_linear(-cc.C_q)
    P_T = chain.steady_state(inst, Policy.two_price(inst.N, inst.m, inst.N, d_s, d_q)).probs
    P_s_T = float(P_T[: inst.m].sum())
    P_N_T = float(P_T[inst.N])
    P_q_T = float(1.0 - P_s_T - P_N_T) if inst.N > inst.m else 0.0
    P_s_inf, P_q_inf = erlang_a_infinite(inst)

    rep = BoundReport(
        regular=F.regular, g_star=g_star, C_s=cc.C_s, C_q=cc.C_q,
        effective_rate=delta_hat, revenue_opt=R_opt, cost_opt=C_opt,
        myopic_R_s=R_s, myopic_R_q=R_q, myopic_delta_s=d_s, myopic_delta_q=d_q,
        P_s_T=P_s_T, P_q_T=P_q_T, P_N_T=P_N_T, P_s_inf=P_s_inf, P_q_inf=P_q_inf,
        cost_case=_cost_case(inst),
    )
    tol = rep.slack()

    for K in range(inst.m, inst.N + 1):
        rep.cutoff.append(_cutoff_bound(inst, K, delta_hat, R_opt, C_opt, rep.cost_case, tol))

    if F.regular:
        tp = two_price if two_price is not None else best_two_price(inst)
        rep.g_T = tp.gain
        if cc.C_s <= cc.C_q:
            rep.gap_case = "C_s<=C_q"
            rep.gap_bound = (R_s - R_q) * P_q_T + R_s * P_N_T
        else:
            rep.gap_case = "C_s>C_q"
            rep.gap_bound = (R_q - R_s) * (P_q_inf - P_q_T) + d_q * (cc.C_s - cc.C_q) * P_q_T + R_s * P_N_T
        rep.gap_ok = bool(g_star - tp.gain <= rep.gap_bound + tol)

    applies = (
        F.survival(cc.C_s) > 0
        and cc.C_s <= cc.C_q
        and inst.N > inst.m
        and F.survival(cc.weighted(inst.m, inst.m)) == 0
    )
    rep.ratio_15_19_applicable = bool(applies)
    if applies and g_star > 0:
        cs = cutoff if cutoff is not None else best_cutoff_static(inst)
        rep.g_C = cs.gain
        rep.ratio_C = cs.gain / g_star
        rep.ratio_15_19_ok = bool(rep.ratio_C >= RATIO_15_19 - 1e-7)
    return rep


def tightness_ratios(inst: Instance, solve: SolveResult, K: int = 1) -> tuple[float, float]:
    """``(revenue bound / realized revenue, realized cost / cost bound)`` at threshold ``K``.

    Both are at most one when the guarantees hold; values near one mean
    the guarantee is tight.
    """
    delta_hat = chain.effective_arrival_rate(inst, solve.policy)
    R_opt, C_opt = chain.revenue_and_cost(inst, solve.policy)
    row = _cutoff_bound(inst, K, delta_hat, R_opt, C_opt, _cost_case(inst), 0.0)
    rev = row.revenue_lower_bound / row.revenue
    cost = float(row.cost / row.cost_upper_bound) if row.cost_upper_bound else math.nan
    return rev, cost
