"""Uniformized average-reward MDP and policy-iteration solvers.

Two solvers share the evaluation/improvement machinery:

* :func:`solve_baseline` -- ordinary policy iteration, every state may pick
  any rate in ``[0, max_rate]``;
* :func:`solve_unimodal` -- the same loop, but once the freshly improved
  rates start to fall, the next state's action set is capped at the
  current rate (or always, when ``C_s <= C_q`` makes the optimum monotone).

Gains are reported per unit of original time. The bias ``h`` is identical
in both time scales because the uniformized equation is the continuous one
divided by the uniformization rate.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from apq.chain import Policy, _as_policy
from apq.model import Instance

log = logging.getLogger(__name__)

DEFAULT_MAX_ITER = 10_000


class SolverError(RuntimeError):
    """Numerical failure inside a solver (singular system or no convergence)."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


@dataclass(frozen=True)
class UniformizedMDP:
    inst: Instance
    u: float
    gamma: np.ndarray = field(repr=False)
    """Scaled death probabilities ``gamma_n / u``."""
    cost: np.ndarray = field(repr=False)
    """Scaled per-step cost ``state_cost_n / u``."""

    @property
    def N(self):
        return self.inst.N

    def transition_matrix(self, rates) -> np.ndarray:
        lam = np.asarray(rates, dtype=float) / self.u
        N = self.N
        P = np.zeros((N + 1, N + 1))
        idx = np.arange(N + 1)
        P[idx[:-1], idx[:-1] + 1] = lam[:-1]
        P[idx[1:], idx[1:] - 1] = self.gamma[1:]
        # self-loop mass computed as a remainder keeps each row summing to 1
        P[idx, idx] = 0.0
        P[idx, idx] = 1.0 - P.sum(axis=1)
        return P

    def reward(self, rates) -> np.ndarray:
        rates = np.asarray(rates, dtype=float)
        rev = self.inst.distribution._revenue(rates, self.inst.max_rate)
        return rev / self.u - self.cost


def build(inst: Instance) -> UniformizedMDP:
    u = inst.uniformization_rate
    return UniformizedMDP(inst=inst, u=u, gamma=inst.gamma / u, cost=inst.state_cost / u)


def evaluate_policy(mdp: UniformizedMDP, pol) -> tuple[float, np.ndarray]:
    """Solve ``g e + (I - P) h = r`` with ``h(0) = 0``.

    Returns the gain in original time units and the bias vector.
    """
    pol = _as_policy(mdp.inst, pol)
    N = mdp.N
    P = mdp.transition_matrix(pol.rates)
    r = mdp.reward(pol.rates)
    A = np.empty((N + 1, N + 1))
    A[:, 0] = 1.0
    A[:, 1:] = (np.eye(N + 1) - P)[:, 1:]
    try:
        x = np.linalg.solve(A, r)
    except np.linalg.LinAlgError as exc:
        raise SolverError(
            f"singular evaluation system (N={N}, u={mdp.u}, rates={pol.rates.tolist()})"
        ) from exc
    h = np.concatenate(([0.0], x[1:]))
    resid = np.max(np.abs(x[0] + h - P @ h - r))
    if not resid <= 1e-10 * max(1.0, float(np.max(np.abs(r)))) * max(1.0, float(np.max(np.abs(h)))):
        log.warning("policy evaluation residual %.3g", resid)
    return float(x[0] * mdp.u), h


def improve_policy(mdp: UniformizedMDP, h, action_caps) -> Policy:
    """Greedy rates (smallest maximizer) for ``lam * price(lam) + lam * (h(n+1) - h(n))``."""
    inst = mdp.inst
    N = mdp.N
    rates = np.zeros(N + 1)
    for n in range(N):
        cap = action_caps[n]
        if cap > 0:
            rates[n] = inst.maximize_revenue_plus_linear(h[n + 1] - h[n], cap)[0]
    return Policy(rates)


def bellman_residual(inst: Instance, g: float, h) -> float:
    """``max_n |max_a {r_n(a) + (Q h)_n} - g|`` in original time units, full action sets."""
    gam = inst.gamma
    cost = inst.state_cost
    worst = 0.0
    for n in range(inst.N + 1):
        down = -gam[n] * (h[n] - h[n - 1]) if n > 0 else 0.0
        best = inst.maximize_revenue_plus_linear(h[n + 1] - h[n])[1] if n < inst.N else 0.0
        worst = max(worst, abs(best - cost[n] + down - g))
    return worst


@dataclass
class SolveResult:
    policy: Policy
    gain: float
    bias: np.ndarray
    iterations: int
    wall_time_ns: int
    bellman_residual: float
    solver: str = "unimodal"
    fallback_iterations: int = 0
    check_time_ns: int = 0
    """Time spent verifying the full-action Bellman equation (not in ``wall_time_ns``)."""

    @property
    def wall_time(self) -> float:
        return self.wall_time_ns * 1e-9

    def delta_h(self):
        return np.diff(self.bias)

    def delta2_h(self):
        return np.diff(self.bias, n=2)

    def prices(self, inst: Instance) -> list:
        return [inst.price(x) for x in self.policy.rates]

    def to_json(self, inst: Instance) -> dict:
        return {
            "gain": self.gain,
            "policy": self.policy.rates.tolist(),
            "prices": self.prices(inst),
            "bias": self.bias.tolist(),
            "iterations": self.iterations,
            "wall_time_ns": self.wall_time_ns,
            "residual": self.bellman_residual,
            "solver": self.solver,
        }


def _default_eps(inst, eps):
    if eps is not None:
        return eps
    # the stopping rule cannot be tighter than the inner search can resolve
    res = inst.distribution.search_resolution
    return max(1e-9, 10.0 * res * math.sqrt(inst.N)) * inst.max_rate


def _iterate(inst, eps, max_iter, next_policy, name):
    mdp = build(inst)
    t0 = time.perf_counter_ns()
    pol = Policy.zeros(inst.N)
    seen = {pol.rates.tobytes()}
    for k in range(1, max_iter + 1):
        g, h = evaluate_policy(mdp, pol)
        new = next_policy(mdp, h)
        step = float(np.linalg.norm(new.rates - pol.rates))
        pol = new
        if step <= eps:
            break
        # exact policy iteration never revisits a policy; a repeat means the
        # inner search has hit its rounding floor, so the iterates are final
        key = pol.rates.tobytes()
        if key in seen:
            log.info("%s: policy repeated at iteration %d (step %.3g); stopping", name, k, step)
            break
        seen.add(key)
    else:
        g, h = evaluate_policy(mdp, pol)
        best = SolveResult(pol, g, h, max_iter, time.perf_counter_ns() - t0, math.nan, name)
        raise SolverError(f"{name} policy iteration did not converge in {max_iter} iterations", best)
    g, h = evaluate_policy(mdp, pol)
    return mdp, pol, g, h, k, t0


def solve_baseline(inst: Instance, eps: float | None = None, max_iter: int = DEFAULT_MAX_ITER) -> SolveResult:
    """Plain policy iteration from the all-zero policy."""
    eps = _default_eps(inst, eps)
    caps = np.full(inst.N, inst.max_rate)
    mdp, pol, g, h, k, t0 = _iterate(
        inst, eps, max_iter, lambda mdp, h: improve_policy(mdp, h, caps), "baseline"
    )
    elapsed = time.perf_counter_ns() - t0
    return SolveResult(pol, g, h, k, elapsed, bellman_residual(inst, g, h), "baseline")


def _restricted_improvement(mdp: UniformizedMDP, h, monotone: bool) -> Policy:
    inst = mdp.inst
    N, Lam = inst.N, inst.max_rate
    tie = 1e-12 * Lam
    rates = np.zeros(N + 1)
    cap = Lam
    for n in range(N):
        if cap > 0:
            rates[n] = inst.maximize_revenue_plus_linear(h[n + 1] - h[n], cap)[0]
        if monotone:
            cap = rates[n]
        elif 0 < n < N - 1 and rates[n - 1] > rates[n] + tie:
            cap = rates[n]
        else:
            cap = Lam
    return Policy(rates)


def solve_unimodal(inst: Instance, eps: float | None = None, max_iter: int = DEFAULT_MAX_ITER) -> SolveResult:
    """Policy iteration with action sets shrunk by the uni-modal structure.

    The restricted fixed point is checked against the full-action Bellman
    equation; if some state could still improve, plain iterations continue
    from there (counted in ``fallback_iterations``).
    """
    eps = _default_eps(inst, eps)
    cc = inst.costs
    monotone = cc.C_s <= cc.C_q
    mdp, pol, g, h, k, t0 = _iterate(
        inst, eps, max_iter, lambda mdp, h: _restricted_improvement(mdp, h, monotone), "unimodal"
    )
    t_check = time.perf_counter_ns()
    resid = bellman_residual(inst, g, h)
    check_ns = time.perf_counter_ns() - t_check
    extra = 0
    if resid > _fallback_tol(inst, g):
        log.info("restricted fixed point not optimal (residual %.3g); continuing unrestricted", resid)
        caps = np.full(inst.N, inst.max_rate)
        seen = {pol.rates.tobytes()}
        while extra < max_iter:
            extra += 1
            new = improve_policy(mdp, h, caps)
            step = float(np.linalg.norm(new.rates - pol.rates))
            pol = new
            g, h = evaluate_policy(mdp, pol)
            if step <= eps or pol.rates.tobytes() in seen:
                break
            seen.add(pol.rates.tobytes())
        t_check = time.perf_counter_ns()
        resid = bellman_residual(inst, g, h)
        check_ns += time.perf_counter_ns() - t_check
    # the optimality check is verification, not search: keep it out of the
    # solver time so both solvers are timed up to their final policy only
    elapsed = time.perf_counter_ns() - t0 - check_ns
    return SolveResult(pol, g, h, k + extra, elapsed, resid, "unimodal", extra, check_ns)


def _fallback_tol(inst, g):
    return 1e-9 * max(1.0, abs(g))


def solve(inst: Instance, eps: float | None = None, baseline: bool = False) -> SolveResult:
    return (solve_baseline if baseline else solve_unimodal)(inst, eps)


# -- structure classification ----------------------------------------------


def structure_tol(inst: Instance) -> float:
    return 1e-8 * inst.max_rate


def is_monotone(rates, tol: float) -> bool:
    r = np.asarray(rates)
    return bool(np.all(r[1:] <= r[:-1] + tol))


def peak_index(rates, tol: float) -> int | None:
    """Smallest ``n_hat`` witnessing uni-modality, or ``None`` if the rates are not uni-modal."""
    r = np.asarray(rates)
    N = r.size - 1
    for n_hat in range(N):
        up = np.all(r[:n_hat] <= r[1 : n_hat + 1] + tol)
        down = np.all(r[n_hat:N] >= r[n_hat + 1 :] - tol)
        if up and down:
            return n_hat
    return None


def is_unimodal(rates, tol: float) -> bool:
    return peak_index(rates, tol) is not None
