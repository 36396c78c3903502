"""Birth-death steady state and long-run averages under a fixed policy."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from apq.model import Instance


class Policy:
    """Arrival rates ``lambda_0..lambda_N`` with ``lambda_N = 0``.

    Entries past a zero rate are kept even though their states are
    unreachable, so indices always match the state space.
    """

    __slots__ = ("rates",)

    def __init__(self, rates):
        arr = np.array(rates, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise ValueError("policy needs at least two states")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("policy rates must be finite and nonnegative")
        if arr[-1] != 0.0:
            raise ValueError("policy rate in the full state must be 0")
        arr.setflags(write=False)
        self.rates = arr

    @property
    def N(self) -> int:
        return self.rates.size - 1

    def check(self, inst: Instance) -> "Policy":
        if self.N != inst.N:
            raise ValueError(f"policy has {self.N + 1} states, instance needs {inst.N + 1}")
        if np.any(self.rates > inst.max_rate):
            raise ValueError("policy rate exceeds the maximal arrival rate")
        return self

    @classmethod
    def zeros(cls, N: int) -> "Policy":
        return cls(np.zeros(N + 1))

    @classmethod
    def cutoff(cls, N: int, K: int, delta: float) -> "Policy":
        r = np.zeros(N + 1)
        r[:K] = delta
        r[N] = 0.0
        return cls(r)

    @classmethod
    def two_price(cls, N: int, m: int, K: int, delta_s: float, delta_q: float) -> "Policy":
        r = np.zeros(N + 1)
        n = np.arange(N + 1)
        r[n < min(m, K)] = delta_s
        r[(n >= m) & (n < K)] = delta_q
        r[N] = 0.0
        return cls(r)

    def __repr__(self):
        return f"Policy({self.rates.tolist()})"


def _as_policy(inst: Instance, pol) -> Policy:
    if not isinstance(pol, Policy):
        pol = Policy(pol)
    return pol.check(inst)


@dataclass(frozen=True)
class SteadyState:
    probs: np.ndarray
    weights: np.ndarray
    """Unnormalized product weights ``a_n`` (``a_0 = 1``); may overflow to inf for extreme chains."""


def log_weights(rates, gamma):
    """``log a_n`` for rate arrays of shape ``(..., N+1)``; ``-inf`` marks unreachable states."""
    rates = np.asarray(rates, dtype=float)
    with np.errstate(divide="ignore"):
        steps = np.log(rates[..., :-1]) - np.log(gamma[1:])
    out = np.zeros(rates.shape)
    out[..., 1:] = np.cumsum(steps, axis=-1)
    return out


def normalized(logw):
    """Probabilities from log weights via a log-sum-exp shift."""
    shift = np.max(logw, axis=-1, keepdims=True)
    w = np.exp(logw - shift)
    return w / np.sum(w, axis=-1, keepdims=True)


def steady_state(inst: Instance, pol) -> SteadyState:
    pol = _as_policy(inst, pol)
    logw = log_weights(pol.rates, inst.gamma)
    with np.errstate(over="ignore"):
        weights = np.exp(logw)
    return SteadyState(probs=normalized(logw), weights=weights)


def revenue_and_cost(inst: Instance, pol) -> tuple[float, float]:
    """Long-run average revenue and total cost; their difference is the gain."""
    pol = _as_policy(inst, pol)
    P = steady_state(inst, pol).probs
    rev = inst.distribution._revenue(pol.rates, inst.max_rate)
    return float(np.dot(rev, P)), float(np.dot(inst.state_cost, P))


def gain(inst: Instance, pol) -> float:
    """Long-run average profit per unit of (unscaled) time."""
    pol = _as_policy(inst, pol)
    P = steady_state(inst, pol).probs
    r = inst.distribution._revenue(pol.rates, inst.max_rate) - inst.state_cost
    return float(np.dot(r, P))


def reformulated_gain(inst: Instance, pol) -> float:
    """Gain written as per-arrival net rewards: revenue minus the expected
    lifetime cost each admitted customer will incur, weighted by ``P_n``."""
    pol = _as_policy(inst, pol)
    P = steady_state(inst, pol).probs
    cc = inst.costs
    g, m, N = cc.gamma, inst.m, inst.N
    coeff = np.zeros(N + 1)
    coeff[:m] = cc.C_s
    n = np.arange(m, N)
    coeff[m:N] = g[m] / g[n + 1] * cc.C_s + (g[n + 1] - g[m]) / g[n + 1] * cc.C_q
    lam = pol.rates
    R = inst.distribution._revenue(lam, inst.max_rate) - lam * coeff
    return float(np.dot(R, P))


def effective_arrival_rate(inst: Instance, pol) -> float:
    pol = _as_policy(inst, pol)
    P = steady_state(inst, pol).probs
    return float(np.dot(pol.rates, P))
