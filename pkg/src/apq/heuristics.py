"""Best static, cutoff-static and two-price policies.

Gains of threshold policies are evaluated in batches: every row of a
``(batch, N+1)`` rate matrix is one candidate policy, so grid seeds and the
golden-section refinements for all thresholds run as a handful of numpy
calls instead of thousands of scalar evaluations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from apq._search import golden_max
from apq.chain import Policy, log_weights, normalized
from apq.model import Instance

POSITIVE = 1e-9
"""Gains at or below this (original time units) count as zero."""

CUTOFF_GRID = 129
TWO_PRICE_GRID = 65
MAX_SWEEPS = 50
_BATCH_CELLS = 2_000_000


@dataclass
class CutoffStaticResult:
    K: int
    delta: float
    gain: float
    curve: list = field(default_factory=list)
    """``(K, g_C*(K), delta_K)`` for every threshold that was searched."""

    def policy(self, inst: Instance) -> Policy:
        return Policy.cutoff(inst.N, self.K, self.delta)

    def to_json(self):
        return {
            "K_C": self.K,
            "delta": self.delta,
            "gain": self.gain,
            "curve": [{"K": k, "gain": g, "delta": d} for k, g, d in self.curve],
        }


@dataclass
class TwoPriceResult:
    K: int
    delta_s: float
    delta_q: float
    gain: float
    curve: list = field(default_factory=list)
    """``(K, g_T*(K), delta_s, delta_q)`` per searched threshold."""

    def policy(self, inst: Instance) -> Policy:
        return Policy.two_price(inst.N, inst.m, self.K, self.delta_s, self.delta_q)

    def to_json(self):
        return {
            "K_T": self.K,
            "delta_s": self.delta_s,
            "delta_q": self.delta_q,
            "gain": self.gain,
            "curve": [
                {"K": k, "gain": g, "delta_s": a, "delta_q": b} for k, g, a, b in self.curve
            ],
        }


def _threshold_rates(inst: Instance, K, ds, dq):
    n = np.arange(inst.N + 1)
    K = np.asarray(K)[..., None]
    ds = np.asarray(ds, dtype=float)[..., None]
    dq = np.asarray(dq, dtype=float)[..., None]
    return np.where(n < inst.m, ds, dq) * (n < K)


def threshold_gains(inst: Instance, K, ds, dq) -> np.ndarray:
    """Gains of the policies ``ds`` below ``m``, ``dq`` from ``m`` to ``K-1``, 0 above.

    Arguments broadcast against each other; the result has their shape.
    """
    rates = _threshold_rates(inst, K, ds, dq)
    P = normalized(log_weights(rates, inst.gamma))
    r = inst.distribution._revenue(rates, inst.max_rate) - inst.state_cost
    return np.sum(r * P, axis=-1)


def _cutoff_weights(inst: Instance, K: int, delta: float) -> np.ndarray:
    # a_n(delta) = delta^n / (gamma_1 ... gamma_n) for n <= K, 0 beyond
    n = np.arange(inst.N + 1)
    with np.errstate(divide="ignore"):
        logw = n * np.log(delta) - np.concatenate(([0.0], np.cumsum(np.log(inst.gamma[1:]))))
    logw[0] = 0.0
    logw[n > K] = -np.inf
    return normalized(logw)


def gain_cutoff(inst: Instance, K: int, delta: float) -> float:
    """Gain of the cutoff-static policy with threshold ``K`` and rate ``delta``."""
    if not (0 <= K <= inst.N):
        raise ValueError(f"threshold K must lie in [0, {inst.N}], got {K}")
    if not (0.0 <= delta <= inst.max_rate):
        raise ValueError(f"delta must lie in [0, {inst.max_rate}], got {delta}")
    if K == 0 or delta == 0.0:
        return 0.0
    P = _cutoff_weights(inst, K, delta)
    r_delta = float(inst.revenue_rate(delta)) - inst.state_cost
    r_delta[K] = -inst.state_cost[K]
    return float(np.dot(r_delta[: K + 1], P[: K + 1]))


def _optimize_rate(inst: Instance, Ks: np.ndarray):
    """Per-threshold best single rate: grid seed then golden refinement, vectorized over ``Ks``."""
    Lam = inst.max_rate
    grid = np.linspace(0.0, Lam, CUTOFF_GRID)
    vals = threshold_gains(inst, Ks[:, None], grid[None, :], grid[None, :])
    i = np.argmax(vals, axis=1)
    best_x = grid[i]
    best_v = vals[np.arange(Ks.size), i]
    lo = grid[np.maximum(i - 1, 0)]
    hi = grid[np.minimum(i + 1, CUTOFF_GRID - 1)]
    x, fx = golden_max(lambda d: threshold_gains(inst, Ks, d, d), lo, hi, 1e-9 * Lam)
    better = fx > best_v
    return np.where(better, x, best_x), np.where(better, fx, best_v)


def _cutoff_upper(inst: Instance) -> int | None:
    """Largest threshold worth searching, or ``None`` when no policy can profit."""
    cc = inst.costs
    F = inst.distribution
    if F.survival(min(cc.C_s, cc.C_q)) == 0.0:
        return None
    if cc.C_s <= cc.C_q:
        for b in range(inst.m, inst.N):
            if F.survival(cc.weighted(b, inst.m)) == 0.0:
                return b
    return inst.N


def _pick(gains, tol=POSITIVE):
    """First index whose gain is within ``tol`` of the maximum."""
    gains = np.asarray(gains)
    return int(np.flatnonzero(gains >= np.max(gains) - tol)[0])


def best_cutoff_static(inst: Instance, prune: bool = True) -> CutoffStaticResult:
    """Best threshold/rate pair over cutoff-static policies.

    With ``prune`` the threshold range is narrowed using the zero-profit
    and refined-upper-bound conditions on ``C_s``/``C_q``, and thresholds
    ``1..m-1`` are skipped (they never beat ``K = m``).
    """
    m, N = inst.m, inst.N
    if prune:
        k_max = _cutoff_upper(inst)
        if k_max is None:
            return CutoffStaticResult(K=0, delta=0.0, gain=0.0, curve=[])
        ks = [1] if m > 1 else []
        ks += list(range(m, k_max + 1))
    else:
        ks = list(range(1, N + 1))
    Ks = np.array(ks)
    deltas, gains = _optimize_rate(inst, Ks)
    curve = [(int(k), float(g), float(d)) for k, g, d in zip(Ks, gains, deltas)]
    # with pruning, K=1 (m>1) is only probed; admissible thresholds are 0 and >= m
    cand = [(k, g, d) for k, g, d in curve if not prune or k >= m]
    if not cand or max(g for _, g, _ in cand) <= POSITIVE:
        return CutoffStaticResult(K=0, delta=0.0, gain=0.0, curve=curve)
    j = _pick([g for _, g, _ in cand])
    k, g, d = cand[j]
    return CutoffStaticResult(K=k, delta=d, gain=g, curve=curve)


def best_static(inst: Instance) -> tuple[float, float]:
    """``(delta, g_S*)``: best constant rate with admission until the buffer is full."""
    d, g = _optimize_rate(inst, np.array([inst.N]))
    d, g = float(d[0]), float(g[0])
    if g <= POSITIVE:
        return 0.0, 0.0
    return d, g


def _coordinate_descent(inst, Ks, ds, dq, fv):
    Lam = inst.max_rate
    tol = 1e-9 * Lam
    width = Lam / (TWO_PRICE_GRID - 1)
    for _ in range(MAX_SWEEPS):
        moved = np.zeros(Ks.size)
        for coord in (0, 1):
            x = ds if coord == 0 else dq
            lo = np.clip(x - width, 0.0, Lam)
            hi = np.clip(x + width, 0.0, Lam)
            if coord == 0:
                f = lambda z: threshold_gains(inst, Ks, z, dq)  # noqa: E731
            else:
                f = lambda z: threshold_gains(inst, Ks, ds, z)  # noqa: E731
            nx, nf = golden_max(f, lo, hi, tol)
            # the nearer bracket end is checked too: golden-section never lands on it
            for edge in (lo, hi):
                ef = f(edge)
                take = ef > nf
                nx, nf = np.where(take, edge, nx), np.where(take, ef, nf)
            better = nf > fv
            moved = np.maximum(moved, np.where(better, np.abs(nx - x), 0.0))
            x = np.where(better, nx, x)
            fv = np.where(better, nf, fv)
            if coord == 0:
                ds = x
            else:
                dq = x
        if np.all(moved <= tol):
            break
    return ds, dq, fv


def _two_price_seed(inst: Instance, Ks: np.ndarray):
    grid = np.linspace(0.0, inst.max_rate, TWO_PRICE_GRID)
    ds_grid, dq_grid = np.meshgrid(grid, grid, indexing="ij")
    ds_flat, dq_flat = ds_grid.ravel(), dq_grid.ravel()
    per_k = max(1, _BATCH_CELLS // (ds_flat.size * (inst.N + 1)))
    out_ds, out_dq, out_v = [], [], []
    for start in range(0, Ks.size, per_k):
        chunk = Ks[start : start + per_k]
        vals = threshold_gains(inst, chunk[:, None], ds_flat[None, :], dq_flat[None, :])
        i = np.argmax(vals, axis=1)  # row-major: smallest delta_s, then delta_q
        out_ds.append(ds_flat[i])
        out_dq.append(dq_flat[i])
        out_v.append(vals[np.arange(chunk.size), i])
    return np.concatenate(out_ds), np.concatenate(out_dq), np.concatenate(out_v)


def best_two_price(inst: Instance) -> TwoPriceResult:
    """Best ``(K, delta_s, delta_q)`` over two-price policies with ``K`` in ``m..N``."""
    Ks = np.arange(inst.m, inst.N + 1)
    ds, dq, fv = _two_price_seed(inst, Ks)
    # the diagonal optimum is a two-price policy too; start from it when it beats the grid
    dd, fd = _optimize_rate(inst, Ks)
    diag = fd > fv
    ds, dq, fv = np.where(diag, dd, ds), np.where(diag, dd, dq), np.where(diag, fd, fv)
    ds, dq, fv = _coordinate_descent(inst, Ks, ds, dq, fv)
    curve = [(int(k), float(g), float(a), float(b)) for k, g, a, b in zip(Ks, fv, ds, dq)]
    if np.max(fv) <= POSITIVE:
        return TwoPriceResult(K=0, delta_s=0.0, delta_q=0.0, gain=0.0, curve=curve)
    j = _pick(fv)
    k, g, a, b = curve[j]
    if k == inst.m:
        b = 0.0  # no state uses delta_q
    return TwoPriceResult(K=k, delta_s=a, delta_q=b, gain=g, curve=curve)


def two_price_is_monotone(res: TwoPriceResult, m: int, tol: float) -> bool:
    return res.K <= m or res.delta_s >= res.delta_q - tol
