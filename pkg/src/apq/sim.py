"""Monte-Carlo oracle for the controlled queue.

The chain is simulated at state level: with every clock exponential, the
next event is drawn from the aggregate rates ``lambda_n``, ``min(n,m) mu``,
``min(n,m) theta_s`` and ``(n-m)^+ theta_q``. The identities of customers are
still tracked (FIFO entry to service, a uniformly chosen victim for each
completion or abandonment) so sojourn times can be measured and Little's
law checked against the time-average occupancy.

Each replication draws from its own stream, spawned from the config seed
with :class:`numpy.random.SeedSequence`, and replications are reduced in
index order, so a fixed seed always gives the same estimate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from apq.chain import _as_policy
from apq.model import Instance

BATCHES = 20
"""Equal-width slices of the observation window; standard errors fall back
to batch means when there is a single replication."""


@dataclass(frozen=True)
class SimConfig:
    horizon: float
    warmup: float = 0.0
    replications: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.horizon) and math.isfinite(self.warmup)):
            raise ValueError("horizon and warmup must be finite")
        if not (self.horizon > self.warmup >= 0.0):
            raise ValueError(f"need horizon > warmup >= 0, got horizon={self.horizon}, warmup={self.warmup}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise ValueError(f"replications must be a positive integer, got {self.replications}")
        if int(self.seed) != self.seed or not (0 <= self.seed < 2**64):
            raise ValueError(f"seed must be an integer in [0, 2**64), got {self.seed}")

    @property
    def window(self) -> float:
        return self.horizon - self.warmup


@dataclass
class SimEstimate:
    gain: float
    gain_se: float
    occupancy: np.ndarray
    occupancy_se: np.ndarray
    effective_rate: float
    L: float
    T: float
    little_residual: float
    """Mean of ``L - effective_rate * T`` over replications (or batches)."""
    little_se: float
    replications: int
    events: int
    per_replication_gain: list = field(default_factory=list)

    def gain_z(self, exact: float) -> float:
        if self.gain_se == 0.0:
            return 0.0 if self.gain == exact else math.inf
        return abs(self.gain - exact) / self.gain_se

    def to_json(self) -> dict:
        return {
            "gain": self.gain,
            "gain_se": self.gain_se,
            "occupancy": self.occupancy.tolist(),
            "occupancy_se": self.occupancy_se.tolist(),
            "effective_rate": self.effective_rate,
            "L": self.L,
            "T": self.T,
            "little_residual": self.little_residual,
            "little_se": self.little_se,
            "replications": self.replications,
            "events": self.events,
        }


@numba.njit(cache=True)
def _accrue(occ, n, t0, t1, warmup, width, nb):
    # adds the part of [t0, t1) inside the window to occ[batch, n]
    lo = max(t0, warmup)
    hi = min(t1, warmup + width * nb)
    if lo >= hi:
        return
    b = min(int((lo - warmup) / width), nb - 1)
    while lo < hi:
        end = hi if b == nb - 1 else min(hi, warmup + (b + 1) * width)
        if end > lo:
            occ[b, n] += end - lo
            lo = end
        b += 1


@numba.njit(cache=True)
def _batch_of(t, warmup, width, nb):
    return min(int((t - warmup) / width), nb - 1)


@numba.njit(cache=True)
def _replicate(rng, lam, price, m, mu, theta_s, theta_q, c_s, c_q, warmup, horizon, nb):
    N = lam.size - 1
    width = (horizon - warmup) / nb
    occ = np.zeros((nb, N + 1))
    reward = np.zeros(nb)
    joins = np.zeros(nb)
    soj = np.zeros(nb)
    arrived = np.zeros(N)
    tagged = np.zeros(N, dtype=np.int64)  # batch of arrival, -1 if outside the window
    n = 0
    pending = 0
    t = 0.0
    events = 0
    rs = mu + theta_s
    while True:
        if t >= horizon and pending == 0:
            break
        a = lam[n] if t < horizon else 0.0
        s = min(n, m)
        q = n - s
        total = a + s * rs + q * theta_q
        if total <= 0.0:
            _accrue(occ, n, t, horizon, warmup, width, nb)
            t = horizon
            continue
        t_next = t + rng.standard_exponential() / total
        _accrue(occ, n, t, t_next, warmup, width, nb)
        if t_next >= horizon and a > 0.0:
            # arrivals stop at the horizon; restart there with the remaining clocks
            t = horizon
            continue
        t = t_next
        events += 1
        in_win = warmup < t <= horizon
        b = _batch_of(t, warmup, width, nb) if in_win else -1
        x = rng.random() * total
        if x < a:
            if in_win:
                reward[b] += price[n]
                joins[b] += 1.0
                pending += 1
            arrived[n] = t
            tagged[n] = b
            n += 1
            continue
        x -= a
        if x < s * rs:
            j = min(int(rng.random() * s), s - 1)
            if x >= s * mu and in_win:
                reward[b] -= c_s
        else:
            j = s + min(int(rng.random() * q), q - 1)
            if in_win:
                reward[b] -= c_q
        if tagged[j] >= 0:
            soj[tagged[j]] += t - arrived[j]
            pending -= 1
        for i in range(j, n - 1):
            arrived[i] = arrived[i + 1]
            tagged[i] = tagged[i + 1]
        n -= 1
    return occ, reward, joins, soj, events


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    k = x.shape[0]
    mean = x.mean(axis=0)
    if k < 2:
        return mean, np.zeros_like(mean)
    return mean, x.std(axis=0, ddof=1) / math.sqrt(k)


def simulate(inst: Instance, pol, cfg: SimConfig) -> SimEstimate:
    """Estimate long-run averages of ``pol`` on ``inst`` by simulation from an empty system."""
    pol = _as_policy(inst, pol)
    lam = np.ascontiguousarray(pol.rates, dtype=float)
    price = np.array([inst.price(x) if x > 0 else 0.0 for x in lam], dtype=float)
    children = np.random.SeedSequence(int(cfg.seed)).spawn(cfg.replications)
    W = cfg.window
    nb = BATCHES
    n_idx = np.arange(inst.N + 1)
    units = []  # (gain, occupancy, joins, area, soj) per replication, or per batch
    events = 0
    rep_gain = []
    tot_occ = np.zeros(inst.N + 1)
    tot_joins = tot_soj = 0.0
    for child in children:
        rng = np.random.default_rng(child)
        occ, reward, joins, soj, ev = _replicate(
            rng, lam, price, inst.m, inst.mu, inst.theta_s, inst.theta_q,
            inst.c_s, inst.c_q, cfg.warmup, cfg.horizon, nb,
        )
        events += int(ev)
        holding = inst.c_h * (occ @ n_idx)
        if cfg.replications == 1:
            w = W / nb
            for b in range(nb):
                units.append(((reward[b] - holding[b]) / w, occ[b] / w, joins[b] / w, occ[b] @ n_idx / w, soj[b] / w))
        else:
            o = occ.sum(axis=0)
            units.append(((reward.sum() - holding.sum()) / W, o / W, joins.sum() / W, o @ n_idx / W, soj.sum() / W))
        rep_gain.append(float((reward.sum() - holding.sum()) / W))
        tot_occ += occ.sum(axis=0)
        tot_joins += joins.sum()
        tot_soj += soj.sum()
    gains = [u[0] for u in units]
    g, g_se = _mean_se(gains)
    occ_mean, occ_se = _mean_se([u[1] for u in units])
    resid, resid_se = _mean_se([u[3] - u[4] for u in units])
    occupancy = tot_occ / tot_occ.sum()
    L = float(occupancy @ n_idx)
    return SimEstimate(
        gain=float(g),
        gain_se=float(g_se),
        occupancy=occupancy,
        occupancy_se=occ_se,
        effective_rate=float(tot_joins / (W * cfg.replications)),
        L=L,
        T=float(tot_soj / tot_joins) if tot_joins > 0 else 0.0,
        little_residual=float(resid),
        little_se=float(resid_se),
        replications=cfg.replications,
        events=events,
        per_replication_gain=rep_gain,
    )
