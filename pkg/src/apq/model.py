"""System parameters, willingness-to-pay distributions and derived constants.

All rates and costs are stored in the original time unit. The rescaling
that makes the uniformization constant equal to one lives in
:mod:`apq.mdp` only.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from apq._search import golden_max


class InstanceError(ValueError):
    """Raised for invalid parameters or malformed instance files."""


class EvaluationDistribution:
    """Customer willingness-to-pay law.

    Subclasses supply :meth:`survival` and :meth:`quantile`; the generic
    :meth:`maximize_linear` then runs a golden-section search, which is
    valid whenever the revenue curve is concave (``regular`` is true).
    Built-in distributions override it with closed forms.
    """

    regular: bool = True
    search_resolution = 1e-7
    """Relative accuracy of the maximizer returned by :meth:`maximize_linear`.

    Golden-section search on function values cannot locate a smooth maximum
    much closer than ``sqrt(machine eps)``; closed-form subclasses set 0.
    """

    def survival(self, p):
        raise NotImplementedError

    def quantile(self, y):
        raise NotImplementedError

    @property
    def max_price(self) -> float:
        """Price that stops all arrivals (``quantile(0)``)."""
        return float(self.quantile(0.0))

    def _revenue(self, lam, max_rate):
        lam = np.asarray(lam, dtype=float)
        pos = lam > 0
        y = np.where(pos, lam / max_rate, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(pos, lam * self.quantile(y), 0.0)
        return out if out.ndim else float(out)

    def revenue_rate(self, lam, max_rate: float):
        """Revenue per unit time ``lam * quantile(lam / max_rate)``, zero at ``lam = 0``."""
        arr = np.asarray(lam, dtype=float)
        if np.any(arr < 0) or np.any(arr > max_rate):
            raise ValueError(f"arrival rate outside [0, {max_rate}]: {lam}")
        return self._revenue(arr, max_rate)

    def _generic_argmax(self, c: float, upper: float, max_rate: float):
        def psi(x):
            return self._revenue(x, max_rate) + c * np.asarray(x)

        x, fx = golden_max(psi, 0.0, upper, 1e-10 * max_rate)
        f_up = float(psi(upper))
        if f_up > fx:
            x, fx = upper, f_up
        # smallest maximizer: zero wins any near-tie
        if 0.0 >= fx - 1e-12 * max(1.0, abs(fx)):
            return 0.0, 0.0
        return float(x), float(fx)

    def maximize_linear(self, c: float, upper: float, max_rate: float):
        """Smallest maximizer of ``revenue_rate(lam) + c * lam`` over ``[0, upper]``.

        Returns ``(lam_star, value)``.
        """
        _check_upper(upper, max_rate)
        return self._generic_argmax(c, upper, max_rate)

    def to_json(self) -> dict:
        raise NotImplementedError


def _check_upper(upper, max_rate):
    if not (0.0 < upper <= max_rate):
        raise ValueError(f"upper must lie in (0, {max_rate}], got {upper}")


@dataclass(frozen=True)
class Uniform(EvaluationDistribution):
    a: float
    b: float
    search_resolution = 0.0

    def __post_init__(self):
        if not (0.0 <= self.a < self.b < math.inf):
            raise InstanceError(f"uniform support needs 0 <= a < b < inf, got ({self.a}, {self.b})")

    def survival(self, p):
        out = np.clip((self.b - np.asarray(p, dtype=float)) / (self.b - self.a), 0.0, 1.0)
        return out if out.ndim else float(out)

    def quantile(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y > 1):
            raise ValueError(f"probability outside [0, 1]: {y}")
        out = self.b - (self.b - self.a) * y
        return out if out.ndim else float(out)

    def _revenue(self, lam, max_rate):
        lam = np.asarray(lam, dtype=float)
        out = lam * (self.b - (self.b - self.a) * lam / max_rate)
        return out if out.ndim else float(out)

    def maximize_linear(self, c, upper, max_rate):
        _check_upper(upper, max_rate)
        lam = max_rate * (self.b + c) / (2.0 * (self.b - self.a))
        lam = min(max(lam, 0.0), upper)
        return lam, float(self._revenue(lam, max_rate) + c * lam)

    def to_json(self):
        return {"kind": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Exponential(EvaluationDistribution):
    mean: float
    search_resolution = 0.0

    def __post_init__(self):
        if not (self.mean > 0 and math.isfinite(self.mean)):
            raise InstanceError(f"exponential mean must be positive, got {self.mean}")

    @property
    def max_price(self):
        return math.inf

    def survival(self, p):
        out = np.exp(-np.asarray(p, dtype=float) / self.mean)
        return out if out.ndim else float(out)

    def quantile(self, y):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y > 1):
            raise ValueError(f"probability outside [0, 1]: {y}")
        with np.errstate(divide="ignore"):
            out = -self.mean * np.log(y)
        out = out + 0.0  # turn -0.0 at y=1 into 0.0
        return out if out.ndim else float(out)

    def _revenue(self, lam, max_rate):
        lam = np.asarray(lam, dtype=float)
        pos = lam > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(pos, -self.mean * lam * np.log(np.where(pos, lam / max_rate, 1.0)), 0.0)
        return out if out.ndim else float(out)

    def maximize_linear(self, c, upper, max_rate):
        _check_upper(upper, max_rate)
        expo = c / self.mean - 1.0
        lam = max_rate * math.exp(expo) if expo < 700 else math.inf
        lam = min(lam, upper)
        return lam, float(self._revenue(lam, max_rate) + c * lam)

    def to_json(self):
        return {"kind": "exponential", "mean": self.mean}


def distribution_from_json(obj: dict) -> EvaluationDistribution:
    if not isinstance(obj, dict):
        raise InstanceError("distribution must be a JSON object")
    kind = obj.get("kind")
    if kind == "uniform":
        allowed = {"kind", "a", "b"}
    elif kind == "exponential":
        allowed = {"kind", "mean"}
    else:
        raise InstanceError(f"unknown distribution kind: {kind!r}")
    extra = set(obj) - allowed
    if extra:
        raise InstanceError(f"unknown distribution keys: {sorted(extra)}")
    missing = allowed - set(obj)
    if missing:
        raise InstanceError(f"missing distribution keys: {sorted(missing)}")
    try:
        if kind == "uniform":
            return Uniform(float(obj["a"]), float(obj["b"]))
        return Exponential(float(obj["mean"]))
    except (TypeError, ValueError) as exc:
        raise InstanceError(str(exc)) from exc


@dataclass(frozen=True)
class CostCoefficients:
    """Per-customer cost constants and the death-rate sequence."""

    C_s: float
    C_q: float
    gamma: np.ndarray = field(repr=False)

    def weighted(self, n: int, m: int) -> float:
        """Cost coefficient ``(g_m/g_{n+1}) C_s + ((g_{n+1}-g_m)/g_{n+1}) C_q`` for ``n >= m``."""
        g = self.gamma
        return g[m] / g[n + 1] * self.C_s + (g[n + 1] - g[m]) / g[n + 1] * self.C_q


_JSON_KEYS = ("lambda", "mu", "m", "N", "theta_s", "theta_q", "c_h", "c_s", "c_q", "distribution")


@dataclass(frozen=True)
class Instance:
    """One M/M/m+M pricing problem.

    Attributes follow the usual queueing names: ``max_rate`` is the
    potential arrival rate, ``N`` the total capacity including servers.
    """

    max_rate: float
    mu: float
    m: int
    N: int
    theta_s: float
    theta_q: float
    c_h: float
    c_s: float
    c_q: float
    distribution: EvaluationDistribution

    def __post_init__(self):
        for name in ("max_rate", "mu", "theta_q"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InstanceError(f"{name} must be positive and finite, got {v}")
        for name in ("theta_s", "c_h", "c_s", "c_q"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InstanceError(f"{name} must be nonnegative and finite, got {v}")
        if int(self.m) != self.m or self.m < 1:
            raise InstanceError(f"m must be a positive integer, got {self.m}")
        if int(self.N) != self.N or self.N < self.m:
            raise InstanceError(f"N must be an integer >= m, got {self.N}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "N", int(self.N))
        if not isinstance(self.distribution, EvaluationDistribution):
            raise InstanceError("distribution must be an EvaluationDistribution")

    # -- derived quantities -------------------------------------------------

    @property
    def uniformization_rate(self) -> float:
        return self.max_rate + self.m * (self.mu + self.theta_s) + (self.N - self.m) * self.theta_q

    @property
    def gamma(self) -> np.ndarray:
        """Death rates ``gamma_0..gamma_N``."""
        n = np.arange(self.N + 1)
        return np.minimum(n, self.m) * (self.mu + self.theta_s) + np.maximum(n - self.m, 0) * self.theta_q

    @property
    def state_cost(self) -> np.ndarray:
        """Cost rate ``n c_h + min(n,m) c_s theta_s + (n-m)^+ c_q theta_q`` per state."""
        n = np.arange(self.N + 1)
        return (
            n * self.c_h
            + np.minimum(n, self.m) * self.c_s * self.theta_s
            + np.maximum(n - self.m, 0) * self.c_q * self.theta_q
        )

    @property
    def costs(self) -> CostCoefficients:
        return CostCoefficients(
            C_s=(self.c_h + self.c_s * self.theta_s) / (self.mu + self.theta_s),
            C_q=self.c_h / self.theta_q + self.c_q,
            gamma=self.gamma,
        )

    def revenue_rate(self, lam):
        return self.distribution.revenue_rate(lam, self.max_rate)

    def maximize_revenue_plus_linear(self, c: float, upper: float | None = None):
        upper = self.max_rate if upper is None else upper
        return self.distribution.maximize_linear(c, upper, self.max_rate)

    def price(self, lam: float):
        """Quoted price inducing arrival rate ``lam``; ``None`` when no finite price blocks arrivals."""
        p = float(self.distribution.quantile(lam / self.max_rate))
        return p if math.isfinite(p) else None

    def replace(self, **changes) -> "Instance":
        data = {k: getattr(self, k) for k in self.__dataclass_fields__}
        data.update(changes)
        return Instance(**data)

    # -- serialization -------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "lambda": self.max_rate,
            "mu": self.mu,
            "m": self.m,
            "N": self.N,
            "theta_s": self.theta_s,
            "theta_q": self.theta_q,
            "c_h": self.c_h,
            "c_s": self.c_s,
            "c_q": self.c_q,
            "distribution": self.distribution.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Instance":
        if not isinstance(obj, dict):
            raise InstanceError("instance must be a JSON object")
        extra = set(obj) - set(_JSON_KEYS)
        if extra:
            raise InstanceError(f"unknown instance keys: {sorted(extra)}")
        missing = set(_JSON_KEYS) - set(obj)
        if missing:
            raise InstanceError(f"missing instance keys: {sorted(missing)}")
        try:
            return cls(
                max_rate=float(obj["lambda"]),
                mu=float(obj["mu"]),
                m=_as_int(obj["m"], "m"),
                N=_as_int(obj["N"], "N"),
                theta_s=float(obj["theta_s"]),
                theta_q=float(obj["theta_q"]),
                c_h=float(obj["c_h"]),
                c_s=float(obj["c_s"]),
                c_q=float(obj["c_q"]),
                distribution=distribution_from_json(obj["distribution"]),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, InstanceError):
                raise
            raise InstanceError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "Instance":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise InstanceError(f"cannot read {path}: {exc}") from exc
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"malformed JSON in {path}: {exc}") from exc
        return cls.from_json(obj)


def _as_int(v, name):
    if isinstance(v, bool) or float(v) != int(v):
        raise InstanceError(f"{name} must be an integer, got {v!r}")
    return int(v)
