"""Randomized campaigns over sampled instances.

A campaign draws ``sample_count`` parameter sets, solves each with both
policy-iteration variants, runs the three heuristics and records structure
flags, performance ratios and solver timings. Sampling happens up front
from a single generator, so the records depend only on the spec and are
identical whether instances are processed inline or by a worker pool.

Wall-clock timings are the one nondeterministic output; they are kept out
of ``records.csv`` and written to ``timing.csv`` instead.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from apq import mdp
from apq.heuristics import POSITIVE, best_cutoff_static, best_static, best_two_price, two_price_is_monotone
from apq.model import EvaluationDistribution, Instance, InstanceError, Uniform, distribution_from_json

log = logging.getLogger(__name__)

PARAM_HIGH = 50.0
N_RANGE = {1: (2, 20), 4: (5, 20)}
RATIO_TOL = 1e-7


@dataclass(frozen=True)
class ExperimentSpec:
    sample_count: int = 1000
    seed: int = 0
    distribution: EvaluationDistribution = field(default_factory=lambda: Uniform(20.0, 50.0))
    m: int = 1
    param_high: float = PARAM_HIGH
    timing_repeats: int = 3
    """Each solver is timed this many times per instance; the minimum is kept."""

    def __post_init__(self):
        if self.m not in N_RANGE:
            raise InstanceError(f"m must be one of {sorted(N_RANGE)}, got {self.m}")
        if int(self.sample_count) != self.sample_count or self.sample_count < 1:
            raise InstanceError("sample_count must be a positive integer")
        if not self.param_high > 0:
            raise InstanceError("param_high must be positive")
        if int(self.timing_repeats) != self.timing_repeats or self.timing_repeats < 1:
            raise InstanceError("timing_repeats must be a positive integer")

    @property
    def N_range(self) -> tuple[int, int]:
        return N_RANGE[self.m]

    def to_json(self) -> dict:
        return {
            "sample_count": self.sample_count,
            "seed": self.seed,
            "distribution": self.distribution.to_json(),
            "m": self.m,
            "param_high": self.param_high,
            "timing_repeats": self.timing_repeats,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentSpec":
        if not isinstance(obj, dict):
            raise InstanceError("experiment spec must be a JSON object")
        known = {f.name for f in fields(cls)}
        extra = set(obj) - known
        if extra:
            raise InstanceError(f"unknown experiment spec keys: {sorted(extra)}")
        data = dict(obj)
        if "distribution" in data:
            data["distribution"] = distribution_from_json(data["distribution"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise InstanceError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        try:
            with open(path) as fh:
                obj = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InstanceError(f"cannot read experiment spec {path}: {exc}") from exc
        return cls.from_json(obj)


def sample_instances(spec: ExperimentSpec) -> list[Instance]:
    """Parameters ``~ U(0, param_high]`` in the order lambda, mu, theta_s, theta_q, c_s, c_q, c_h, then N."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.N_range
    out = []
    for _ in range(spec.sample_count):
        # 1 - U[0,1) lies in (0, 1], so every parameter is strictly positive
        lam, mu, ts, tq, cs, cq, ch = spec.param_high * (1.0 - rng.random(7))
        N = int(rng.integers(lo, hi + 1))
        out.append(
            Instance(
                max_rate=float(lam), mu=float(mu), m=spec.m, N=N, theta_s=float(ts),
                theta_q=float(tq), c_h=float(ch), c_s=float(cs), c_q=float(cq),
                distribution=spec.distribution,
            )
        )
    return out


@dataclass
class InstanceRecord:
    index: int
    max_rate: float
    mu: float
    m: int
    N: int
    theta_s: float
    theta_q: float
    c_h: float
    c_s: float
    c_q: float
    C_s: float = math.nan
    C_q: float = math.nan
    g_star: float = math.nan
    g_star_baseline: float = math.nan
    monotone: bool | None = None
    unimodal: bool | None = None
    peak: int | None = None
    g_S: float = math.nan
    g_C: float = math.nan
    K_C: int | None = None
    g_T: float = math.nan
    K_T: int | None = None
    delta_s: float = math.nan
    delta_q: float = math.nan
    two_price_monotone: bool | None = None
    R_S: float | None = None
    R_C: float | None = None
    R_T: float | None = None
    iterations_baseline: int | None = None
    iterations_unimodal: int | None = None
    fallback_iterations: int | None = None
    error: str = ""
    tau0_ns: int | None = None
    tau1_ns: int | None = None

    @property
    def failed(self) -> bool:
        return bool(self.error)

    @property
    def positive(self) -> bool:
        return not self.failed and self.g_star > POSITIVE

    @property
    def rpi(self) -> float | None:
        if not self.tau0_ns or self.tau1_ns is None:
            return None
        return (1.0 - self.tau1_ns / self.tau0_ns) * 100.0


TIMING_FIELDS = ("tau0_ns", "tau1_ns")
RECORD_COLUMNS = [f.name for f in fields(InstanceRecord) if f.name not in TIMING_FIELDS]


def _timed(fn, inst, repeats):
    best = None
    for _ in range(repeats):
        res = fn(inst)
        if best is None or res.wall_time_ns < best.wall_time_ns:
            best = res
    return best


def evaluate_instance(index: int, inst: Instance, timing_repeats: int = 1) -> InstanceRecord:
    """Solve one sampled instance; numeric failures are stored in ``error``."""
    rec = InstanceRecord(
        index=index, max_rate=inst.max_rate, mu=inst.mu, m=inst.m, N=inst.N,
        theta_s=inst.theta_s, theta_q=inst.theta_q, c_h=inst.c_h, c_s=inst.c_s, c_q=inst.c_q,
    )
    cc = inst.costs
    rec.C_s, rec.C_q = cc.C_s, cc.C_q
    try:
        base = _timed(mdp.solve_baseline, inst, timing_repeats)
        uni = _timed(mdp.solve_unimodal, inst, timing_repeats)
    except (mdp.SolverError, FloatingPointError, ValueError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    rec.g_star, rec.g_star_baseline = uni.gain, base.gain
    rec.tau0_ns, rec.tau1_ns = base.wall_time_ns, uni.wall_time_ns
    rec.iterations_baseline, rec.iterations_unimodal = base.iterations, uni.iterations
    rec.fallback_iterations = uni.fallback_iterations
    tol = mdp.structure_tol(inst)
    rates = uni.policy.rates
    rec.monotone = mdp.is_monotone(rates, tol)
    rec.peak = mdp.peak_index(rates, tol)
    rec.unimodal = rec.peak is not None
    _, rec.g_S = best_static(inst)
    cs = best_cutoff_static(inst)
    rec.g_C, rec.K_C = cs.gain, cs.K
    tp = best_two_price(inst)
    rec.g_T, rec.K_T, rec.delta_s, rec.delta_q = tp.gain, tp.K, tp.delta_s, tp.delta_q
    rec.two_price_monotone = two_price_is_monotone(tp, inst.m, tol)
    if rec.g_star > POSITIVE:
        rec.R_S, rec.R_C, rec.R_T = (rec.g_S / rec.g_star, rec.g_C / rec.g_star, rec.g_T / rec.g_star)
    return rec


def _evaluate_chunk(args):
    items, repeats = args
    return [evaluate_instance(i, inst, repeats) for i, inst in items]


def resolve_threads(threads: int | None) -> int:
    if threads is None:
        env = os.environ.get("APQ_THREADS")
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    return threads


def run_campaign(spec: ExperimentSpec, threads: int | None = None) -> list[InstanceRecord]:
    """Records for every sampled instance, ordered by sample index."""
    threads = resolve_threads(threads)
    items = list(enumerate(sample_instances(spec)))
    if threads == 1:
        records = _evaluate_chunk((items, spec.timing_repeats))
    else:
        size = max(1, math.ceil(len(items) / (threads * 8)))
        chunks = [(items[i : i + size], spec.timing_repeats) for i in range(0, len(items), size)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            records = [r for part in pool.map(_evaluate_chunk, chunks) for r in part]
    records.sort(key=lambda r: r.index)
    failures = sum(r.failed for r in records)
    if failures:
        log.warning("%d of %d instances failed", failures, len(records))
    return records


# -- tables --------------------------------------------------------------


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def records_csv(records) -> str:
    return _csv(RECORD_COLUMNS, ([_cell(getattr(r, c)) for c in RECORD_COLUMNS] for r in records))


def timing_csv(records) -> str:
    rows = ([r.index, _cell(r.tau0_ns), _cell(r.tau1_ns), _cell(r.rpi)] for r in records)
    return _csv(["index", "tau0_ns", "tau1_ns", "rpi"], rows)


def scatter_table(records) -> str:
    """``C_s, C_q, N, monotone`` per solved record."""
    ok = [r for r in records if not r.failed]
    return _csv(["C_s", "C_q", "N", "monotone"], ([repr(r.C_s), repr(r.C_q), r.N, int(r.monotone)] for r in ok))


def monotone_exceptions(records) -> list[int]:
    """Buffer sizes ``N - m`` of records that are monotone although ``C_s > C_q``."""
    return [r.N - r.m for r in records if not r.failed and r.C_s > r.C_q and r.monotone]


def structure_agreement(records) -> dict:
    """2x2 counts: optimal policy monotone (rows) vs two-price ``delta_s >= delta_q`` (columns)."""
    cells = {"opt_mono_tp_mono": 0, "opt_mono_tp_not": 0, "opt_not_tp_mono": 0, "opt_not_tp_not": 0}
    for r in records:
        if r.failed:
            continue
        key = f"opt_{'mono' if r.monotone else 'not'}_tp_{'mono' if r.two_price_monotone else 'not'}"
        cells[key] += 1
    total = sum(cells.values())
    disagree = cells["opt_mono_tp_not"] + cells["opt_not_tp_mono"]
    return {**cells, "total": total, "disagreements": disagree,
            "disagreement_fraction": disagree / total if total else 0.0}


def ratio_histogram(records, width: float = 0.1, lo: float = 0.0) -> list[dict]:
    """Counts of ``R_S, R_C, R_T`` per bin ``[edge, edge + width)``; the top bin includes 1 and the
    optimizer's ``1 + 1e-7`` overshoot. Zero-gain records are skipped."""
    nbins = int(round((1.0 - lo) / width))
    edges = lo + width * np.arange(nbins + 1)
    out = []
    for name in ("R_S", "R_C", "R_T"):
        vals = np.array([getattr(r, name) for r in records if r.positive])
        vals = np.minimum(vals, 1.0)
        idx = np.floor((vals - lo) / width + 1e-9).astype(int) if vals.size else np.array([], int)
        idx = np.minimum(idx, nbins - 1)
        counts = np.bincount(idx[idx >= 0], minlength=nbins)
        below = int(np.sum(idx < 0))
        out.append({"heuristic": name, "below": below, "counts": counts.tolist(), "edges": edges.tolist()})
    return out


def _histogram_csv(hist) -> str:
    rows = []
    for h in hist:
        e = h["edges"]
        for i, c in enumerate(h["counts"]):
            rows.append([h["heuristic"], f"{e[i]:.2f}", f"{e[i + 1]:.2f}", c])
        if e[0] > 0:
            rows.append([h["heuristic"], "", f"{e[0]:.2f}", h["below"]])
    return _csv(["heuristic", "bin_low", "bin_high", "count"], rows)


def ratio_fraction(records, name: str, threshold: float) -> float:
    vals = [getattr(r, name) for r in records if r.positive]
    return float(np.mean([v >= threshold for v in vals])) if vals else math.nan


def timing_report(records) -> dict:
    """Mean and max RPI of the structured solver over plain policy iteration."""
    rpis = [r.rpi for r in records if r.rpi is not None]
    gaps = [
        abs(r.g_star - r.g_star_baseline) / max(1.0, abs(r.g_star_baseline))
        for r in records if not r.failed
    ]
    return {
        "count": len(rpis),
        "mean_rpi": float(np.mean(rpis)) if rpis else math.nan,
        "median_rpi": float(np.median(rpis)) if rpis else math.nan,
        "max_rpi": float(np.max(rpis)) if rpis else math.nan,
        "mean_tau0_ns": float(np.mean([r.tau0_ns for r in records if r.tau0_ns])) if rpis else math.nan,
        "mean_tau1_ns": float(np.mean([r.tau1_ns for r in records if r.tau1_ns])) if rpis else math.nan,
        "max_relative_gain_gap": float(max(gaps)) if gaps else 0.0,
        "reference_mean_rpi": 41.05,
        "reference_max_rpi": 54.44,
    }


def summarize(records) -> dict:
    ok = [r for r in records if not r.failed]
    pos = [r for r in ok if r.positive]
    exc = monotone_exceptions(records)
    return {
        "records": len(records),
        "failures": len(records) - len(ok),
        "zero_gain": len(ok) - len(pos),
        "unimodal_fraction": float(np.mean([r.unimodal for r in ok])) if ok else math.nan,
        "monotone_when_C_s_le_C_q": float(np.mean([r.monotone for r in ok if r.C_s <= r.C_q]))
        if any(r.C_s <= r.C_q for r in ok) else math.nan,
        "monotone_exceptions": len(exc),
        "monotone_exception_max_buffer": max(exc) if exc else None,
        "fraction_R_T_ge_0.9": ratio_fraction(records, "R_T", 0.9),
        "fraction_R_T_ge_0.98": ratio_fraction(records, "R_T", 0.98),
        "fraction_R_T_ge_0.99": ratio_fraction(records, "R_T", 0.99),
        "fraction_R_C_ge_0.9": ratio_fraction(records, "R_C", 0.9),
        "min_R_S": min((r.R_S for r in pos), default=None),
        "min_R_C": min((r.R_C for r in pos), default=None),
        "min_R_T": min((r.R_T for r in pos), default=None),
        "structure": structure_agreement(records),
        "timing": timing_report(records),
    }


def write_campaign(records, out_dir, spec: ExperimentSpec | None = None) -> dict:
    """Write every table under ``out_dir`` and return the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "records.csv").write_text(records_csv(records))
    (out / "timing.csv").write_text(timing_csv(records))
    (out / "scatter.csv").write_text(scatter_table(records))
    (out / "histogram.csv").write_text(_histogram_csv(ratio_histogram(records, 0.1)))
    (out / "histogram_zoom.csv").write_text(_histogram_csv(ratio_histogram(records, 0.01, lo=0.9)))
    st = structure_agreement(records)
    (out / "structure.csv").write_text(
        _csv(
            ["optimal", "two_price_monotone", "two_price_not_monotone"],
            [["monotone", st["opt_mono_tp_mono"], st["opt_mono_tp_not"]],
             ["not_monotone", st["opt_not_tp_mono"], st["opt_not_tp_not"]]],
        )
    )
    summary = summarize(records)
    if spec is not None:
        summary["spec"] = spec.to_json()
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def record_from_row(row: dict) -> InstanceRecord:
    """Parse one ``records.csv`` row back into a record (timings left empty)."""
    kinds = {f.name: f for f in fields(InstanceRecord)}
    data = {}
    for k, v in row.items():
        typ = str(kinds[k].type)
        if v == "":
            data[k] = "" if k == "error" else None
        elif "bool" in typ:
            data[k] = bool(int(v))
        elif "int" in typ:
            data[k] = int(v)
        elif "float" in typ:
            data[k] = float(v)
        else:
            data[k] = v
    return InstanceRecord(**data)

