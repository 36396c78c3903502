"""Command-line interface.

Every subcommand prints one JSON document (sorted keys) to stdout, except
``campaign`` which writes its tables under ``--out`` and prints the summary.
Exit status: 0 on success, 2 for unreadable or invalid input, 1 when a
numerical routine fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from apq import bounds, chain, experiments, heuristics, mdp
from apq.chain import Policy
from apq.model import Instance, InstanceError
from apq.sim import SimConfig, simulate

EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, allow_nan=False, indent=2)


def _structure(inst, res):
    tol = mdp.structure_tol(inst)
    return {
        "monotone": mdp.is_monotone(res.policy.rates, tol),
        "peak_index": mdp.peak_index(res.policy.rates, tol),
        "C_s": inst.costs.C_s,
        "C_q": inst.costs.C_q,
    }


def cmd_solve(args):
    inst = Instance.load(args.instance)
    res = mdp.solve(inst, eps=args.eps, baseline=args.baseline)
    out = res.to_json(inst)
    out.update(_structure(inst, res))
    out["fallback_iterations"] = res.fallback_iterations
    return out


def cmd_heuristics(args):
    inst = Instance.load(args.instance)
    res = mdp.solve(inst)
    out = {"g_star": res.gain}
    if args.which in ("static", "all"):
        d, g = heuristics.best_static(inst)
        out["g_S"] = g
        out["static"] = {"delta": d, "gain": g}
    if args.which in ("cutoff", "all"):
        cs = heuristics.best_cutoff_static(inst)
        out["g_C"] = cs.gain
        out["cutoff_static"] = cs.to_json()
    if args.which in ("two-price", "all"):
        tp = heuristics.best_two_price(inst)
        out["g_T"] = tp.gain
        out["two_price"] = tp.to_json()
    if res.gain > heuristics.POSITIVE:
        for key, name in (("g_S", "R_S"), ("g_C", "R_C"), ("g_T", "R_T")):
            if key in out:
                out[name] = out[key] / res.gain
    return out


def cmd_bounds(args):
    inst = Instance.load(args.instance)
    res = mdp.solve(inst)
    return bounds.bound_report(inst, res).to_json()


def _load_policy(path, inst):
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InstanceError(f"cannot read policy file {path}: {exc}") from exc
    if isinstance(obj, dict):
        if "policy" not in obj:
            raise InstanceError("policy file must be a list of rates or an object with a 'policy' key")
        obj = obj["policy"]
    if not isinstance(obj, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in obj):
        raise InstanceError("policy must be a list of numbers")
    try:
        return Policy(obj).check(inst)
    except ValueError as exc:
        raise InstanceError(str(exc)) from exc


def cmd_simulate(args):
    inst = Instance.load(args.instance)
    pol = _load_policy(args.policy, inst)
    try:
        cfg = SimConfig(horizon=args.horizon, warmup=args.warmup, replications=args.reps, seed=args.seed)
    except ValueError as exc:
        raise InstanceError(str(exc)) from exc
    out = simulate(inst, pol, cfg).to_json()
    out["analytic_gain"] = chain.gain(inst, pol)
    return out


def cmd_campaign(args):
    spec = experiments.ExperimentSpec.load(args.spec)
    try:
        threads = experiments.resolve_threads(args.threads)
    except ValueError as exc:
        raise InstanceError(str(exc)) from exc
    records = experiments.run_campaign(spec, threads=threads)
    return experiments.write_campaign(records, args.out, spec)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apq", description="Dynamic pricing for an M/M/m+M queue with a finite buffer.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="optimal dynamic policy")
    s.add_argument("--instance", required=True)
    s.add_argument("--baseline", action="store_true", help="plain policy iteration")
    s.add_argument("--eps", type=float, default=None, help="stopping tolerance (default 1e-9 * lambda)")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("heuristics", help="best static, cutoff-static and two-price policies")
    s.add_argument("--instance", required=True)
    s.add_argument("--which", choices=["static", "cutoff", "two-price", "all"], default="all")
    s.set_defaults(func=cmd_heuristics)

    s = sub.add_parser("bounds", help="performance guarantees of the heuristics")
    s.add_argument("--instance", required=True)
    s.set_defaults(func=cmd_bounds)

    s = sub.add_parser("simulate", help="Monte-Carlo estimate for a given policy")
    s.add_argument("--instance", required=True)
    s.add_argument("--policy", required=True, help="JSON list of rates, or the output of 'solve'")
    s.add_argument("--horizon", type=float, required=True)
    s.add_argument("--warmup", type=float, default=0.0)
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("campaign", help="randomized experiment campaign")
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=None, help="worker processes (default $APQ_THREADS or 1)")
    s.set_defaults(func=cmd_campaign)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        out = args.func(args)
    except (InstanceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (mdp.SolverError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(dumps(out))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
