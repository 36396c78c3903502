"""Golden-section maximization, scalar or elementwise over numpy arrays."""
from __future__ import annotations

import math

import numpy as np

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_max(f, lo, hi, tol):
    """Maximize a unimodal function on ``[lo, hi]`` by golden-section search.

    ``lo`` and ``hi`` may be arrays, in which case ``f`` must evaluate
    elementwise and each coordinate is searched independently; all
    coordinates advance in lock-step, one evaluation of ``f`` per step.
    Ties move the bracket left, so plateaus resolve toward the smaller
    argument.

    Returns ``(x, f(x))`` with the same shape as the inputs.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    scalar = lo.ndim == 0 and hi.ndim == 0
    lo, hi = np.broadcast_arrays(np.atleast_1d(lo), np.atleast_1d(hi))
    lo = lo.copy()
    hi = hi.copy()

    width = float(np.max(hi - lo)) if lo.size else 0.0
    if width <= tol:
        x = 0.5 * (lo + hi)
        fx = np.asarray(f(x), dtype=float)
        return (float(x[0]), float(fx[0])) if scalar else (x, fx)

    steps = int(math.ceil(math.log(tol / width) / math.log(INV_PHI)))
    c = hi - INV_PHI * (hi - lo)
    d = lo + INV_PHI * (hi - lo)
    fc = np.asarray(f(c), dtype=float)
    fd = np.asarray(f(d), dtype=float)
    for _ in range(steps):
        left = fc >= fd
        hi = np.where(left, d, hi)
        lo = np.where(left, lo, c)
        new = np.where(left, hi - INV_PHI * (hi - lo), lo + INV_PHI * (hi - lo))
        fnew = np.asarray(f(new), dtype=float)
        d, fd, c, fc = (
            np.where(left, c, new),
            np.where(left, fc, fnew),
            np.where(left, new, d),
            np.where(left, fnew, fd),
        )

    take_c = fc >= fd
    x = np.where(take_c, c, d)
    fx = np.where(take_c, fc, fd)
    if scalar:
        return float(x[0]), float(fx[0])
    return x, fx


def grid_then_golden(f, lo, hi, points, tol):
    """Maximize ``f`` over ``[lo, hi]``: uniform grid seed, then golden refinement.

    ``f`` takes a 1-D array of candidate arguments. The refinement runs on
    the bracket around the best grid point and is only accepted when it
    beats the grid value, so the result never falls below the seed.
    """
    grid = np.linspace(lo, hi, points)
    vals = np.asarray(f(grid), dtype=float)
    i = int(np.argmax(vals))
    a = grid[max(i - 1, 0)]
    b = grid[min(i + 1, points - 1)]
    x, fx = golden_max(lambda z: f(np.atleast_1d(z)), a, b, tol)
    if fx > vals[i]:
        return float(x), float(fx)
    return float(grid[i]), float(vals[i])
