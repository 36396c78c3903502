"""Optimal dynamic pricing for a finite-buffer M/M/m+M queue with abandonment."""
from apq.model import Exponential, Instance, InstanceError, Uniform
from apq.chain import Policy
from apq.mdp import SolveResult, SolverError, solve, solve_baseline, solve_unimodal

__all__ = [
    "Exponential",
    "Instance",
    "InstanceError",
    "Policy",
    "SolveResult",
    "SolverError",
    "Uniform",
    "solve",
    "solve_baseline",
    "solve_unimodal",
]
__version__ = "0.1.0"
