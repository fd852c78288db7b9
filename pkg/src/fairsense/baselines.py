"""Multiple-access baselines and weight sweeps on top of the core loop.

All schemes reuse the same constraint machinery; they differ in the common
stream (present / absent), the rate-split degrees of freedom, and the
interference structure. The improved scheme (free rate split) is refined
from the converged fixed-split solution, so its feasible set provably
contains the point it starts from.
"""

from __future__ import annotations

import numpy as np

from .algorithm import Solution, run_algorithm1
from .config import SystemConfig
from .conic import SolverSettings
from .scenario import Scenario
from .subproblem import POLICIES, SCHEMES


def solve_baseline(scenario: Scenario, cfg: SystemConfig, scheme: str,
                   policy: str = "fairness_aware",
                   settings: SolverSettings | None = None,
                   max_outer: int = 100, **kwargs) -> Solution:
    """One converged Solution for the requested MA scheme and power policy."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    if scheme == "I_RSMA" and kwargs.get("warm") is None:
        base = run_algorithm1(scenario, cfg, settings, scheme="RSMA",
                              policy=policy, max_outer=max_outer, **kwargs)
        kwargs = dict(kwargs, warm=base)
    return run_algorithm1(scenario, cfg, settings, scheme=scheme,
                          policy=policy, max_outer=max_outer, **kwargs)


def pareto_sweep(scenario: Scenario, cfg: SystemConfig,
                 lambda_grid: np.ndarray,
                 scheme: str = "I_RSMA", policy: str = "fairness_aware",
                 settings: SolverSettings | None = None,
                 **kwargs) -> list[Solution | Exception]:
    """One Solution per sensing weight, warm-starting along the grid.

    Per-point failures are collected in place of the Solution instead of
    aborting the sweep.
    """
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    if np.any((lambda_grid <= 0) | (lambda_grid >= 1)):
        raise ValueError("lambda grid values must lie in (0, 1)")
    out: list[Solution | Exception] = []
    warm = None
    for lam in lambda_grid:
        cfg_l = cfg.replace(weight_sensing=float(lam))
        try:
            sol = solve_baseline(scenario, cfg_l, scheme, policy, settings,
                                 warm=warm, **kwargs)
            warm = sol
            out.append(sol)
        except Exception as exc:  # collected, not fatal
            out.append(exc)
    return out
