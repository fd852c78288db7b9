"""Conic subproblem container and the solver contract.

The subproblem is a declarative bundle of named variables and categorized
constraints (affine, PSD/LMI, exponential-cone). Solving is delegated to an
interior-point conic solver through cvxpy; the contract is solver-agnostic
and the returned assignment is a plain dict of numpy values.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .errors import Infeasible, IterLimit, Unbounded


@dataclass
class SolverSettings:
    feas_tol: float = 1e-8
    rel_gap_tol: float = 1e-8
    max_iters: int = 200
    verbose: bool = False
    solver: str = "CLARABEL"

    def __post_init__(self):
        if self.feas_tol <= 0 or self.rel_gap_tol <= 0:
            raise ValueError("tolerances must be > 0")


@dataclass
class ConicSubproblem:
    """One convex subproblem instance: variables, constraints, objective.

    Anchor-dependent data may be bound as cvxpy Parameters (kept in
    ``params``) so the canonicalized form survives anchor updates; ``meta``
    carries the structural flags a rebuild would depend on.
    """

    psd_vars: dict[str, cp.Variable] = field(default_factory=dict)
    scalar_vars: dict[str, cp.Variable] = field(default_factory=dict)
    entries: list[tuple[str, str, object]] = field(default_factory=list)
    objective: cp.Minimize | None = None
    params: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add_linear(self, constraint, label: str = ""):
        self.entries.append(("linear", label or "linear", constraint))

    def add_lmi(self, constraint, label: str = ""):
        self.entries.append(("lmi", label or "lmi", constraint))

    def add_exp(self, constraint, label: str = ""):
        self.entries.append(("exp", label or "exp", constraint))

    @property
    def linear_constraints(self) -> list:
        return [c for kind, _, c in self.entries if kind == "linear"]

    @property
    def lmi_constraints(self) -> list:
        return [c for kind, _, c in self.entries if kind == "lmi"]

    @property
    def exp_constraints(self) -> list:
        return [c for kind, _, c in self.entries if kind == "exp"]

    @property
    def labels(self) -> list[str]:
        return [label for _, label, _ in self.entries]

    @property
    def constraints(self) -> list:
        return [c for _, _, c in self.entries]

    def variable_counts(self) -> dict:
        """Bookkeeping used by the complexity accounting and tests."""
        scalars = 0
        for v in self.scalar_vars.values():
            scalars += int(np.prod(v.shape)) if v.shape else 1
        return {
            "psd_matrix_vars": len(self.psd_vars),
            "scalar_vars": scalars,
            "lmi_constraints": len(self.lmi_constraints),
            "linear_constraints": len(self.linear_constraints),
            "exp_constraints": len(self.exp_constraints),
        }

    def describe(self) -> str:
        """Human-readable constraint listing for diagnosis."""
        lines = [f"objective: {self.objective}"]
        lines += [f"psd var {k}: shape {v.shape}" for k, v in self.psd_vars.items()]
        lines += [f"scalar var {k}: shape {v.shape}" for k, v in self.scalar_vars.items()]
        for lbl, con in zip(self.labels, self.constraints):
            lines.append(f"{lbl}: {con}")
        return "\n".join(lines)


def solve_conic(problem: ConicSubproblem, settings: SolverSettings | None = None) -> dict:
    """Solve the subproblem; returns {name: value} for all declared variables.

    Raises Infeasible / Unbounded / IterLimit on the respective solver
    outcomes. ``inaccurate`` statuses are accepted with their values (the
    caller re-certifies feasibility independently).
    """
    settings = settings or SolverSettings()
    if problem.objective is None:
        raise ValueError("subproblem has no objective")
    prob = problem.meta.get("_compiled")
    if prob is None:
        prob = cp.Problem(problem.objective, problem.constraints)
        problem.meta["_compiled"] = prob

    def run(solver: str):
        kwargs = {"verbose": settings.verbose}
        if solver == "CLARABEL":
            # the subproblem is pre-normalized; Ruiz equilibration degrades
            # its late-stage accuracy rather than helping
            kwargs.update(max_iter=settings.max_iters,
                          equilibrate_enable=False)
        elif solver == "SCS":
            kwargs.update(max_iters=max(settings.max_iters * 200, 20000),
                          eps=max(settings.feas_tol, 1e-9))
        with warnings.catch_warnings():
            warnings.filterwarnings("ignore",
                                    message="Solution may be inaccurate")
            prob.solve(solver=getattr(cp, solver), **kwargs)

    primary = settings.solver.upper()
    try:
        run(primary)
    except cp.error.SolverError:
        # numerical breakdown in the interior-point path; retry with the
        # first-order solver before giving up
        fallback = "SCS" if primary != "SCS" else "CLARABEL"
        try:
            run(fallback)
        except cp.error.SolverError as exc:
            raise IterLimit(f"conic solvers failed: {exc}") from exc

    status = prob.status
    if status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        raise Infeasible(f"subproblem infeasible (status={status})",
                         certificate_norm=float(prob.value or np.nan))
    if status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        raise Unbounded(f"subproblem unbounded (status={status})")
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        raise IterLimit(f"solver stopped with status {status}")

    out = {"__objective__": float(prob.value)}
    for name, var in {**problem.psd_vars, **problem.scalar_vars}.items():
        out[name] = np.array(var.value) if var.value is not None else None
    return out
