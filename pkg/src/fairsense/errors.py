"""Exception hierarchy shared across the package."""


class FairsenseError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatch(FairsenseError):
    """Array shapes are inconsistent with the declared scenario sizes."""


class DuplicateTargetAngle(FairsenseError):
    """Two target angles coincide within tolerance (degenerate FIM)."""


class SingularFim(FairsenseError):
    """FIM is numerically singular; carries the smallest eigenvalue."""

    def __init__(self, message: str, smallest_eigenvalue: float):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class InstanceTooLarge(FairsenseError):
    """Instance exceeds the size guard of a brute-force/MLE oracle."""


class RankDeficientChannels(FairsenseError):
    """Estimated channel matrix has rank below the number of users."""


class NonpositiveAnchor(FairsenseError):
    """A Taylor expansion anchor is not strictly positive."""


class ZeroMatrix(FairsenseError):
    """Rank-1 extraction was asked for a (numerically) zero matrix."""


class SolverError(FairsenseError):
    """Base class for conic-solver outcomes that are not a solution."""


class Infeasible(SolverError):
    """Subproblem is primal infeasible."""

    def __init__(self, message: str, certificate_norm: float = float("nan")):
        super().__init__(message)
        self.certificate_norm = certificate_norm


class Unbounded(SolverError):
    """Subproblem is unbounded below."""


class IterLimit(SolverError):
    """Conic solver hit its iteration limit before reaching tolerance."""


class MaxOuterIterations(FairsenseError):
    """Outer loop exceeded its iteration cap without converging."""


class NotConverged(FairsenseError):
    """An operation requires a converged solution."""


class ConfigurationError(FairsenseError):
    """Invalid experiment or system configuration."""
