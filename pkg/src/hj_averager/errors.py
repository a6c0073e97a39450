"""Exception types raised across the solver suite.

Every failure mode that a caller can act on gets its own class; generic
ValueError is reserved for plain programming errors.
"""


class HJAveragerError(Exception):
    """Base class for all package errors."""


# -- hamiltonian geometry -----------------------------------------------------

class CountMismatch(HJAveragerError):
    """Critical-point search found a different number of roots than declared."""

    def __init__(self, found, declared):
        super().__init__(f"found {found} critical points, spec declares {declared}")
        self.found = found
        self.declared = declared


class DegenerateHessian(HJAveragerError):
    """A critical point has a (numerically) singular Hessian."""


class UnclassifiedPoint(HJAveragerError):
    """Flood fill never reached the queried cell."""


class FitFailure(HJAveragerError):
    """Log-log regression residual exceeds threshold (non-power-law field)."""


# -- orbit tracing / averaging ------------------------------------------------

class NoBracket(HJAveragerError):
    """Seed ray failed to bracket the requested level."""


class NoReturn(HJAveragerError):
    """Orbit did not return to the Poincare section within the time cap."""

    def __init__(self, t_max):
        super().__init__(f"no Poincare return within t_max={t_max:g}")
        self.t_max = t_max


class CriticalApproach(HJAveragerError):
    """|DH| fell below the safety floor while tracing."""


# -- 2D solver ----------------------------------------------------------------

class TooCoarse(HJAveragerError):
    """Grid resolution cannot resolve every well."""


class InsufficientDissipation(HJAveragerError):
    """Configured Lax-Friedrichs coefficients violate the monotonicity bound."""


class NoConvergence(HJAveragerError):
    """Fixed-point iteration hit the sweep cap before reaching tolerance."""

    def __init__(self, max_iters, residual):
        super().__init__(f"no convergence in {max_iters} sweeps (residual {residual:.3e})")
        self.max_iters = max_iters
        self.residual = residual


class TrajectoryExit(HJAveragerError):
    """Characteristic trajectory left the grid."""


# -- graph solver -------------------------------------------------------------

class ProfileGap(HJAveragerError):
    """Requested (h, q) lies outside the tabulated profile beyond the extrapolation policy."""


class Inconsistent(HJAveragerError):
    """An edge cannot support the common node value within tolerance."""


class NoFeasible(HJAveragerError):
    """Node-value scan found no feasible value down to -C."""


# -- harness / io -------------------------------------------------------------

class InsufficientSamples(HJAveragerError):
    """Not enough small-h samples for the node-value extrapolation."""


class SchemaError(HJAveragerError):
    """Config failed validation; carries the full list of violations."""

    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class MissingArtifact(HJAveragerError):
    """A pipeline stage input file is absent."""

    def __init__(self, path):
        super().__init__(f"missing artifact: {path}")
        self.path = str(path)
