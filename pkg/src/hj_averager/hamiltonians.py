"""Bivariate polynomial Hamiltonians and the problem-defining spec.

The suite works with H : R^2 -> R given as a finite sum of monomials
c * x^i * y^j.  Polynomials cover both built-in model problems and the
user-supplied ingestion path, and give exact analytic derivatives, which the
orbit tracer and the quadratures need near the separatrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import HJAveragerError

# Monomial term lists for the built-in Hamiltonians.
#
# "double_well": H(x,y) = (x^2-1)^2/4 + y^2/2 - 1/4.  Three critical points:
# a nondegenerate saddle at the origin with H=0 and two minima at (+-1, 0)
# with H=-1/4.  Smallest polynomial with the multi-well structure the solver
# suite targets (exponents m=0, n=1).
#
# "harmonic_fixture": H(x,y) = (x^2+y^2)/2.  Single minimum at the origin,
# isochronous circular orbits of period 2*pi.  Test fixture only; it does not
# have the saddle structure.
BUILTIN_TERMS = {
    "double_well": ((4, 0, 0.25), (2, 0, -0.5), (0, 2, 0.5)),
    "harmonic_fixture": ((2, 0, 0.5), (0, 2, 0.5)),
}


def _differentiate(terms, axis):
    """d/dx (axis=0) or d/dy (axis=1) of a monomial term list."""
    out = []
    for i, j, c in terms:
        if axis == 0 and i > 0:
            out.append((i - 1, j, c * i))
        elif axis == 1 and j > 0:
            out.append((i, j - 1, c * j))
    return tuple(out)


def _term_arrays(terms):
    if terms:
        i = np.array([t[0] for t in terms], dtype=np.int64)
        j = np.array([t[1] for t in terms], dtype=np.int64)
        c = np.array([t[2] for t in terms], dtype=np.float64)
    else:
        i = np.zeros(0, dtype=np.int64)
        j = np.zeros(0, dtype=np.int64)
        c = np.zeros(0, dtype=np.float64)
    return i, j, c


def _eval_terms(arrays, x, y):
    ti, tj, tc = arrays
    out = np.zeros(np.broadcast(x, y).shape, dtype=np.float64)
    for i, j, c in zip(ti, tj, tc):
        out += c * x ** int(i) * y ** int(j)
    return out


class PolyHamiltonian:
    """Polynomial H with exact gradient and Hessian, vectorized over points.

    Points are passed as arrays of shape (..., 2).  Term arrays for the five
    derived fields (H, Hx, Hy, Hxx, Hxy, Hyy) are exposed for the compiled
    kernels.
    """

    def __init__(self, terms):
        terms = tuple((int(i), int(j), float(c)) for i, j, c in terms)
        if not terms:
            raise HJAveragerError("empty Hamiltonian term list")
        for i, j, _ in terms:
            if i < 0 or j < 0:
                raise HJAveragerError("monomial exponents must be nonnegative")
        self.terms = terms
        self._h = _term_arrays(terms)
        tx = _differentiate(terms, 0)
        ty = _differentiate(terms, 1)
        self._hx = _term_arrays(tx)
        self._hy = _term_arrays(ty)
        self._hxx = _term_arrays(_differentiate(tx, 0))
        self._hxy = _term_arrays(_differentiate(tx, 1))
        self._hyy = _term_arrays(_differentiate(ty, 1))

    # -- vectorized evaluation -------------------------------------------

    def value(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return _eval_terms(self._h, pts[..., 0], pts[..., 1])

    def gradient(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([_eval_terms(self._hx, x, y), _eval_terms(self._hy, x, y)], axis=-1)

    def hessian(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        x, y = pts[..., 0], pts[..., 1]
        hxx = _eval_terms(self._hxx, x, y)
        hxy = _eval_terms(self._hxy, x, y)
        hyy = _eval_terms(self._hyy, x, y)
        out = np.empty(hxx.shape + (2, 2), dtype=np.float64)
        out[..., 0, 0] = hxx
        out[..., 0, 1] = hxy
        out[..., 1, 0] = hxy
        out[..., 1, 1] = hyy
        return out

    def drift(self, pts):
        """Hamiltonian vector field (H_y, -H_x); orthogonal to the gradient."""
        g = self.gradient(pts)
        return np.stack([g[..., 1], -g[..., 0]], axis=-1)

    def grad_norm(self, pts):
        g = self.gradient(pts)
        return np.sqrt(g[..., 0] ** 2 + g[..., 1] ** 2)

    # -- kernel interface --------------------------------------------------

    def kernel_arrays(self):
        """(hx_i, hx_j, hx_c, hy_i, hy_j, hy_c) term arrays for the tracer."""
        return self._hx + self._hy

    def value_kernel_arrays(self):
        return self._h


@dataclass
class CriticalPoint:
    location: np.ndarray     # shape (2,)
    kind: str                # "saddle" | "minimum"
    value: float             # H at the point

    def __iter__(self):
        return iter((self.location, self.kind))


@dataclass
class HamiltonianSpec:
    """Hamiltonian together with the structural data the pipeline relies on.

    The thresholds carve the multi-well domain out of the level-set geometry:
    the outer region keeps 0 < H < h0, well i keeps well_levels[i-1] < H < 0.
    saddle_exponents (m, n) with n < m+2, hessian_bound and gradient_bound
    describe the local behavior near the saddle and feed the structure
    verification.
    """

    hamiltonian: PolyHamiltonian
    n_critical: int
    h0: float
    well_levels: tuple
    saddle_exponents: tuple = (0.0, 1.0)
    hessian_bound: float = 2.0
    gradient_bound: float = 0.75
    neighborhood_radius: float = 0.5
    name: str = "custom"
    critical_points: list = field(default_factory=list)

    def __post_init__(self):
        self.well_levels = tuple(float(h) for h in self.well_levels)
        if self.h0 <= 0:
            raise HJAveragerError(f"h0 must be positive, got {self.h0}")
        for h in self.well_levels:
            if h >= 0:
                raise HJAveragerError(f"well threshold must be negative, got {h}")
        m, n = self.saddle_exponents
        if not (m >= 0 and n > 0 and n < m + 2):
            raise HJAveragerError(f"saddle exponents need 0 <= m, 0 < n < m+2, got (m,n)=({m},{n})")
        if len(self.well_levels) != self.n_critical - 1:
            raise HJAveragerError(
                f"{self.n_critical - 1} well thresholds expected, got {len(self.well_levels)}")

    @property
    def n_edges(self):
        return self.n_critical

    def edge_interval(self, i):
        """Signed level interval J_i: (0, h0) for the outer edge, (h_i, 0) for wells."""
        if i == 0:
            return (0.0, self.h0)
        return (self.well_levels[i - 1], 0.0)

    def threshold(self, i):
        return self.h0 if i == 0 else self.well_levels[i - 1]

    def saddle(self):
        return self.critical_points[0]

    def wells(self):
        return self.critical_points[1:]


def make_hamiltonian(builtin=None, terms=None):
    if (builtin is None) == (terms is None):
        raise HJAveragerError("specify exactly one of builtin / terms")
    if builtin is not None:
        try:
            terms = BUILTIN_TERMS[builtin]
        except KeyError:
            raise HJAveragerError(f"unknown builtin Hamiltonian {builtin!r}") from None
    return PolyHamiltonian(terms)


def double_well_spec(h0=0.125, well_level=-0.125):
    """Canonical three-region spec used throughout the test and acceptance suites."""
    from .geometry import locate_critical_points

    spec = HamiltonianSpec(
        hamiltonian=make_hamiltonian("double_well"),
        n_critical=3,
        h0=h0,
        well_levels=(well_level, well_level),
        saddle_exponents=(0.0, 1.0),
        hessian_bound=2.0,
        gradient_bound=0.75,
        neighborhood_radius=0.5,
        name="double_well",
    )
    spec.critical_points = locate_critical_points(spec)
    return spec


def harmonic_spec(h0=0.5):
    """Single-well isochronous fixture; no saddle, exponent checks not claimed."""
    from .geometry import locate_critical_points

    spec = HamiltonianSpec(
        hamiltonian=make_hamiltonian("harmonic_fixture"),
        n_critical=1,
        h0=h0,
        well_levels=(),
        saddle_exponents=(0.0, 1.0),
        hessian_bound=1.5,
        gradient_bound=0.99,
        neighborhood_radius=1.0,
        name="harmonic_fixture",
    )
    spec.critical_points = locate_critical_points(spec)
    return spec
