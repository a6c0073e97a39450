"""Built-in G families for the running-cost Hamiltonian G(x, p).

Three families cover the suite:

* ``eikonal``   G(x, p) = |p|; convex, coercive with (nu, M) = (1, 0).
* ``games``     G(x, p) = theta*|p| - |p . b(x)| - f(x) with theta above the
  sup of |DH| over the domain closure; nonconvex in p, but q |-> G(x, q*DH(x))
  is convex because DH . b vanishes identically.
* ``constant``  G(x, p) = c; degenerate fixture for exact-solution tests.

All evaluators are vectorized over points of shape (..., 2).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import HJAveragerError


class GFunction:
    """Interface shared by the families; subclasses fill in the pieces."""

    kind = None

    def value(self, pts, p):
        raise NotImplementedError

    def at_zero(self, pts):
        """G(x, 0)."""
        pts = np.asarray(pts, dtype=np.float64)
        return self.value(pts, np.zeros_like(pts))

    def lip_p_axis(self, pts, axis):
        """Pointwise bound on |dG/dp_axis|."""
        raise NotImplementedError

    def coercivity(self):
        """(nu, M) with G >= nu*|p| - M on the domain closure."""
        raise NotImplementedError

    def kernel_params(self):
        """(gkind, theta, const) scalars for the compiled solvers."""
        raise NotImplementedError

    def f_grid(self, pts):
        """Zeroth-order field on solver grids (zeros unless the family has one)."""
        pts = np.asarray(pts, dtype=np.float64)
        return np.zeros(pts.shape[:-1], dtype=np.float64)


class EikonalG(GFunction):
    kind = "eikonal"

    def value(self, pts, p):
        p = np.asarray(p, dtype=np.float64)
        return np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)

    def lip_p_axis(self, pts, axis):
        pts = np.asarray(pts, dtype=np.float64)
        return np.ones(pts.shape[:-1], dtype=np.float64)

    def coercivity(self):
        return 1.0, 0.0

    def kernel_params(self):
        return kernels.G_EIKONAL, 0.0, 0.0


class ConstantG(GFunction):
    kind = "constant"

    def __init__(self, value):
        self.const = float(value)

    def value(self, pts, p):
        p = np.asarray(p, dtype=np.float64)
        return np.full(p.shape[:-1], self.const, dtype=np.float64)

    def lip_p_axis(self, pts, axis):
        pts = np.asarray(pts, dtype=np.float64)
        return np.zeros(pts.shape[:-1], dtype=np.float64)

    def coercivity(self):
        # constant G is not coercive; nu = 0 keeps the bound G >= -M valid
        return 0.0, max(0.0, -self.const)

    def kernel_params(self):
        return kernels.G_CONSTANT, 0.0, self.const


class GamesG(GFunction):
    """theta*|p| - |p . b(x)| - f(x): the differential-games family.

    theta must dominate sup |DH| over the domain closure (checked at build
    time); then nu = theta - sup|DH| > 0 and M = sup f.
    """

    kind = "games"

    def __init__(self, hamiltonian, theta, f_poly=None, max_grad_norm=None, max_f=None):
        self.hamiltonian = hamiltonian
        self.theta = float(theta)
        self.f_poly = f_poly
        if max_grad_norm is None:
            raise HJAveragerError("games G needs the domain sup of |DH|")
        self.max_grad_norm = float(max_grad_norm)
        if self.theta <= self.max_grad_norm:
            raise HJAveragerError(
                f"theta={self.theta:g} must exceed sup|DH|={self.max_grad_norm:g}")
        if max_f is None:
            max_f = 0.0 if f_poly is None else None
        if max_f is None:
            raise HJAveragerError("games G with f needs the domain sup of f")
        self.max_f = float(max_f)

    def _f(self, pts):
        if self.f_poly is None:
            pts = np.asarray(pts, dtype=np.float64)
            return np.zeros(pts.shape[:-1], dtype=np.float64)
        return self.f_poly.value(pts)

    def f_grid(self, pts):
        return self._f(pts)

    def value(self, pts, p):
        pts = np.asarray(pts, dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        b = self.hamiltonian.drift(pts)
        pn = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2)
        pb = p[..., 0] * b[..., 0] + p[..., 1] * b[..., 1]
        return self.theta * pn - np.abs(pb) - self._f(pts)

    def lip_p_axis(self, pts, axis):
        b = self.hamiltonian.drift(pts)
        return self.theta + np.abs(b[..., axis])

    def coercivity(self):
        return self.theta - self.max_grad_norm, self.max_f

    def kernel_params(self):
        return kernels.G_GAMES, self.theta, 0.0


def domain_sup(spec, func, resolution=512):
    """Sup of a pointwise field over the domain closure, by dense sampling."""
    from .geometry import bounding_box

    (x0, x1), (y0, y1) = bounding_box(spec)
    xs = np.linspace(x0, x1, resolution)
    ys = np.linspace(y0, y1, max(8, int(resolution * (y1 - y0) / (x1 - x0))))
    pts = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)
    h = spec.hamiltonian.value(pts)
    mask = h < spec.h0
    for hi in spec.well_levels:
        mask &= ~(h <= hi)
    vals = func(pts)[mask]
    if vals.size == 0:
        raise HJAveragerError("domain mask came out empty; check thresholds")
    return float(vals.max())


def make_games(spec, theta_factor=2.0, f_poly=None, theta=None):
    """Games-family G with theta = theta_factor * sup|DH| unless given explicitly."""
    max_dh = domain_sup(spec, spec.hamiltonian.grad_norm)
    if theta is None:
        theta = theta_factor * max_dh
    max_f = 0.0
    if f_poly is not None:
        max_f = domain_sup(spec, f_poly.value)
    return GamesG(spec.hamiltonian, theta, f_poly=f_poly,
                  max_grad_norm=max_dh, max_f=max_f)
