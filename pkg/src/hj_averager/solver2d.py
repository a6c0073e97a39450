"""Monotone finite-difference solver for the perturbed Dirichlet problem.

The scheme is local Lax-Friedrichs on a masked Cartesian grid: one-sided
differences feed F(x, p) = -(1/eps) b(x) . p + G(x, p) evaluated at the
midpoint slope, with per-axis dissipation at least |b|/eps + Lip_p(G) so
every node update is nondecreasing in its neighbors.  Boundary nodes take
u <- min(g, one-sided interior update), the discrete form of the Dirichlet
condition in the viscosity sense: where characteristics exit, the interior
branch wins and the datum is ignored.  The iteration descends from the
uniform upper bound +C (Gauss-Seidel, four alternating sweep orders), so the
fixed point reached is the maximal one, mirroring the Perron construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import kernels
from .errors import InsufficientDissipation, NoConvergence, TooCoarse, TrajectoryExit, UnclassifiedPoint
from .geometry import REGION_OUTSIDE, REGION_ZERO_LEVEL, bounding_box

CLS_OUTSIDE = kernels.CLS_OUTSIDE
CLS_INTERIOR = kernels.CLS_INTERIOR
CLS_BOUNDARY = kernels.CLS_BOUNDARY


@dataclass
class MaskedGrid:
    """Cartesian grid with interior/boundary/outside classification.

    cls follows the kernel codes; region carries the edge index per node
    (zero-band nodes are interior with region REGION_ZERO_LEVEL).  gval holds
    the boundary datum, evaluated at the projection of the node onto the
    exact threshold level set.
    """

    spec: object
    xs: np.ndarray
    ys: np.ndarray
    cls: np.ndarray        # (ny, nx) int8
    region: np.ndarray     # (ny, nx) int8
    h_nodes: np.ndarray    # (ny, nx)
    gval: np.ndarray       # (ny, nx)

    @property
    def hx(self):
        return float(self.xs[1] - self.xs[0])

    @property
    def hy(self):
        return float(self.ys[1] - self.ys[0])

    @property
    def shape(self):
        return self.cls.shape

    def points(self):
        return np.stack(np.meshgrid(self.xs, self.ys, indexing="xy"), axis=-1)

    def active(self):
        return self.cls != CLS_OUTSIDE

    def interior(self):
        return self.cls == CLS_INTERIOR

    def boundary(self):
        return self.cls == CLS_BOUNDARY

    def interp(self, u, pts):
        """Bilinear interpolation of a node field at arbitrary points."""
        pts = np.asarray(pts, dtype=np.float64)
        fx = (pts[..., 0] - self.xs[0]) / self.hx
        fy = (pts[..., 1] - self.ys[0]) / self.hy
        j = np.clip(np.floor(fx).astype(np.int64), 0, len(self.xs) - 2)
        i = np.clip(np.floor(fy).astype(np.int64), 0, len(self.ys) - 2)
        wx = np.clip(fx - j, 0.0, 1.0)
        wy = np.clip(fy - i, 0.0, 1.0)
        return ((1 - wy) * ((1 - wx) * u[i, j] + wx * u[i, j + 1])
                + wy * ((1 - wx) * u[i + 1, j] + wx * u[i + 1, j + 1]))

    def contains(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        return ((pts[..., 0] >= self.xs[0]) & (pts[..., 0] <= self.xs[-1])
                & (pts[..., 1] >= self.ys[0]) & (pts[..., 1] <= self.ys[-1]))


def build_masked_grid(spec, resolution, boundary, min_well_width=8):
    """Classify a square-spacing grid against the threshold level sets.

    boundary maps points (..., 2) to the Dirichlet datum g.  Raises TooCoarse
    when the resolution cannot give every well min_well_width interior nodes
    across (or is below 64 nodes per axis).
    """
    if resolution < 64:
        raise TooCoarse(f"resolution {resolution} is below the 64-node floor")
    (x0, x1), (y0, y1) = bounding_box(spec)
    nx = int(resolution)
    hx = (x1 - x0) / (nx - 1)
    ny = int(np.ceil((y1 - y0) / hx)) + 1
    xs = x0 + hx * np.arange(nx)
    ys = y0 + hx * np.arange(ny)
    pts = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)
    ham = spec.hamiltonian
    h = ham.value(pts)

    diag = float(np.hypot(hx, hx))
    gn = ham.grad_norm(pts)
    hessn = np.abs(ham.hessian(pts)).max(axis=(-2, -1))
    band = np.abs(h) <= 0.5 * diag * (gn + 0.5 * diag * hessn)

    region = np.full(h.shape, REGION_OUTSIDE, dtype=np.int8)
    in_dom = np.zeros(h.shape, dtype=bool)

    neg = (h < 0) & ~band
    comp, _ = ndimage.label(neg)
    for i, cp in enumerate(spec.wells(), start=1):
        jx = int(np.argmin(np.abs(xs - cp.location[0])))
        iy = int(np.argmin(np.abs(ys - cp.location[1])))
        cid = comp[iy, jx]
        if cid == 0:
            near = comp[max(iy - 1, 0):iy + 2, max(jx - 1, 0):jx + 2]
            cid = near.max()
        if cid == 0:
            raise UnclassifiedPoint(f"well {i} center not reached on the solver grid")
        well = (comp == cid) & (h > spec.well_levels[i - 1])
        region[well] = i
        in_dom |= well

    outer = (h > 0) & ~band & (h < spec.h0)
    region[outer] = 0
    in_dom |= outer
    region[band] = REGION_ZERO_LEVEL
    in_dom |= band

    cls = np.where(in_dom, CLS_INTERIOR, CLS_OUTSIDE).astype(np.int8)
    # boundary ring: in-domain nodes touching an outside node
    outside = ~in_dom
    ring = in_dom & ndimage.binary_dilation(outside, structure=np.array(
        [[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool))
    # rim of the array counts as outside
    ring[0, :] = in_dom[0, :]
    ring[-1, :] = in_dom[-1, :]
    ring[:, 0] = in_dom[:, 0]
    ring[:, -1] = in_dom[:, -1]
    cls[ring] = CLS_BOUNDARY

    # datum: project each boundary node onto its threshold level set
    gval = np.zeros(h.shape, dtype=np.float64)
    bi, bj = np.nonzero(cls == CLS_BOUNDARY)
    bpts = pts[bi, bj]
    reg = region[bi, bj]
    target = np.where(reg == 0, spec.h0, 0.0)
    for i in range(1, spec.n_critical):
        target = np.where(reg == i, spec.well_levels[i - 1], target)
    target = np.where(reg == REGION_ZERO_LEVEL, 0.0, target)
    g = ham.gradient(bpts)
    gg = np.maximum(g[..., 0] ** 2 + g[..., 1] ** 2, 1e-300)
    proj = bpts - ((ham.value(bpts) - target) / gg)[:, None] * g
    gval[bi, bj] = boundary(proj)

    for i in range(1, spec.n_critical):
        sel = (cls == CLS_INTERIOR) & (region == i)
        if not sel.any():
            raise TooCoarse(f"well {i} has no interior nodes")
        ii, jj = np.nonzero(sel)
        span = min(ii.max() - ii.min() + 1, jj.max() - jj.min() + 1)
        if span < min_well_width:
            raise TooCoarse(f"well {i} spans only {span} interior nodes")

    return MaskedGrid(spec=spec, xs=xs, ys=ys, cls=cls, region=region,
                      h_nodes=h, gval=gval)


def lax_friedrichs_value(G, drift_vec, x, p_minus, p_plus, eps,
                         sigma_x=None, sigma_y=None):
    """Local Lax-Friedrichs numerical Hamiltonian at one stencil.

    Consistency: p_minus == p_plus returns F(x, p) exactly.  Passing sigma
    below the per-axis Lipschitz bound of F in p raises
    InsufficientDissipation (monotonicity would fail).
    """
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(drift_vec, dtype=np.float64)
    pm = np.asarray(p_minus, dtype=np.float64)
    pp = np.asarray(p_plus, dtype=np.float64)
    need_x = abs(b[0]) / eps + float(G.lip_p_axis(x, 0))
    need_y = abs(b[1]) / eps + float(G.lip_p_axis(x, 1))
    if sigma_x is None:
        sigma_x = need_x
    if sigma_y is None:
        sigma_y = need_y
    if sigma_x < need_x - 1e-12 or sigma_y < need_y - 1e-12:
        raise InsufficientDissipation(
            f"sigma=({sigma_x:g},{sigma_y:g}) below the bound ({need_x:g},{need_y:g})")
    pbar = 0.5 * (pm + pp)
    val = -(b @ pbar) / eps + float(G.value(x, pbar))
    val -= 0.5 * sigma_x * (pp[0] - pm[0]) + 0.5 * sigma_y * (pp[1] - pm[1])
    return float(val)


@dataclass
class EpsSolution:
    """Converged discrete solution for one eps."""

    grid: MaskedGrid
    eps: float
    lam: float
    u: np.ndarray
    iterations: int        # Gauss-Seidel sweeps
    residual_inf: float
    c_m: float             # max{M, sup|u|}, the constant of the loop bound

    def sup_norm(self):
        return float(np.abs(self.u[self.grid.active()]).max())


def _solver_arrays(grid, G, eps):
    pts = grid.points()
    b = grid.spec.hamiltonian.drift(pts)
    b1 = np.ascontiguousarray(b[..., 0])
    b2 = np.ascontiguousarray(b[..., 1])
    farr = np.ascontiguousarray(G.f_grid(pts))
    sx = np.abs(b1) / eps + G.lip_p_axis(pts, 0)
    sy = np.abs(b2) / eps + G.lip_p_axis(pts, 1)
    return b1, b2, farr, np.ascontiguousarray(sx), np.ascontiguousarray(sy)


def perron_bound(grid, G, lam):
    """C = max(max|G(x,0)|/lambda, max|g|): +-C are super/subsolutions."""
    pts = grid.points()
    g0 = np.abs(G.at_zero(pts))[grid.active()].max()
    gb = 0.0
    if grid.boundary().any():
        gb = float(np.abs(grid.gval[grid.boundary()]).max())
    return max(float(g0) / lam, gb)


def solve_eps(grid, G, lam, eps, tol_factor=1e-8, max_sweeps=100_000,
              check_every=16):
    """Damped Gauss-Seidel iteration to the maximal fixed point.

    Terminates when the recomputed scheme residual drops below
    tol_factor * (1 + sup|u|); raises NoConvergence at the sweep cap.
    """
    b1, b2, farr, sx, sy = _solver_arrays(grid, G, eps)
    cls = grid.cls
    gval = grid.gval
    c_bound = perron_bound(grid, G, lam)
    u = np.where(grid.active(), c_bound, 0.0)
    inv_hx, inv_hy = 1.0 / grid.hx, 1.0 / grid.hy
    gkind, gtheta, gconst = G.kernel_params()
    resid = np.zeros_like(u)

    sweeps = 0
    rinf = np.inf
    while sweeps < max_sweeps:
        for _ in range(check_every):
            kernels.sweep2d_cycle(u, cls, gval, b1, b2, farr, sx, sy,
                                  lam, 1.0 / eps, inv_hx, inv_hy,
                                  gkind, gtheta, gconst)
            sweeps += 4
            if sweeps >= max_sweeps:
                break
        rinf = kernels.residual2d(u, cls, gval, b1, b2, farr, sx, sy,
                                  lam, 1.0 / eps, inv_hx, inv_hy,
                                  gkind, gtheta, gconst, resid)
        tol = tol_factor * (1.0 + float(np.abs(u[grid.active()]).max()))
        if rinf <= tol:
            break
    else:
        raise NoConvergence(max_sweeps, rinf)

    out = np.where(grid.active(), u, np.nan)
    _nu, m_const = G.coercivity()
    sup = float(np.abs(u[grid.active()]).max())
    return EpsSolution(grid=grid, eps=eps, lam=lam, u=out, iterations=sweeps,
                       residual_inf=float(rinf), c_m=max(m_const, sup))


def residual(grid, u, G, lam, eps):
    """(inf-norm, per-node field) of the scheme residual; no update."""
    b1, b2, farr, sx, sy = _solver_arrays(grid, G, eps)
    out = np.zeros_like(grid.h_nodes)
    work = np.where(grid.active(), u, 0.0)
    rinf = kernels.residual2d(work, grid.cls, grid.gval, b1, b2, farr, sx, sy,
                              lam, 1.0 / eps, 1.0 / grid.hx, 1.0 / grid.hy,
                              *G.kernel_params(), out)
    return float(rinf), out


def _exp_weighted_integral(times, gvals, lam):
    """Cumulative integral of exp(-lam*s) g(s) ds, exact on linear pieces."""
    out = np.zeros_like(times)
    for k in range(1, len(times)):
        t0, t1 = times[k - 1], times[k]
        a = gvals[k - 1]
        bslope = (gvals[k] - gvals[k - 1]) / (t1 - t0)
        if lam == 0.0:
            seg = a * (t1 - t0) + 0.5 * bslope * (t1 - t0) ** 2
        else:
            e0 = np.exp(-lam * t0)
            e1 = np.exp(-lam * t1)
            # integral of exp(-lam s)(a + bslope (s - t0)) ds on [t0, t1]
            seg = a * (e0 - e1) / lam + bslope * ((e0 - e1) / lam**2 - (t1 - t0) * e1 / lam)
        out[k] = out[k - 1] + seg
    return out


@dataclass
class CharacteristicReport:
    worst_margin: float
    n_points: int
    sigma: float
    tau: float

    def to_dict(self):
        return {"worst_margin": self.worst_margin, "n_points": self.n_points,
                "sigma": self.sigma, "tau": self.tau}


def check_characteristic_inequality(solution, x_start, lam, f_bound,
                                    nu_coef=0.0, t_span=None, n_steps=400,
                                    u_callable=None):
    """Discounted inequality audit along dX/dt = (1/eps) b + nu_coef DH/|DH|.

    Checks exp(-lam s) w(s) <= exp(-lam t) w(t) + int_s^t exp(-lam r) g(r) dr
    for every sampled pair s < t, where w samples the discrete solution along
    the trajectory and g is the running bound.  Returns the worst margin
    (negative means a violation beyond the reported slack).
    """
    grid = solution.grid
    spec = grid.spec
    eps = solution.eps
    ham = spec.hamiltonian

    if t_span is None:
        t_span = eps
    b0 = ham.drift(np.asarray(x_start, dtype=np.float64))
    vmax = float(np.hypot(*b0)) / eps + abs(nu_coef) + 1e-12
    dt = min(t_span / n_steps, 0.25 * grid.hx / vmax)
    n = max(int(np.ceil(t_span / dt)), 8)
    dt = t_span / n

    gxi, gxj, gxc, gyi, gyj, gyc = ham.kernel_arrays()
    pts = np.empty((n + 1, 2))
    got = kernels.rollout_field(gxi, gxj, gxc, gyi, gyj, gyc,
                                float(x_start[0]), float(x_start[1]),
                                1.0 / eps, nu_coef, dt, n, pts)
    pts = pts[:got]
    if not bool(grid.contains(pts).all()):
        raise TrajectoryExit(f"characteristic left the grid box from {x_start}")
    inside = grid.interp(np.where(grid.active(), 1.0, 0.0), pts)
    if bool((inside < 0.999).any()):
        raise TrajectoryExit(f"characteristic left the domain from {x_start}")

    times = dt * np.arange(got)
    if u_callable is not None:
        w = np.asarray(u_callable(pts), dtype=np.float64)
    else:
        w = grid.interp(np.where(grid.active(), solution.u, 0.0), pts)
    if callable(f_bound):
        g = np.asarray(f_bound(times, pts), dtype=np.float64)
    else:
        g = np.full(got, float(f_bound))

    phi = np.exp(-lam * times) * w - _exp_weighted_integral(times, g, lam)
    run_max = np.maximum.accumulate(phi)
    margins = phi - run_max
    k = int(np.argmin(margins))
    j = int(np.argmax(phi[:k + 1]))
    return CharacteristicReport(worst_margin=float(margins[k]), n_points=got,
                                sigma=float(times[j]), tau=float(times[k]))
