"""Periodic orbits of the Hamiltonian flow and orbit-averaged effective Hamiltonians.

An orbit of dX/dt = b(X) stays on its level set, so the level curve c_i(h)
is traced by integrating the flow until first Poincare return.  The effective
Hamiltonian on edge i is the orbit average

    Gbar_i(h, q) = (1/T_i(h)) * integral_0^T G(X(t), q DH(X(t))) dt,

equal to the line-integral form with weight 1/|DH| by the change of variables
dl = |b| dt.  Both forms are computed here: the time average over uniform
samples (spectrally accurate for periodic integrands) and an independent
Hermite/Gauss quadrature in arc length used as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .errors import CriticalApproach, HJAveragerError, NoBracket, NoReturn
from .geometry import REGION_ZERO_LEVEL, region_of

_GAUSS_N = 8
_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(_GAUSS_N)
_GAUSS_X = 0.5 * (_GAUSS_X + 1.0)      # map to [0, 1]
_GAUSS_W = 0.5 * _GAUSS_W


@dataclass
class Orbit:
    """One traced periodic orbit, sampled at uniform times k*T/M.

    The last sample closes the loop; velocities hold b at the samples for
    Hermite interpolation.  raw_drift is the largest per-step energy error
    seen before the level-set projection.
    """

    edge: int
    level: float
    points: np.ndarray        # (M+1, 2)
    times: np.ndarray         # (M+1,)
    period: float
    length: float
    velocities: np.ndarray    # (M+1, 2)
    grad_norms: np.ndarray    # (M+1,)
    chord_length: float
    closure_error: float
    raw_drift: float

    @property
    def diameter(self):
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        return float(np.hypot(hi[0] - lo[0], hi[1] - lo[1]))

    def conservation_error(self, spec):
        return float(np.abs(spec.hamiltonian.value(self.points) - self.level).max())


def seed_point(spec, i, h, tol=1e-12):
    """A point on c_i(h), found by bisection along a ray.

    Wells are entered from z_i outward along +x; the outer edge is entered
    from the node along the direction of steepest level growth.  NoBracket
    signals an h outside the edge interval or a ray that never crosses it.
    """
    ham = spec.hamiltonian
    lo_h, hi_h = spec.edge_interval(i)
    if not (lo_h <= h <= hi_h) or h == 0.0:
        raise NoBracket(f"h={h:g} is not in the closed edge interval [{lo_h:g}, {hi_h:g}] less 0")

    if i == 0:
        origin = spec.critical_points[0].location
        angles = np.linspace(0.0, 2 * np.pi, 128, endpoint=False)
        ring = origin + 0.05 * np.stack([np.cos(angles), np.sin(angles)], axis=-1)
        vals = ham.value(ring)
        # smallest angle among ties keeps symmetric Hamiltonians deterministic
        k = int(np.nonzero(vals >= vals.max() - 1e-12 * (1 + abs(vals.max())))[0][0])
        direction = np.array([np.cos(angles[k]), np.sin(angles[k])])
    else:
        origin = spec.critical_points[i].location
        direction = np.array([1.0, 0.0])

    def level_on_ray(t):
        return float(ham.value(origin + t * direction)) - h

    t_hi = 1e-6
    f_lo = level_on_ray(0.0)
    bracket = None
    for _ in range(80):
        f_hi = level_on_ray(t_hi)
        if f_lo < 0.0 <= f_hi or f_hi <= 0.0 < f_lo:
            bracket = t_hi
            break
        t_hi *= 1.6
        if t_hi > 1e6:
            break
    if bracket is None:
        raise NoBracket(f"ray from {origin} failed to bracket level {h:g} on edge {i}")

    t_star = brentq(level_on_ray, t_hi / 1.6 if t_hi > 1e-6 else 0.0, bracket,
                    xtol=1e-15, rtol=8.9e-16)
    x = origin + t_star * direction
    # polish along DH to push |H - h| to the requested tolerance
    for _ in range(3):
        val = float(ham.value(x)) - h
        if abs(val) <= tol:
            break
        g = ham.gradient(x)
        x = x - val * g / float(g @ g)
    if abs(float(ham.value(x)) - h) > tol:
        raise NoBracket(f"could not polish seed to |H-h| <= {tol:g}")
    on_rim = abs(h - spec.threshold(i)) <= 1e-9 * (1 + abs(h))
    if not on_rim:
        r = region_of(spec, x)
        if r != i and r != REGION_ZERO_LEVEL:
            raise NoBracket(f"seed for edge {i} landed in region {r}")
    return x


def _hermite_segments(points, velocities, dt):
    """Gauss nodes and speeds on each cubic Hermite segment of the orbit.

    Returns (positions (M, G, 2), speeds (M, G)); speeds are |dX/dtau| scaled
    so that sum(w * speed) over a segment is its arc length.
    """
    x0 = points[:-1]
    x1 = points[1:]
    v0 = velocities[:-1] * dt
    v1 = velocities[1:] * dt
    tau = _GAUSS_X
    h00 = 2 * tau**3 - 3 * tau**2 + 1
    h10 = tau**3 - 2 * tau**2 + tau
    h01 = -2 * tau**3 + 3 * tau**2
    h11 = tau**3 - tau**2
    d00 = 6 * tau**2 - 6 * tau
    d10 = 3 * tau**2 - 4 * tau + 1
    d01 = -6 * tau**2 + 6 * tau
    d11 = 3 * tau**2 - 2 * tau

    pos = (h00[None, :, None] * x0[:, None, :] + h10[None, :, None] * v0[:, None, :]
           + h01[None, :, None] * x1[:, None, :] + h11[None, :, None] * v1[:, None, :])
    der = (d00[None, :, None] * x0[:, None, :] + d10[None, :, None] * v0[:, None, :]
           + d01[None, :, None] * x1[:, None, :] + d11[None, :, None] * v1[:, None, :])
    speed = np.sqrt(der[..., 0] ** 2 + der[..., 1] ** 2)
    return pos, speed


def _line_integral(spec, orbit, fn):
    """Integral of fn over the orbit with respect to arc length.

    fn maps an array of points (..., 2) to values; Gauss nodes are projected
    back onto the level set before evaluation.
    """
    dt = orbit.times[1] - orbit.times[0]
    pos, speed = _hermite_segments(orbit.points, orbit.velocities, dt)
    flat = pos.reshape(-1, 2)
    ham = spec.hamiltonian
    for _ in range(2):
        val = ham.value(flat) - orbit.level
        g = ham.gradient(flat)
        gg = np.maximum(g[..., 0] ** 2 + g[..., 1] ** 2, 1e-300)
        flat = flat - (val / gg)[:, None] * g
    vals = fn(flat).reshape(pos.shape[:2])
    return float(np.sum(vals * speed * _GAUSS_W[None, :]))


def trace_orbit(spec, x0, edge=None, rtol=1e-11, n_samples=4096,
                t_max=2000.0, dh_floor=1e-9):
    """Trace the orbit through x0: period by Poincare return, then a uniform
    fixed-step resample of the loop for the quadratures."""
    ham = spec.hamiltonian
    x0 = np.asarray(x0, dtype=np.float64)
    level = float(ham.value(x0))
    gn0 = float(ham.grad_norm(x0))
    if gn0 < dh_floor:
        raise CriticalApproach(f"|DH(x0)|={gn0:.3e} at the seed")

    hi, hj, hc = ham.value_kernel_arrays()
    gxi, gxj, gxc, gyi, gyj, gyc = ham.kernel_arrays()
    status, period, _diam, _min_dh = kernels.trace_period(
        hi, hj, hc, gxi, gxj, gxc, gyi, gyj, gyc,
        float(x0[0]), float(x0[1]), level, rtol, dh_floor, t_max)
    if status == kernels.TRACE_NO_RETURN:
        raise NoReturn(t_max)
    if status == kernels.TRACE_CRITICAL:
        raise CriticalApproach(f"|DH| fell below {dh_floor:g} while tracing")

    xs = np.empty(n_samples + 1)
    ys = np.empty(n_samples + 1)
    raw = np.empty(1)
    kernels.resample_orbit(hi, hj, hc, gxi, gxj, gxc, gyi, gyj, gyc,
                           float(x0[0]), float(x0[1]), level, period, xs, ys, raw)
    points = np.stack([xs, ys], axis=-1)
    times = np.linspace(0.0, period, n_samples + 1)
    velocities = ham.drift(points)
    grad_norms = ham.grad_norm(points)
    chord = float(np.sum(np.hypot(np.diff(xs), np.diff(ys))))
    closure = float(np.hypot(xs[-1] - xs[0], ys[-1] - ys[0]))

    if edge is None:
        edge = region_of(spec, x0)
        if edge == REGION_ZERO_LEVEL:
            edge = 0 if level > 0 else region_of(spec, x0)

    orbit = Orbit(edge=int(edge), level=level, points=points, times=times,
                  period=float(period), length=0.0, velocities=velocities,
                  grad_norms=grad_norms, chord_length=chord,
                  closure_error=closure, raw_drift=float(raw[0]))
    orbit.length = _line_integral(spec, orbit, lambda p: np.ones(p.shape[0]))
    return orbit


def effective_g(spec, G, orbit, q, with_error=False):
    """Orbit average of G(X, q DH(X)): uniform-time trapezoid over the period.

    The integrand is smooth and periodic, so the error decays faster than any
    power of the sample count; the reported estimate is the change under
    halving the sample set.
    """
    pts = orbit.points[:-1]
    grads = spec.hamiltonian.gradient(pts)
    q = float(q)
    vals = G.value(pts, q * grads)
    full = float(vals.mean())
    if not with_error:
        return full
    half = float(vals[::2].mean())
    return full, abs(full - half)


def effective_g_line(spec, G, orbit, q):
    """Independent line-integral route: (1/T) * closed integral of
    G(x, q DH)/|DH| dl via per-segment Gauss quadrature in arc length."""
    q = float(q)

    def fn(p):
        g = spec.hamiltonian.gradient(p)
        gn = np.sqrt(g[..., 0] ** 2 + g[..., 1] ** 2)
        return G.value(p, q * g) / gn

    return _line_integral(spec, orbit, fn) / orbit.period


def orbit_position(orbit: Orbit, t):
    """Cubic Hermite interpolation of the orbit state at time t (mod period)."""
    t = float(t) % orbit.period
    dt = orbit.times[1] - orbit.times[0]
    k = min(int(t / dt), len(orbit.times) - 2)
    tau = (t - orbit.times[k]) / dt
    x0 = orbit.points[k]
    x1 = orbit.points[k + 1]
    v0 = orbit.velocities[k] * dt
    v1 = orbit.velocities[k + 1] * dt
    h00 = 2 * tau**3 - 3 * tau**2 + 1
    h10 = tau**3 - 2 * tau**2 + tau
    h01 = -2 * tau**3 + 3 * tau**2
    h11 = tau**3 - tau**2
    return h00 * x0 + h10 * v0 + h01 * x1 + h11 * v1


_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def min_on_level_curve(spec, i, fn, n_samples=1000):
    """min of fn over the boundary orbit c_i(h_i): dense samples, then a
    golden-section refinement around the best one."""
    x0 = seed_point(spec, i, spec.threshold(i))
    orbit = trace_orbit(spec, x0, edge=i, n_samples=max(int(n_samples), 256))
    vals = np.asarray(fn(orbit.points[:-1]), dtype=np.float64)
    k = int(np.argmin(vals))
    dt = orbit.times[1] - orbit.times[0]

    def g(t):
        return float(fn(orbit_position(orbit, t)[None, :])[0])

    a = orbit.times[k] - dt
    b = orbit.times[k] + dt
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = g(c), g(d)
    for _ in range(60):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = g(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = g(d)
    refined = min(fc, fd)
    return min(float(vals[k]), refined)


def default_h_grid(spec, i, ratio=0.5, floor_factor=1e-4):
    """Geometric level grid on edge i, refined toward the node.

    Returns levels ordered from the node end outward; |h| runs from just
    above floor_factor*|J_i| up to the edge threshold.
    """
    thr = spec.threshold(i)
    width = abs(thr)
    n = int(np.floor(np.log(floor_factor) / np.log(ratio)))
    mags = width * ratio ** np.arange(n, -1, -1)
    return np.sign(thr) * mags


def default_q_grid(q_max=20.0, n=81):
    return np.linspace(-q_max, q_max, n)


@dataclass
class EdgeProfile:
    """Tabulated T_i, L_i and Gbar_i(h, q) for one edge.

    h_grid is ordered from the node end outward (|h| increasing); rows of G
    and err align with it.  Queries between nodes are bilinear; below the
    smallest |h| the nearest row extends constantly.  Rows that failed to
    trace stay masked out.
    """

    edge: int
    h_grid: np.ndarray
    q_grid: np.ndarray
    T: np.ndarray
    L: np.ndarray
    G: np.ndarray             # (nh, nq)
    err: np.ndarray           # (nh, nq)
    dh_min: np.ndarray
    dh_max: np.ndarray
    valid: np.ndarray         # (nh,) bool
    nu: float
    M: float
    gamma: float
    lip_q: float              # slope of the q-modulus: Lip_p(G) * sup|DH|

    def __post_init__(self):
        for name in ("h_grid", "q_grid", "T", "L", "G", "err", "dh_min", "dh_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        self.valid = np.asarray(self.valid, dtype=bool)

    @property
    def n_valid(self):
        return int(self.valid.sum())

    def valid_rows(self):
        return np.nonzero(self.valid)[0]

    def convex_rows(self):
        return self.valid & (np.abs(self.h_grid) < self.gamma)

    def row_weights(self, h):
        """(row_lo, row_hi, weight) for bilinear lookup at level h; clamps to
        the nearest valid row beyond the table (constant extrapolation)."""
        rows = self.valid_rows()
        mags = np.abs(self.h_grid[rows])
        m = abs(h)
        if m <= mags[0]:
            return rows[0], rows[0], 0.0
        if m >= mags[-1]:
            return rows[-1], rows[-1], 0.0
        k = int(np.searchsorted(mags, m)) - 1
        w = (m - mags[k]) / (mags[k + 1] - mags[k])
        return rows[k], rows[k + 1], float(w)

    def effective(self, h, q):
        """Bilinear Gbar_i(h, q)."""
        lo, hi, w = self.row_weights(h)
        row = (1 - w) * self.G[lo] + w * self.G[hi]
        if q < self.q_grid[0] or q > self.q_grid[-1]:
            from .errors import ProfileGap
            raise ProfileGap(f"q={q:g} outside table range [{self.q_grid[0]:g}, {self.q_grid[-1]:g}]")
        return float(np.interp(q, self.q_grid, row))

    def period(self, h):
        lo, hi, w = self.row_weights(h)
        return float((1 - w) * self.T[lo] + w * self.T[hi])

    def arc_length(self, h):
        lo, hi, w = self.row_weights(h)
        return float((1 - w) * self.L[lo] + w * self.L[hi])


def build_edge_profile(spec, G, i, h_grid=None, q_grid=None, gamma=None,
                       n_samples=4096, rtol=1e-11, t_max=2000.0):
    """Fill the (h, q) tables for edge i by tracing one orbit per level.

    Levels that fail to return within the time cap are marked invalid rather
    than aborting the build.
    """
    if h_grid is None:
        h_grid = default_h_grid(spec, i)
    if q_grid is None:
        q_grid = default_q_grid()
    h_grid = np.asarray(h_grid, dtype=np.float64)
    q_grid = np.asarray(q_grid, dtype=np.float64)
    if gamma is None:
        mags = [spec.h0] + [abs(h) for h in spec.well_levels]
        gamma = 0.5 * min(mags)

    nh, nq = len(h_grid), len(q_grid)
    T = np.full(nh, np.nan)
    L = np.full(nh, np.nan)
    Gt = np.full((nh, nq), np.nan)
    err = np.full((nh, nq), np.nan)
    dh_min = np.full(nh, np.nan)
    dh_max = np.full(nh, np.nan)
    valid = np.zeros(nh, dtype=bool)

    for r, h in enumerate(h_grid):
        try:
            x0 = seed_point(spec, i, float(h))
            orbit = trace_orbit(spec, x0, edge=i, rtol=rtol,
                                n_samples=n_samples, t_max=t_max)
        except (NoReturn, CriticalApproach):
            continue
        T[r] = orbit.period
        L[r] = orbit.length
        dh_min[r] = float(orbit.grad_norms.min())
        dh_max[r] = float(orbit.grad_norms.max())
        pts = orbit.points[:-1]
        grads = spec.hamiltonian.gradient(pts)
        for c, q in enumerate(q_grid):
            vals = G.value(pts, float(q) * grads)
            full = float(vals.mean())
            Gt[r, c] = full
            err[r, c] = abs(full - float(vals[::2].mean()))
        valid[r] = True

    nu, M = G.coercivity()
    lip = domain_lip_q(spec, G)
    return EdgeProfile(edge=i, h_grid=h_grid, q_grid=q_grid, T=T, L=L,
                       G=Gt, err=err, dh_min=dh_min, dh_max=dh_max,
                       valid=valid, nu=float(nu), M=float(M),
                       gamma=float(gamma), lip_q=float(lip))


def domain_lip_q(spec, G):
    """Slope of the q-modulus of Gbar: Lip_p(G) x sup|DH| over the domain."""
    from .gfuncs import domain_sup

    def lip_total(pts):
        return np.maximum(G.lip_p_axis(pts, 0), G.lip_p_axis(pts, 1)) * 2 ** 0.5

    max_lip = domain_sup(spec, lip_total)
    max_dh = domain_sup(spec, spec.hamiltonian.grad_norm)
    return max_lip * max_dh


@dataclass
class ProfileReport:
    """Outcome of the table-level property checks; violations are data."""

    edge: int
    period_bound_violations: list = field(default_factory=list)
    coercivity_violations: list = field(default_factory=list)
    lipschitz_violations: list = field(default_factory=list)
    convexity_violations: list = field(default_factory=list)
    subinterval_coercivity_ok: bool = True
    arc_length_floor: float = 0.0
    min_period: float = 0.0

    def passed(self):
        return (not self.period_bound_violations and not self.coercivity_violations
                and not self.lipschitz_violations and not self.convexity_violations
                and self.subinterval_coercivity_ok)

    def to_dict(self):
        return {
            "edge": self.edge,
            "period_bound_violations": self.period_bound_violations,
            "coercivity_violations": self.coercivity_violations,
            "lipschitz_violations": self.lipschitz_violations,
            "convexity_violations": self.convexity_violations,
            "subinterval_coercivity_ok": self.subinterval_coercivity_ok,
            "arc_length_floor": self.arc_length_floor,
            "min_period": self.min_period,
            "passed": self.passed(),
        }


def validate_profile(profile: EdgeProfile, convexity_tol=1e-6):
    """Audit the tabulated invariants: period/length consistency, the
    coercivity floor per entry, the q-Lipschitz modulus, and midpoint
    convexity on the certified band."""
    rep = ProfileReport(edge=profile.edge)
    rows = profile.valid_rows()
    if rows.size == 0:
        rep.subinterval_coercivity_ok = False
        return rep
    q = profile.q_grid
    rep.arc_length_floor = float(profile.L[rows].min())
    rep.min_period = float(profile.T[rows].min())

    for r in rows:
        t, ell = profile.T[r], profile.L[r]
        lo = ell / profile.dh_max[r] * (1 - 1e-9)
        hi = ell / profile.dh_min[r] * (1 + 1e-9)
        if not (lo <= t <= hi):
            rep.period_bound_violations.append((int(r), float(t), float(lo), float(hi)))

        slope = profile.nu * ell / t
        floor = slope * np.abs(q) - profile.M - profile.err[r] - 1e-12
        bad = np.nonzero(profile.G[r] < floor)[0]
        for c in bad:
            rep.coercivity_violations.append((int(r), int(c), float(profile.G[r, c] - floor[c])))

        dq = np.diff(q)
        dg = np.abs(np.diff(profile.G[r]))
        cap = profile.lip_q * dq + profile.err[r][1:] + profile.err[r][:-1] + 1e-12
        for c in np.nonzero(dg > cap)[0]:
            rep.lipschitz_violations.append((int(r), int(c), float(dg[c] - cap[c])))

    for r in np.nonzero(profile.convex_rows())[0]:
        g_row = profile.G[r]
        mid = g_row[:-2] + g_row[2:] - 2 * g_row[1:-1]
        tol = convexity_tol + profile.err[r][:-2] + profile.err[r][2:] + 2 * profile.err[r][1:-1]
        for c in np.nonzero(mid < -tol)[0]:
            rep.convexity_violations.append((int(r), int(c + 1), float(mid[c])))

    # closed-subinterval coercivity: the extreme q columns clear the zero
    # column by the worst-case slope across the whole table
    slope_min = float((profile.nu * profile.L[rows] / profile.T[rows]).min())
    q_ext = max(abs(q[0]), abs(q[-1]))
    c0 = int(np.argmin(np.abs(q)))
    lhs_lo = float((profile.G[rows, 0] - profile.G[rows, c0]).min())
    lhs_hi = float((profile.G[rows, -1] - profile.G[rows, c0]).min())
    bound = slope_min * q_ext - 2 * profile.M - 1e-9
    rep.subinterval_coercivity_ok = bool(lhs_lo >= bound and lhs_hi >= bound)
    return rep
