"""Region decomposition of the multi-well domain and structural checks.

The domain is carved out of level sets of H: an outer region where
0 < H < h0, one region per well where h_i < H < 0, the zero level set
joining them, and everything else outside.  A reference grid with flood-fill
component labels realizes the decomposition; pointwise queries overlay the
one-cell-thick zero band and the threshold cuts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import CountMismatch, DegenerateHessian, FitFailure, HJAveragerError, UnclassifiedPoint
from .hamiltonians import CriticalPoint, HamiltonianSpec

REGION_OUTSIDE = -1
REGION_ZERO_LEVEL = -2
_UNSET = -3

_DEDUP_RADIUS = 1e-6


def region_name(code):
    if code == REGION_OUTSIDE:
        return "outside"
    if code == REGION_ZERO_LEVEL:
        return "zero_level"
    return f"region_{code}"


def eval_fields(spec: HamiltonianSpec, x):
    """(H, DH, b) at a point; b = (H_y, -H_x) so b.DH = 0 identically."""
    x = np.asarray(x, dtype=np.float64)
    h = float(spec.hamiltonian.value(x))
    grad = spec.hamiltonian.gradient(x)
    drift = np.array([grad[1], -grad[0]])
    return h, grad, drift


def bounding_box(spec: HamiltonianSpec, pad=0.08):
    """Axis-aligned box containing {H <= h0}, grown until the rim clears h0."""
    ham = spec.hamiltonian
    lo, hi = -2.0, 2.0
    for _ in range(40):
        t = np.linspace(lo, hi, 257)
        rim = np.concatenate([
            np.stack([t, np.full_like(t, lo)], axis=-1),
            np.stack([t, np.full_like(t, hi)], axis=-1),
            np.stack([np.full_like(t, lo), t], axis=-1),
            np.stack([np.full_like(t, hi), t], axis=-1),
        ])
        if ham.value(rim).min() > spec.h0 * 1.5 + 0.1:
            break
        lo *= 1.4
        hi *= 1.4
    else:
        raise HJAveragerError("could not enclose {H <= h0}; H may not grow at infinity")

    # shrink each side back toward the sublevel set
    t = np.linspace(lo, hi, 1025)
    xy = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1)
    inside = ham.value(xy) <= spec.h0
    if not inside.any():
        raise HJAveragerError("sublevel set {H <= h0} appears empty")
    ix, iy = np.nonzero(inside)
    x0, x1 = t[ix.min()], t[ix.max()]
    y0, y1 = t[iy.min()], t[iy.max()]
    px = pad * max(x1 - x0, 1e-3)
    py = pad * max(y1 - y0, 1e-3)
    return (x0 - px, x1 + px), (y0 - py, y1 + py)


def locate_critical_points(spec: HamiltonianSpec, seed_box=None, seeds_per_axis=33):
    """Multi-start Newton refinement of DH = 0, deduplicated and classified.

    Roots are accepted only inside the seed box (plus one seed spacing), so a
    box that fails to cover the domain surfaces as a CountMismatch.
    """
    ham = spec.hamiltonian
    if seed_box is None:
        seed_box = bounding_box(spec)
    (x0, x1), (y0, y1) = seed_box
    xs = np.linspace(x0, x1, seeds_per_axis)
    ys = np.linspace(y0, y1, seeds_per_axis)
    margin = max(xs[1] - xs[0], ys[1] - ys[0])
    step_cap = 0.5 * max(x1 - x0, y1 - y0)

    roots = []
    for sx in xs:
        for sy in ys:
            p = np.array([sx, sy])
            for _ in range(60):
                g = ham.gradient(p)
                hess = ham.hessian(p)
                det = hess[0, 0] * hess[1, 1] - hess[0, 1] * hess[1, 0]
                if abs(det) < 1e-14:
                    break
                step = np.linalg.solve(hess, -g)
                norm = np.hypot(step[0], step[1])
                if norm > step_cap:
                    step *= step_cap / norm
                p = p + step
                if norm < 1e-14:
                    break
            else:
                continue
            g = ham.gradient(p)
            if np.hypot(g[0], g[1]) > 1e-10:
                continue
            if not (x0 - margin <= p[0] <= x1 + margin and y0 - margin <= p[1] <= y1 + margin):
                continue
            for r in roots:
                if np.hypot(p[0] - r[0], p[1] - r[1]) < _DEDUP_RADIUS:
                    break
            else:
                roots.append(p)

    if len(roots) != spec.n_critical:
        raise CountMismatch(len(roots), spec.n_critical)

    points = []
    for p in roots:
        hess = ham.hessian(p)
        det = hess[0, 0] * hess[1, 1] - hess[0, 1] * hess[1, 0]
        scale = max(abs(hess).max(), 1.0) ** 2
        if abs(det) < 1e-8 * scale:
            raise DegenerateHessian(f"singular Hessian at {p}")
        if det < 0:
            kind = "saddle"
        elif hess[0, 0] > 0:
            kind = "minimum"
        else:
            kind = "maximum"
        points.append(CriticalPoint(p, kind, float(ham.value(p))))

    # z_0 is the unique non-minimum (the fixture keeps its minimum at slot 0);
    # wells are ordered by descending x, ties by ascending y.
    non_min = [p for p in points if p.kind != "minimum"]
    if len(non_min) > 1:
        raise HJAveragerError("more than one non-minimum critical point")
    if non_min:
        z0 = non_min[0]
    else:
        z0 = min(points, key=lambda p: float(np.hypot(*p.location)))
    wells = [p for p in points if p is not z0]
    wells.sort(key=lambda p: (-p.location[0], p.location[1]))
    return [z0] + wells


def validate_spec(spec: HamiltonianSpec, tol=1e-8):
    """Invariant audit of the declared structure; returns {name: bool}."""
    ham = spec.hamiltonian
    z0 = spec.critical_points[0]
    flags = {}
    flags["z0_at_origin"] = bool(np.hypot(*z0.location) <= 1e-8 and abs(z0.value) <= 1e-12)
    grads = [np.hypot(*ham.gradient(p.location)) for p in spec.critical_points]
    flags["critical_gradients_vanish"] = bool(max(grads) <= 1e-8)
    admissible = spec.h0 > 0
    for cp, hi in zip(spec.wells(), spec.well_levels):
        admissible = admissible and cp.value < hi < 0
    flags["thresholds_admissible"] = bool(admissible)
    m, n = spec.saddle_exponents
    flags["exponent_window"] = bool(n < m + 2)
    r = np.exp(np.linspace(np.log(1e-4), np.log(spec.neighborhood_radius), 40))
    th = np.linspace(0.0, 2 * np.pi, 64, endpoint=False)
    pts = np.stack([np.outer(r, np.cos(th)), np.outer(r, np.sin(th))], axis=-1)
    gn = ham.grad_norm(pts).min(axis=1)
    flags["gradient_floor"] = bool(np.all(gn >= spec.gradient_bound * r**n * (1 - 1e-6)))
    hess = ham.hessian(pts)
    hmax = np.abs(hess).max(axis=(1, 2, 3))
    flags["hessian_growth"] = bool(np.all(hmax <= spec.hessian_bound * r**m * (1 + 1e-6)))
    return flags


@dataclass
class RegionMap:
    """Reference classification grid; queries are read-only after build."""

    spec: HamiltonianSpec
    xs: np.ndarray
    ys: np.ndarray
    labels: np.ndarray       # (ny, nx) int8 component labels, no band overlay
    h_nodes: np.ndarray      # (ny, nx)

    @property
    def cell_diag(self):
        return float(np.hypot(self.xs[1] - self.xs[0], self.ys[1] - self.ys[0]))

    def band_halfwidth(self, pts):
        """Pointwise half-thickness of the zero-level band: |H| below half a
        cell diagonal times the cell's gradient scale counts as the zero set."""
        ham = self.spec.hamiltonian
        d = self.cell_diag
        gn = ham.grad_norm(pts)
        hess = ham.hessian(pts)
        hn = np.abs(hess).max(axis=(-2, -1))
        return 0.5 * d * (gn + 0.5 * d * hn)

    def region_of(self, x):
        x = np.asarray(x, dtype=np.float64)
        h = float(self.spec.hamiltonian.value(x))
        if abs(h) <= float(self.band_halfwidth(x)):
            return REGION_ZERO_LEVEL
        if h >= self.spec.h0:
            return REGION_OUTSIDE
        if not (self.xs[0] <= x[0] <= self.xs[-1] and self.ys[0] <= x[1] <= self.ys[-1]):
            return REGION_OUTSIDE
        if h > 0:
            return 0
        j = int(np.clip(np.searchsorted(self.xs, x[0]) - 1, 0, len(self.xs) - 2))
        i = int(np.clip(np.searchsorted(self.ys, x[1]) - 1, 0, len(self.ys) - 2))
        best = None
        for ii in (i, i + 1):
            for jj in (j, j + 1):
                lab = self.labels[ii, jj]
                if lab >= 1 and self.h_nodes[ii, jj] < 0:
                    d2 = (self.xs[jj] - x[0]) ** 2 + (self.ys[ii] - x[1]) ** 2
                    if best is None or d2 < best[0]:
                        best = (d2, int(lab))
        if best is None:
            raise UnclassifiedPoint(f"no classified well node near {x}")
        return best[1]


def build_region_map(spec: HamiltonianSpec, resolution=256):
    """Classify a reference grid by flood fill from the critical points."""
    (x0, x1), (y0, y1) = bounding_box(spec)
    nx = int(resolution)
    ny = max(8, int(round(nx * (y1 - y0) / (x1 - x0))))
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(y0, y1, ny)
    pts = np.stack(np.meshgrid(xs, ys, indexing="xy"), axis=-1)
    h = spec.hamiltonian.value(pts)

    labels = np.full(h.shape, _UNSET, dtype=np.int8)
    labels[h >= spec.h0] = REGION_OUTSIDE

    neg = h < 0
    comp, _n = ndimage.label(neg)
    for i, cp in enumerate(spec.wells(), start=1):
        jx = int(np.clip(np.searchsorted(xs, cp.location[0]), 0, nx - 1))
        iy = int(np.clip(np.searchsorted(ys, cp.location[1]), 0, ny - 1))
        cid = comp[iy, jx]
        if cid == 0:
            jx2 = max(0, jx - 1)
            iy2 = max(0, iy - 1)
            cid = max(comp[iy, jx2], comp[iy2, jx], comp[iy2, jx2])
        if cid == 0:
            raise UnclassifiedPoint(f"well center {cp.location} fell outside its component")
        labels[comp == cid] = i

    pos = (h > 0) & (h < spec.h0)
    pcomp, _n = ndimage.label(pos)
    # seeds of the outer region: positive cells bordering the zero set
    border = pos & (ndimage.binary_dilation(h <= 0))
    seed_ids = np.unique(pcomp[border])
    seed_ids = seed_ids[seed_ids > 0]
    if seed_ids.size == 0:
        # fixture-style spec without a negative set: take the component of
        # the smallest positive value (hugging the minimum)
        idx = np.unravel_index(np.argmin(np.where(pos, h, np.inf)), h.shape)
        seed_ids = np.array([pcomp[idx]])
    for sid in seed_ids:
        labels[pcomp == sid] = 0

    return RegionMap(spec=spec, xs=xs, ys=ys, labels=labels, h_nodes=h)


def region_of(spec: HamiltonianSpec, x, region_map=None):
    if region_map is None:
        region_map = _cached_map(spec)
    return region_map.region_of(x)


_map_cache = {}


def _cached_map(spec):
    key = id(spec)
    if key not in _map_cache:
        _map_cache[key] = build_region_map(spec)
    return _map_cache[key]


@dataclass
class StructureReport:
    """Fitted local exponents and the gradient/growth floor constants."""

    m_hat: float
    n_hat: float
    alpha: float
    rho: float
    a0: float
    a3_paper: float
    a3_fit: float
    mh_samples: list
    fit_residual_m: float
    fit_residual_n: float
    flags: dict = field(default_factory=dict)

    def all_passed(self):
        return all(self.flags.values())

    def to_dict(self):
        return {
            "m_hat": self.m_hat, "n_hat": self.n_hat,
            "alpha": self.alpha, "rho": self.rho,
            "a0": self.a0, "a3_paper": self.a3_paper, "a3_fit": self.a3_fit,
            "mh_samples": [[r, v] for r, v in self.mh_samples],
            "fit_residual_m": self.fit_residual_m,
            "fit_residual_n": self.fit_residual_n,
            "flags": dict(self.flags),
        }


def _loglog_fit(r, v, what, residual_cap):
    mask = v > 0
    if mask.sum() < 4:
        raise FitFailure(f"{what}: too few positive samples to fit")
    lr = np.log(r[mask])
    lv = np.log(v[mask])
    slope, intercept = np.polyfit(lr, lv, 1)
    resid = float(np.abs(lv - (slope * lr + intercept)).max())
    if resid > residual_cap:
        raise FitFailure(f"{what}: log-log residual {resid:.3f} exceeds {residual_cap}")
    return float(slope), resid


def inradius_at_node(spec: HamiltonianSpec, n_angles=256):
    """Largest R with B_R inside the domain: first threshold crossing over rays."""
    (x0, x1), (y0, y1) = bounding_box(spec)
    t_max = float(np.hypot(max(abs(x0), x1), max(abs(y0), y1)))
    h_floor = max(spec.well_levels) if spec.well_levels else -np.inf
    th = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    best = t_max
    ts = np.linspace(0.0, t_max, 2048)
    for a in th:
        pts = np.stack([ts * np.cos(a), ts * np.sin(a)], axis=-1)
        h = spec.hamiltonian.value(pts)
        exited = (h >= spec.h0) | (h <= h_floor)
        idx = np.argmax(exited)
        if exited[idx]:
            lo = ts[max(idx - 1, 0)]
            hi = ts[idx]
            target_up = h[idx] >= spec.h0
            for _ in range(50):
                mid = 0.5 * (lo + hi)
                hm = float(spec.hamiltonian.value(np.array([mid * np.cos(a), mid * np.sin(a)])))
                if (hm >= spec.h0) if target_up else (hm <= h_floor):
                    hi = mid
                else:
                    lo = mid
            best = min(best, hi)
    return best


def max_h_in_ball(spec: HamiltonianSpec, r, n_angles=512):
    """m_H(r): max of H over the closure of the outer region within B_r.

    For small r the maximum sits on the circle |x| = r; a parabolic refinement
    around the best sampled angle sharpens the estimate.
    """
    th = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    pts = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
    h = spec.hamiltonian.value(pts)
    h = np.minimum(h, spec.h0)
    k = int(np.argmax(h))
    hm, h0v, hp = h[(k - 1) % n_angles], h[k], h[(k + 1) % n_angles]
    denom = hm - 2 * h0v + hp
    if denom < 0:
        dth = th[1] - th[0]
        t_off = 0.5 * (hm - hp) / denom * dth
        t_best = th[k] + t_off
        val = float(spec.hamiltonian.value(np.array([r * np.cos(t_best), r * np.sin(t_best)])))
        return max(float(h0v), min(val, spec.h0))
    return float(h0v)


def verify_structure(spec: HamiltonianSpec, radii=None, n_angles=64,
                     grid_resolution=512, residual_cap=0.35):
    """Fit (m, n) near the saddle and audit the gradient-floor and growth lemmas.

    The floor constant is the sampled min of |DH|/|H|^alpha over the domain,
    deflated by 5% so the reported inequality is robust off the sample grid.
    """
    ham = spec.hamiltonian
    if radii is None:
        radii = np.exp(np.linspace(np.log(spec.neighborhood_radius), np.log(1e-4), 25))
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(np.diff(radii) >= 0):
        raise HJAveragerError("sample radii must decrease toward 0")

    th = np.linspace(0.0, 2 * np.pi, n_angles, endpoint=False)
    pts = np.stack([np.outer(radii, np.cos(th)), np.outer(radii, np.sin(th))], axis=-1)
    hess = ham.hessian(pts)
    hess_max = np.abs(hess).max(axis=(1, 2, 3))
    grad_min = ham.grad_norm(pts).min(axis=1)

    m_hat, resid_m = _loglog_fit(radii, hess_max, "hessian growth", residual_cap)
    n_hat, resid_n = _loglog_fit(radii, grad_min, "gradient floor", residual_cap)

    m, n = spec.saddle_exponents
    alpha = n / (m + 2.0)
    rho = 1.0 / (1.0 - alpha)

    # empirical gradient floor over the domain closure
    (x0, x1), (y0, y1) = bounding_box(spec)
    gx = np.linspace(x0, x1, grid_resolution)
    gy = np.linspace(y0, y1, max(8, int(grid_resolution * (y1 - y0) / (x1 - x0))))
    gpts = np.stack(np.meshgrid(gx, gy, indexing="xy"), axis=-1)
    hval = ham.value(gpts)
    in_domain = hval < spec.h0
    for hi in spec.well_levels:
        in_domain &= ~(hval <= hi)
    in_domain &= np.abs(hval) > 1e-13
    ratio = ham.grad_norm(gpts)[in_domain] / np.abs(hval[in_domain]) ** alpha
    a0 = 0.95 * float(ratio.min())

    a3_paper = ((1 - alpha) * a0) ** rho
    # m_H is only monotone while the ball stays inside the domain
    r_cap = 0.9 * inradius_at_node(spec)
    r_mh = np.exp(np.linspace(np.log(1e-3), np.log(r_cap), 20))
    mh = np.array([max_h_in_ball(spec, r) for r in r_mh])
    a3_fit = float((mh / r_mh**rho).min())

    flags = validate_spec(spec)
    flags["alpha_in_unit_interval"] = bool(0.0 < alpha < 1.0)
    flags["exponent_fit_m"] = bool(abs(m_hat - m) <= 0.25)
    flags["exponent_fit_n"] = bool(abs(n_hat - n) <= 0.25)
    flags["gradient_floor_alpha"] = bool(a0 > 0)
    flags["mh_lower_bound"] = bool(np.all(mh >= a3_paper * r_mh**rho * (1 - 1e-9)))
    flags["mh_increasing"] = bool(np.all(np.diff(mh) > 0))

    return StructureReport(
        m_hat=m_hat, n_hat=n_hat, alpha=float(alpha), rho=float(rho),
        a0=a0, a3_paper=float(a3_paper), a3_fit=a3_fit,
        mh_samples=[(float(r), float(v)) for r, v in zip(r_mh, mh)],
        fit_residual_m=resid_m, fit_residual_n=resid_n, flags=flags,
    )
