"""Maximal viscosity solution of the limit problem on the level-set graph.

Each edge carries lambda*u_i + Gbar_i(h, u_i') = 0 with the boundary datum
min over the edge's threshold curve applied in the viscosity sense at the
outer end; the node joins all edges through a common value.  The maximal
solution is built in two independent ways:

* free-node construction: per edge, the scheme runs with no constraint at
  the node (state-constraint closure); the common value is the min of the
  per-edge node traces and every edge is re-solved pinned there;
* descending node-value scan: candidate values walk down from +C and the
  first one whose pinned solves satisfy the one-sided subsolution test at
  the node wins.

The two must agree to one scan step; their agreement is an acceptance gate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .averaging import EdgeProfile
from .errors import Inconsistent, NoConvergence, NoFeasible, ProfileGap

_NODE_CELL_SPLIT = 2   # subdivisions of the [0, floor] cell next to the node


@dataclass
class EdgeSolution:
    """Discrete solution on one edge; h ascends, node_side marks which end is
    the junction."""

    edge: int
    h: np.ndarray
    u: np.ndarray
    node_side: str            # "left" | "right"
    node_value: float
    boundary_datum: float
    residual_inf: float
    cycles: int

    def interp(self, h):
        return np.interp(np.asarray(h, dtype=np.float64), self.h, self.u)

    def node_index(self):
        return 0 if self.node_side == "left" else len(self.h) - 1

    def outer_index(self):
        return len(self.h) - 1 if self.node_side == "left" else 0


@dataclass
class GraphSolution:
    edges: list
    d: float
    lam: float

    def edge(self, i):
        for e in self.edges:
            if e.edge == i:
                return e
        raise KeyError(i)

    def value_range(self):
        lo = min(float(e.u.min()) for e in self.edges)
        hi = max(float(e.u.max()) for e in self.edges)
        return lo, hi


def edge_grid(profile: EdgeProfile, subdivisions=8):
    """Solver grid nested in the profile levels, ascending in h.

    Magnitudes run 0, floor/split, ..., floor, then `subdivisions` uniform
    cells between consecutive tabulated levels; the sign follows the edge.
    """
    rows = profile.valid_rows()
    mags = np.abs(profile.h_grid[rows])
    sign = np.sign(profile.h_grid[rows][0])
    pieces = [np.linspace(0.0, mags[0], _NODE_CELL_SPLIT + 1)]
    for a, b in zip(mags[:-1], mags[1:]):
        pieces.append(np.linspace(a, b, subdivisions + 1)[1:])
    mags_all = np.concatenate(pieces)
    h = sign * mags_all
    return np.sort(h)


def _prepare_tables(profile: EdgeProfile, h):
    """Blended G rows, Lipschitz slopes, Godunov flags and minimizers per node."""
    n = len(h)
    nq = len(profile.q_grid)
    gblend = np.empty((n, nq))
    for j in range(n):
        lo, hi, w = profile.row_weights(h[j])
        gblend[j] = (1 - w) * profile.G[lo] + w * profile.G[hi]
    dq = np.diff(profile.q_grid)
    slopes = np.abs(np.diff(gblend, axis=1)) / dq[None, :]
    sig = np.maximum(slopes.max(axis=1), 1e-12)
    # Godunov needs actual convexity of the interpolated row; the certified
    # band |h| < gamma implies it, but any row whose table is midpoint-convex
    # qualifies (the upwind branches then cover every touching slope)
    scale = np.maximum(np.abs(gblend).max(axis=1), 1.0)
    curv_ok = np.all(gblend[:, :-2] + gblend[:, 2:] - 2 * gblend[:, 1:-1]
                     >= -1e-11 * scale[:, None], axis=1)
    use_god = (np.abs(h) < profile.gamma) | curv_ok
    qstar = np.empty(n)
    for j in range(n):
        row = gblend[j]
        best = row.min()
        ties = np.nonzero(row <= best + 1e-14)[0]
        k = ties[np.argmin(np.abs(profile.q_grid[ties]))]
        qstar[j] = profile.q_grid[k]
    return gblend, sig, use_god.astype(np.bool_), qstar


def edge_bound(profile: EdgeProfile, boundary_datum, lam):
    """C with |u| <= C: max(|Gbar(h,0)|/lambda over the table, |datum|)."""
    rows = profile.valid_rows()
    c0 = int(np.argmin(np.abs(profile.q_grid)))
    g0 = float(np.abs(profile.G[rows, c0]).max())
    return max(g0 / lam, abs(float(boundary_datum)))


def _solve_edge(profile, lam, node, boundary_datum, subdivisions=8,
                tol_factor=1e-10, max_cycles=200_000, scheme="auto"):
    """node is ('pin', d) or ('free', None)."""
    h = edge_grid(profile, subdivisions)
    gblend, sig, use_god, qstar = _prepare_tables(profile, h)
    if scheme == "lf":
        use_god = np.zeros_like(use_god)
    node_side = "left" if profile.h_grid[profile.valid_rows()][0] > 0 else "right"

    c_bound = edge_bound(profile, boundary_datum, lam)
    kind, value = node
    if kind == "pin":
        node_kind, node_val = kernels.END_PINNED, float(value)
    else:
        node_kind, node_val = kernels.END_DATUM, c_bound + 1.0

    if node_side == "left":
        ends = (node_kind, node_val, kernels.END_DATUM, float(boundary_datum))
    else:
        ends = (kernels.END_DATUM, float(boundary_datum), node_kind, node_val)

    u = np.full(len(h), c_bound)
    if kind == "pin":
        u[0 if node_side == "left" else -1] = float(value)
    resid = np.zeros_like(u)
    cycles = 0
    rinf = np.inf
    while cycles < max_cycles:
        for _ in range(32):
            kernels.edge_sweep_cycle(u, h, gblend, profile.q_grid, sig, qstar,
                                     use_god, lam, *ends)
            cycles += 1
            if cycles >= max_cycles:
                break
        rinf = kernels.edge_residual(u, h, gblend, profile.q_grid, sig, qstar,
                                     use_god, lam, *ends, resid)
        if rinf <= tol_factor * (1.0 + float(np.abs(u).max())):
            break
    else:
        raise NoConvergence(max_cycles, rinf)

    slopes = np.abs(np.diff(u)) / np.diff(h)
    if slopes.max() > profile.q_grid[-1] * (1 - 1e-9):
        raise ProfileGap(
            f"edge {profile.edge}: solution slope {slopes.max():.3g} exceeds the q table")

    nidx = 0 if node_side == "left" else len(h) - 1
    return EdgeSolution(edge=profile.edge, h=h, u=u, node_side=node_side,
                        node_value=float(u[nidx]), boundary_datum=float(boundary_datum),
                        residual_inf=float(rinf), cycles=cycles)


def solve_edge_dirichlet(profile, d, boundary_datum, lam, subdivisions=8,
                         scheme="auto", tol_factor=1e-10):
    """Edge solve with the node value pinned exactly; outer end keeps the
    viscosity min rule, so the datum may be lost where the PDE branch wins."""
    return _solve_edge(profile, lam, ("pin", d), boundary_datum,
                       subdivisions=subdivisions, scheme=scheme, tol_factor=tol_factor)


def solve_edge_free_node(profile, boundary_datum, lam, subdivisions=8,
                         scheme="auto", tol_factor=1e-10):
    """Edge solve with no datum at the node: the state-constraint closure
    returns the maximal subsolution's trace there."""
    return _solve_edge(profile, lam, ("free", None), boundary_datum,
                       subdivisions=subdivisions, scheme=scheme, tol_factor=tol_factor)


def _node_flux_residual(profile, sol, lam):
    """One-sided Godunov residual at the node: lambda*d + Gbar(0+, q_onesided),
    with left-going (resp. right-going) slopes discarded as in the free solve."""
    h = sol.h
    u = sol.u
    gblend, _sig, _god, qstar = _prepare_tables(profile, h)
    if sol.node_side == "left":
        q = (u[1] - u[0]) / (h[1] - h[0])
        q = min(q, qstar[0])
        row = gblend[0]
        d = u[0]
    else:
        q = (u[-1] - u[-2]) / (h[-1] - h[-2])
        q = max(q, qstar[-1])
        row = gblend[-1]
        d = u[-1]
    q = float(np.clip(q, profile.q_grid[0], profile.q_grid[-1]))
    return lam * d + float(np.interp(q, profile.q_grid, row))


def solve_graph_maximal(profiles, boundary_data, lam, subdivisions=8,
                        consistency_tol=None):
    """Free-node trace per edge, common value = min over edges, re-solve pinned.

    Raises Inconsistent when an edge cannot carry the common value: its pinned
    solve must attach the node value continuously (one-sided subsolution
    residual at the node within tolerance).
    """
    free = [solve_edge_free_node(p, boundary_data[p.edge], lam, subdivisions)
            for p in profiles]
    d_star = min(s.node_value for s in free)
    edges = [solve_edge_dirichlet(p, d_star, boundary_data[p.edge], lam, subdivisions)
             for p in profiles]
    if consistency_tol is None:
        c = max(edge_bound(p, boundary_data[p.edge], lam) for p in profiles)
        consistency_tol = 1e-6 * (1 + c) + lam * 1e-6
    for p, e in zip(profiles, edges):
        r = _node_flux_residual(p, e, lam)
        if r > consistency_tol:
            raise Inconsistent(
                f"edge {p.edge} cannot support node value {d_star:.6g} (residual {r:.3g})")
    return GraphSolution(edges=edges, d=float(d_star), lam=lam)


def oracle_node_scan(profiles, boundary_data, lam, d_grid=None, subdivisions=8,
                     feas_tol=None):
    """Independent maximality oracle: largest node value on the scan grid whose
    pinned solves pass the one-sided subsolution test at the node.

    Feasibility is monotone in d, so the descending scan is accelerated by
    bisection over the same grid; the returned value is verified feasible and
    its upper neighbor infeasible.
    """
    c = max(edge_bound(p, boundary_data[p.edge], lam) for p in profiles)
    c = max(c, 1e-3)
    if d_grid is None:
        step = 1e-3 * 2 * c
        d_grid = np.arange(-c, c + step, step)
    d_grid = np.sort(np.asarray(d_grid, dtype=np.float64))
    if feas_tol is None:
        step = float(np.diff(d_grid).max())
        feas_tol = max(0.5 * lam * step, 1e-8 * (1 + c))

    def feasible(d):
        for p in profiles:
            try:
                sol = solve_edge_dirichlet(p, d, boundary_data[p.edge], lam, subdivisions)
            except ProfileGap:
                # the pin tore a one-cell jump whose slope left the table:
                # exactly the infeasible signature
                return False
            if _node_flux_residual(p, sol, lam) > feas_tol:
                return False
        return True

    lo, hi = 0, len(d_grid) - 1
    if feasible(d_grid[hi]):
        return float(d_grid[hi])
    if not feasible(d_grid[lo]):
        raise NoFeasible(f"even d = {d_grid[lo]:.6g} fails the node test")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(d_grid[mid]):
            lo = mid
        else:
            hi = mid
    return float(d_grid[lo])


@dataclass
class GraphReport:
    node_consistent: bool = True
    bc_violations: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    modulus_violations: list = field(default_factory=list)
    bound_ok: bool = True
    dominated_by_reference: bool = False

    def passed(self):
        return (self.node_consistent and not self.bc_violations
                and not self.modulus_violations and self.bound_ok)

    def to_dict(self):
        return {
            "node_consistent": self.node_consistent,
            "bc_violations": self.bc_violations,
            "residuals": self.residuals,
            "modulus_violations": self.modulus_violations,
            "bound_ok": self.bound_ok,
            "dominated_by_reference": self.dominated_by_reference,
            "passed": self.passed(),
        }


def _lipschitz_envelope(profile, h, lam_c):
    """q-bar(h): largest tabulated |q| with Gbar(h, q) <= lam_c; the local
    Lipschitz bound for subsolutions bounded by C."""
    lo, hi, w = profile.row_weights(h)
    row = (1 - w) * profile.G[lo] + w * profile.G[hi]
    ok = np.nonzero(row <= lam_c)[0]
    if ok.size == 0:
        return 0.0
    return float(np.abs(profile.q_grid[ok]).max())


def verify_solution(gs: GraphSolution, profiles, lam, reference=None, tol=1e-8):
    """Residual, boundary-inequality, node, modulus and bound audits.

    With a reference solution the relational maximality check marks gs as
    dominated when it sits below the reference somewhere beyond tolerance.
    """
    rep = GraphReport()
    by_edge = {p.edge: p for p in profiles}
    scale = 1 + max(abs(v) for v in gs.value_range())

    for e in gs.edges:
        p = by_edge[e.edge]
        if abs(e.u[e.node_index()] - gs.d) > tol * scale:
            rep.node_consistent = False
        outer = e.u[e.outer_index()]
        if outer > e.boundary_datum + 1e-6 * scale:
            rep.bc_violations.append((e.edge, float(outer - e.boundary_datum)))
        rep.residuals[str(e.edge)] = e.residual_inf

        c_edge = edge_bound(p, e.boundary_datum, lam)
        if float(np.abs(e.u).max()) > c_edge + 1e-6 * scale:
            rep.bound_ok = False
        lam_c = lam * c_edge + 1e-9
        for j in range(len(e.h) - 1):
            hmid = 0.5 * (e.h[j] + e.h[j + 1])
            qbar = _lipschitz_envelope(p, hmid, lam_c)
            gap = abs(e.u[j + 1] - e.u[j])
            cap = (qbar + 1e-9) * (e.h[j + 1] - e.h[j]) + 1e-7 * scale
            if gap > cap:
                rep.modulus_violations.append((e.edge, int(j), float(gap - cap)))

    if reference is not None:
        dominated = False
        for e in gs.edges:
            ref = reference.edge(e.edge)
            if np.any(e.u < ref.interp(e.h) - tol * scale):
                dominated = True
        rep.dominated_by_reference = dominated
    return rep
