"""Compiled numerical kernels (numba).

Everything here is deterministic: fixed iteration orders, no fastmath, no
threading.  Polynomial Hamiltonians enter as flat monomial term arrays so a
single compiled tracer serves every spec.

Status codes returned by the tracer: 0 ok, 1 no Poincare return within the
time cap, 2 |DH| fell below the safety floor.
"""

import numpy as np
from numba import njit

TRACE_OK = 0
TRACE_NO_RETURN = 1
TRACE_CRITICAL = 2

# G family codes shared with the solvers.
G_EIKONAL = 0
G_GAMES = 1
G_CONSTANT = 2


@njit(cache=True, inline="always")
def _poly(ti, tj, tc, x, y):
    out = 0.0
    for k in range(ti.shape[0]):
        term = tc[k]
        for _ in range(ti[k]):
            term *= x
        for _ in range(tj[k]):
            term *= y
        out += term
    return out


@njit(cache=True, inline="always")
def _fields(hi, hj, hc, gxi, gxj, gxc, gyi, gyj, gyc, x, y):
    """H, Hx, Hy at a point."""
    return (_poly(hi, hj, hc, x, y),
            _poly(gxi, gxj, gxc, x, y),
            _poly(gyi, gyj, gyc, x, y))


@njit(cache=True, inline="always")
def _project(hi, hj, hc, gxi, gxj, gxc, gyi, gyj, gyc, x, y, level):
    """Two Newton steps back onto {H = level} along DH."""
    for _ in range(2):
        h, gx, gy = _fields(hi, hj, hc, gxi, gxj, gxc, gyi, gyj, gyc, x, y)
        gg = gx * gx + gy * gy
        if gg == 0.0:
            return x, y
        corr = (h - level) / gg
        x -= corr * gx
        y -= corr * gy
    return x, y


# Dormand-Prince 5(4) tableau.
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656, 0.0],
])
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640,
                   -92097 / 339200, 187 / 2100, 1 / 40])


@njit(cache=True, inline="always")
def _drift(gxi, gxj, gxc, gyi, gyj, gyc, x, y):
    # b = (H_y, -H_x)
    return (_poly(gyi, gyj, gyc, x, y), -_poly(gxi, gxj, gxc, x, y))


@njit(cache=True)
def _dp45_step(gxi, gxj, gxc, gyi, gyj, gyc, x, y, dt, a, b5, b4):
    """One Dormand-Prince step; returns (x5, y5, err_norm)."""
    kx = np.empty(7)
    ky = np.empty(7)
    kx[0], ky[0] = _drift(gxi, gxj, gxc, gyi, gyj, gyc, x, y)
    for s in range(1, 6):
        xs = x
        ys = y
        for m in range(s):
            xs += dt * a[s, m] * kx[m]
            ys += dt * a[s, m] * ky[m]
        kx[s], ky[s] = _drift(gxi, gxj, gxc, gyi, gyj, gyc, xs, ys)
    x5 = x
    y5 = y
    for m in range(6):
        x5 += dt * b5[m] * kx[m]
        y5 += dt * b5[m] * ky[m]
    kx[6], ky[6] = _drift(gxi, gxj, gxc, gyi, gyj, gyc, x5, y5)
    x4 = x
    y4 = y
    for m in range(7):
        x4 += dt * b4[m] * kx[m]
        y4 += dt * b4[m] * ky[m]
    ex = x5 - x4
    ey = y5 - y4
    return x5, y5, np.sqrt(ex * ex + ey * ey)


@njit(cache=True)
def trace_period(hi, hj, hc, gxi, gxj, gxc, gyi, gyj, gyc,
                 x0, y0, level, rtol, dh_floor, t_max):
    """Adaptive trace of the Hamiltonian flow until first Poincare return.

    The section is the hyperplane through (x0, y0) with normal b(x0)/|b(x0)|;
    a return is a negative-to-positive crossing with the point closer to the
    start than half the orbit diameter seen so far.  Each accepted step is
    projected back onto the level set along DH (the projection is normal to
    the motion, so it does not disturb the phase).

    Returns (status, period, diameter, min |DH| along the orbit).
    """
    a = _DP_A
    b5 = _DP_B5
    b4 = _DP_B4

    bx0, by0 = _drift(gxi, gxj, gxc, gyi, gyj, gyc, x0, y0)
    speed0 = np.sqrt(bx0 * bx0 + by0 * by0)
    if speed0 < dh_floor:
        return TRACE_CRITICAL, 0.0, 0.0, speed0
    nx = bx0 / speed0
    ny = by0 / speed0

    t = 0.0
    x = x0
    y = y0
    s_prev = 0.0
    diam = 0.0
    min_dh = speed0
    dt = 1e-3 / speed0
    atol = rtol

    while t < t_max:
        # cap the arc per step at a fraction of the orbit diameter so the
        # section neighborhood cannot be skipped over
        bx, by = _drift(gxi, gxj, gxc, gyi, gyj, gyc, x, y)
        speed = np.sqrt(bx * bx + by * by)
        if speed < dh_floor:
            return TRACE_CRITICAL, t, diam, speed
        if speed < min_dh:
            min_dh = speed
        cap = 0.15 * (diam + 1e-3) / speed
        if dt > cap:
            dt = cap

        xn, yn, err = _dp45_step(gxi, gxj, gxc, gyi, gyj, gyc, x, y, dt, a, b5, b4)
        scale = atol + rtol * np.sqrt(x * x + y * y)
        if err > scale and dt > 1e-14:
            dt *= max(0.2, 0.9 * (scale / err) ** 0.2)
            continue

        xn, yn = _project(hi, hj, hc, gxi, gxj, gxc, gyi, gyj, gyc, xn, yn, level)
        t_new = t + dt
        s_new = (xn - x0) * nx + (yn - y0) * ny
        dist = np.sqrt((xn - x0) ** 2 + (yn - y0) ** 2)
        if dist > diam:
            diam = dist

        if s_prev < 0.0 and s_new >= 0.0 and dist <= 0.5 * diam:
            # bisect the crossing time within [t, t+dt] by re-stepping from (x,y)
            lo = 0.0
            hihi = dt
            for _ in range(80):
                mid = 0.5 * (lo + hihi)
                xm, ym, _e = _dp45_step(gxi, gxj, gxc, gyi, gyj, gyc, x, y, mid, a, b5, b4)
                xm, ym = _project(hi, hj, hc, gxi, gxj, gxc, gyi, gyj, gyc, xm, ym, level)
                sm = (xm - x0) * nx + (ym - y0) * ny
                if sm < 0.0:
                    lo = mid
                else:
                    hihi = mid
                if hihi - lo < 1e-13 * max(1.0, t):
                    break
            return TRACE_OK, t + 0.5 * (lo + hihi), diam, min_dh

        x = xn
        y = yn
        t = t_new
        s_prev = s_new
        if err > 0.0:
            dt = dt * min(5.0, 0.9 * (scale / err) ** 0.2)

    return TRACE_NO_RETURN, t, diam, min_dh


@njit(cache=True)
def resample_orbit(hi, hj, hc, gxi, gxj, gxc, gyi, gyj, gyc,
                   x0, y0, level, period, xs, ys, raw_drift):
    """Fixed-step RK4 refill of the orbit at uniform times j*period/M.

    xs, ys have length M+1; the last sample closes the loop numerically.
    raw_drift (length 1) receives the max |H - level| seen before projection.
    """
    m = xs.shape[0] - 1
    dt = period / m
    x = x0
    y = y0
    xs[0] = x
    ys[0] = y
    raw = 0.0
    for k in range(1, m + 1):
        k1x, k1y = _drift(gxi, gxj, gxc, gyi, gyj, gyc, x, y)
        k2x, k2y = _drift(gxi, gxj, gxc, gyi, gyj, gyc, x + 0.5 * dt * k1x, y + 0.5 * dt * k1y)
        k3x, k3y = _drift(gxi, gxj, gxc, gyi, gyj, gyc, x + 0.5 * dt * k2x, y + 0.5 * dt * k2y)
        k4x, k4y = _drift(gxi, gxj, gxc, gyi, gyj, gyc, x + dt * k3x, y + dt * k3y)
        x += dt * (k1x + 2 * k2x + 2 * k3x + k4x) / 6.0
        y += dt * (k1y + 2 * k2y + 2 * k3y + k4y) / 6.0
        h = _poly(hi, hj, hc, x, y)
        if abs(h - level) > raw:
            raw = abs(h - level)
        x, y = _project(hi, hj, hc, gxi, gxj, gxc, gyi, gyj, gyc, x, y, level)
        xs[k] = x
        ys[k] = y
    raw_drift[0] = raw


@njit(cache=True)
def rollout_field(gxi, gxj, gxc, gyi, gyj, gyc,
                  x0, y0, inv_eps, nu_coef, dt, n_steps, pts):
    """RK4 rollout of dX/dt = inv_eps*b(X) + nu_coef*DH(X)/|DH(X)|.

    Fills pts (n_steps+1, 2); returns the number of valid points (early stop
    when |DH| underflows).
    """
    x = x0
    y = y0
    pts[0, 0] = x
    pts[0, 1] = y
    for k in range(1, n_steps + 1):
        ok = True
        kx = np.empty(4)
        ky = np.empty(4)
        cx = x
        cy = y
        for s in range(4):
            bx, by = _drift(gxi, gxj, gxc, gyi, gyj, gyc, cx, cy)
            gx = -by
            gy = bx
            gn = np.sqrt(gx * gx + gy * gy)
            if gn < 1e-13:
                ok = False
                break
            vx = inv_eps * bx + nu_coef * gx / gn
            vy = inv_eps * by + nu_coef * gy / gn
            kx[s] = vx
            ky[s] = vy
            if s == 0:
                cx = x + 0.5 * dt * vx
                cy = y + 0.5 * dt * vy
            elif s == 1:
                cx = x + 0.5 * dt * vx
                cy = y + 0.5 * dt * vy
            elif s == 2:
                cx = x + dt * vx
                cy = y + dt * vy
        if not ok:
            return k
        x += dt * (kx[0] + 2 * kx[1] + 2 * kx[2] + kx[3]) / 6.0
        y += dt * (ky[0] + 2 * ky[1] + 2 * ky[2] + ky[3]) / 6.0
        pts[k, 0] = x
        pts[k, 1] = y
    return n_steps + 1


# ---------------------------------------------------------------------------
# 2D masked-grid solver kernels
# ---------------------------------------------------------------------------

CLS_OUTSIDE = 0
CLS_INTERIOR = 1
CLS_BOUNDARY = 2


@njit(cache=True, inline="always")
def _g_eval(gkind, gtheta, gconst, b1v, b2v, fv, p1, p2):
    if gkind == G_EIKONAL:
        return np.sqrt(p1 * p1 + p2 * p2)
    elif gkind == G_GAMES:
        return gtheta * np.sqrt(p1 * p1 + p2 * p2) - abs(p1 * b1v + p2 * b2v) - fv
    return gconst


@njit(cache=True, inline="always")
def _node_update(u, cls, i, j, inv_hx, inv_hy, lam, inv_eps,
                 b1v, b2v, fv, sxv, syv, gkind, gtheta, gconst):
    """(S, c): scheme residual and damping weight at node (i, j).

    Missing neighbors (outside nodes, array rim) contribute a zero slope.
    Copying the present side would be more accurate but breaks the sup-norm
    contraction (the update stops being nondecreasing in the present
    neighbor), which admits spurious fixed points on the boundary ring; the
    zero-slope closure keeps every node update monotone and leaves constants
    exact, at the price of a first-order bias confined to the ring, where the
    viscosity min rule governs the value anyway.
    """
    ny, nx = u.shape
    uc = u[i, j]

    has_w = j > 0 and cls[i, j - 1] != CLS_OUTSIDE
    has_e = j < nx - 1 and cls[i, j + 1] != CLS_OUTSIDE
    has_s = i > 0 and cls[i - 1, j] != CLS_OUTSIDE
    has_n = i < ny - 1 and cls[i + 1, j] != CLS_OUTSIDE

    p1m = (uc - u[i, j - 1]) * inv_hx if has_w else 0.0
    p1p = (u[i, j + 1] - uc) * inv_hx if has_e else 0.0
    p2m = (uc - u[i - 1, j]) * inv_hy if has_s else 0.0
    p2p = (u[i + 1, j] - uc) * inv_hy if has_n else 0.0

    pb1 = 0.5 * (p1m + p1p)
    pb2 = 0.5 * (p2m + p2p)
    val = -inv_eps * (b1v * pb1 + b2v * pb2)
    val += _g_eval(gkind, gtheta, gconst, b1v, b2v, fv, pb1, pb2)
    val -= 0.5 * sxv * (p1p - p1m) + 0.5 * syv * (p2p - p2m)
    s = lam * uc + val
    c = lam + sxv * inv_hx + syv * inv_hy
    return s, c


@njit(cache=True)
def sweep2d_cycle(u, cls, gval, b1, b2, farr, sx, sy,
                  lam, inv_eps, inv_hx, inv_hy, gkind, gtheta, gconst):
    """One Gauss-Seidel cycle: 4 alternating sweep orderings, in place.

    Returns the max absolute node change over the cycle.
    """
    ny, nx = u.shape
    max_change = 0.0
    for order in range(4):
        if order == 0:
            i0, i1, istep = 0, ny, 1
            j0, j1, jstep = 0, nx, 1
        elif order == 1:
            i0, i1, istep = 0, ny, 1
            j0, j1, jstep = nx - 1, -1, -1
        elif order == 2:
            i0, i1, istep = ny - 1, -1, -1
            j0, j1, jstep = nx - 1, -1, -1
        else:
            i0, i1, istep = ny - 1, -1, -1
            j0, j1, jstep = 0, nx, 1
        for i in range(i0, i1, istep):
            for j in range(j0, j1, jstep):
                c_ij = cls[i, j]
                if c_ij == CLS_OUTSIDE:
                    continue
                s, c = _node_update(u, cls, i, j, inv_hx, inv_hy, lam, inv_eps,
                                    b1[i, j], b2[i, j], farr[i, j],
                                    sx[i, j], sy[i, j], gkind, gtheta, gconst)
                unew = u[i, j] - s / c
                if c_ij == CLS_BOUNDARY and gval[i, j] < unew:
                    unew = gval[i, j]
                change = abs(unew - u[i, j])
                if change > max_change:
                    max_change = change
                u[i, j] = unew
    return max_change


@njit(cache=True)
def residual2d(u, cls, gval, b1, b2, farr, sx, sy,
               lam, inv_eps, inv_hx, inv_hy, gkind, gtheta, gconst, out):
    """Scheme residual without updating; boundary rows report the min-rule gap."""
    ny, nx = u.shape
    rmax = 0.0
    for i in range(ny):
        for j in range(nx):
            c_ij = cls[i, j]
            if c_ij == CLS_OUTSIDE:
                out[i, j] = 0.0
                continue
            s, c = _node_update(u, cls, i, j, inv_hx, inv_hy, lam, inv_eps,
                                b1[i, j], b2[i, j], farr[i, j],
                                sx[i, j], sy[i, j], gkind, gtheta, gconst)
            if c_ij == CLS_BOUNDARY:
                unew = u[i, j] - s / c
                if gval[i, j] < unew:
                    unew = gval[i, j]
                r = c * (u[i, j] - unew)
            else:
                r = s
            out[i, j] = r
            if abs(r) > rmax:
                rmax = abs(r)
    return rmax


# ---------------------------------------------------------------------------
# 1D edge solver kernels
# ---------------------------------------------------------------------------

END_PINNED = 0
END_DATUM = 1


@njit(cache=True, inline="always")
def _interp_q(grow, qgrid, q):
    """Piecewise-linear interpolation of a tabulated q |-> G row.

    Constant extrapolation beyond the table; callers detect out-of-range
    slopes on the final iterate.
    """
    nq = qgrid.shape[0]
    if q <= qgrid[0]:
        return grow[0]
    if q >= qgrid[nq - 1]:
        return grow[nq - 1]
    lo = 0
    hi = nq - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if qgrid[mid] <= q:
            lo = mid
        else:
            hi = mid
    w = (q - qgrid[lo]) / (qgrid[lo + 1] - qgrid[lo])
    return grow[lo] * (1.0 - w) + grow[lo + 1] * w


@njit(cache=True, inline="always")
def _interp_q_slope(grow, qgrid, q):
    """Slope of the piecewise-linear row at q (0 beyond the table)."""
    nq = qgrid.shape[0]
    if q <= qgrid[0] or q >= qgrid[nq - 1]:
        return 0.0
    lo = 0
    hi = nq - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if qgrid[mid] <= q:
            lo = mid
        else:
            hi = mid
    return (grow[lo + 1] - grow[lo]) / (qgrid[lo + 1] - qgrid[lo])


@njit(cache=True, inline="always")
def _edge_flux(gblend_j, qgrid, use_god, qstar, sig, qm, qp):
    """Numerical flux at one node: Godunov on rows certified convex, local
    Lax-Friedrichs otherwise."""
    if use_god:
        a = qm if qm > qstar else qstar
        bq = qp if qp < qstar else qstar
        fa = _interp_q(gblend_j, qgrid, a)
        fb = _interp_q(gblend_j, qgrid, bq)
        return fa if fa > fb else fb
    fmid = _interp_q(gblend_j, qgrid, 0.5 * (qm + qp))
    return fmid - 0.5 * sig * (qp - qm)


@njit(cache=True, inline="always")
def _edge_scheme_value(u_c, j, n, u_left, u_right, hgrid, gblend, qgrid, sig,
                       qstar, use_god, lam, left_kind, right_kind):
    """S(u_c): scheme operator at node j with candidate value u_c.

    Strictly increasing in u_c (lambda term plus one-sided monotone flux
    branches), so the nodal equation S = 0 has a unique root.
    """
    if j == 0:
        dp = hgrid[1] - hgrid[0]
        qp = (u_right - u_c) / dp
        if use_god[0]:
            qq = qp if qp < qstar[0] else qstar[0]
            fhat = _interp_q(gblend[0], qgrid, qq)
        else:
            fhat = _interp_q(gblend[0], qgrid, 0.5 * qp) - 0.5 * sig[0] * qp
        return lam * u_c + fhat
    if j == n - 1:
        dm = hgrid[n - 1] - hgrid[n - 2]
        qm = (u_c - u_left) / dm
        if use_god[n - 1]:
            qq = qm if qm > qstar[n - 1] else qstar[n - 1]
            fhat = _interp_q(gblend[n - 1], qgrid, qq)
        else:
            fhat = _interp_q(gblend[n - 1], qgrid, 0.5 * qm) + 0.5 * sig[n - 1] * qm
        return lam * u_c + fhat
    dm = hgrid[j] - hgrid[j - 1]
    dp = hgrid[j + 1] - hgrid[j]
    qm = (u_c - u_left) / dm
    qp = (u_right - u_c) / dp
    return lam * u_c + _edge_flux(gblend[j], qgrid, use_god[j], qstar[j], sig[j], qm, qp)


@njit(cache=True, inline="always")
def _edge_local_solve(u0, j, n, u_left, u_right, hgrid, gblend, qgrid, sig,
                      qstar, use_god, lam, left_kind, right_kind):
    """Exact nodal relaxation: root of S(u) = 0 by bracketing + bisection."""
    s0 = _edge_scheme_value(u0, j, n, u_left, u_right, hgrid, gblend, qgrid,
                            sig, qstar, use_god, lam, left_kind, right_kind)
    if s0 == 0.0:
        return u0
    step = 0.5 * (1.0 + abs(u0))
    if s0 > 0.0:
        hi = u0
        lo = u0 - step
        for _ in range(80):
            if _edge_scheme_value(lo, j, n, u_left, u_right, hgrid, gblend, qgrid,
                                  sig, qstar, use_god, lam, left_kind, right_kind) <= 0.0:
                break
            step *= 2.0
            lo -= step
    else:
        lo = u0
        hi = u0 + step
        for _ in range(80):
            if _edge_scheme_value(hi, j, n, u_left, u_right, hgrid, gblend, qgrid,
                                  sig, qstar, use_god, lam, left_kind, right_kind) >= 0.0:
                break
            step *= 2.0
            hi += step
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        sm = _edge_scheme_value(mid, j, n, u_left, u_right, hgrid, gblend, qgrid,
                                sig, qstar, use_god, lam, left_kind, right_kind)
        if sm > 0.0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * (1.0 + abs(mid)):
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def edge_sweep_cycle(u, hgrid, gblend, qgrid, sig, qstar, use_god,
                     lam, left_kind, left_val, right_kind, right_val):
    """One forward+backward fast-sweeping pass: each visited node takes the
    exact root of its own scheme equation (min rule applied at datum ends)."""
    n = u.shape[0]
    max_change = 0.0
    for direction in range(2):
        if direction == 0:
            j0, j1, jstep = 0, n, 1
        else:
            j0, j1, jstep = n - 1, -1, -1
        for j in range(j0, j1, jstep):
            if j == 0 and left_kind == END_PINNED:
                continue
            if j == n - 1 and right_kind == END_PINNED:
                continue
            u_left = u[j - 1] if j > 0 else 0.0
            u_right = u[j + 1] if j < n - 1 else 0.0
            unew = _edge_local_solve(u[j], j, n, u_left, u_right, hgrid, gblend,
                                     qgrid, sig, qstar, use_god, lam,
                                     left_kind, right_kind)
            if j == 0 and left_val < unew:
                unew = left_val
            if j == n - 1 and right_val < unew:
                unew = right_val
            change = abs(unew - u[j])
            if change > max_change:
                max_change = change
            u[j] = unew
    return max_change


@njit(cache=True)
def edge_residual(u, hgrid, gblend, qgrid, sig, qstar, use_god,
                  lam, left_kind, left_val, right_kind, right_val, out):
    n = u.shape[0]
    rmax = 0.0
    for j in range(n):
        if j == 0 and left_kind == END_PINNED:
            out[0] = 0.0
            continue
        if j == n - 1 and right_kind == END_PINNED:
            out[n - 1] = 0.0
            continue
        if j == 0 or j == n - 1:
            # distance to the nodal min-rule fixed point, in equation units
            u_left = u[j - 1] if j > 0 else 0.0
            u_right = u[j + 1] if j < n - 1 else 0.0
            unew = _edge_local_solve(u[j], j, n, u_left, u_right, hgrid, gblend,
                                     qgrid, sig, qstar, use_god, lam,
                                     left_kind, right_kind)
            val = left_val if j == 0 else right_val
            if val < unew:
                unew = val
            d = hgrid[1] - hgrid[0] if j == 0 else hgrid[n - 1] - hgrid[n - 2]
            r = (lam + sig[j] / d) * (u[j] - unew)
        else:
            dm = hgrid[j] - hgrid[j - 1]
            dp = hgrid[j + 1] - hgrid[j]
            qm = (u[j] - u[j - 1]) / dm
            qp = (u[j + 1] - u[j]) / dp
            r = lam * u[j] + _edge_flux(gblend[j], qgrid, use_god[j], qstar[j],
                                        sig[j], qm, qp)
        out[j] = r
        if abs(r) > rmax:
            rmax = abs(r)
    return rmax
