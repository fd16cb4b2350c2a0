"""Compiled inner loops for long orbit computations.

Every kernel takes the term table ``(E, C)`` from ``MapSpec.kernel_terms``:
``E`` (6, n, 2) holds integer exponents and ``C`` (6, n) coefficients.  Rows are
F - id (two rows) and DF - I (four rows).

``mode`` selects the dynamics: 0 iterates F, 1 iterates the swapped inverse
(u, v) -> swap(F^-1(swap(u, v))), which turns the unstable side into a copy of
the stable side.
"""
import numpy as np
from numba import njit

EXIT_ABOVE = 1
EXIT_BELOW = -1
UNDECIDED = 0
CONVERGED = 2
ESCAPED = 3
FAILED = 4

_EPS = 2.220446049250313e-16


@njit(cache=True, inline="always")
def _powers(x, out):
    out[0] = 1.0
    for i in range(1, out.shape[0]):
        out[i] = out[i - 1] * x


@njit(cache=True, inline="always")
def _poly(T, row, xp, yp):
    E, C = T
    s = 0.0
    for k in range(C.shape[1]):
        s += C[row, k] * xp[E[row, k, 0]] * yp[E[row, k, 1]]
    return s


@njit(cache=True, inline="always")
def deviation(T, x, y, xp, yp):
    _powers(x, xp)
    _powers(y, yp)
    return _poly(T, 0, xp, yp), _poly(T, 1, xp, yp)


@njit(cache=True, inline="always")
def jacobian_deviation(T, x, y, xp, yp):
    _powers(x, xp)
    _powers(y, yp)
    return _poly(T, 2, xp, yp), _poly(T, 3, xp, yp), _poly(T, 4, xp, yp), _poly(T, 5, xp, yp)


@njit(cache=True, inline="always")
def inverse_deviation(T, qx, qy, xp, yp):
    """d with F(q + d) = q, resolved to the rounding level of q + d; returns (dx, dy, ok)."""
    # near the origin plain fixed-point iteration d <- -(F - id)(q + d)
    # contracts by about |DF - I| and is cheapest
    dx, dy = 0.0, 0.0
    for _ in range(6):
        fx, fy = deviation(T, qx + dx, qy + dy, xp, yp)
        ndx, ndy = -fx, -fy
        size = abs(ndx - dx) + abs(ndy - dy)
        dx, dy = ndx, ndy
        if size <= 0.25 * _EPS * (abs(qx + dx) + abs(qy + dy)):
            return dx, dy, True
    # otherwise a chord iteration with the Jacobian frozen at q
    e11, e12, e21, e22 = jacobian_deviation(T, qx, qy, xp, yp)
    a, b, c, d = 1.0 + e11, e12, e21, 1.0 + e22
    det = a * d - b * c
    last = np.inf
    for _ in range(100):
        fx, fy = deviation(T, qx + dx, qy + dy, xp, yp)
        gx, gy = dx + fx, dy + fy
        sx = (d * gx - b * gy) / det
        sy = (a * gy - c * gx) / det
        size = abs(sx) + abs(sy)
        # stop once the correction is at rounding level or stops shrinking
        if size >= last:
            return dx, dy, True
        dx -= sx
        dy -= sy
        if size <= 0.25 * _EPS * (abs(qx + dx) + abs(qy + dy)):
            return dx, dy, True
        if not (abs(dx) + abs(dy) < 1e300):
            return dx, dy, False
        last = size
    return dx, dy, False


@njit(cache=True, inline="always")
def step(T, x, y, mode, xp, yp):
    if mode == 0:
        dx, dy = deviation(T, x, y, xp, yp)
        return x + dx, y + dy, True
    # swapped inverse: the state (x, y) means the point (y, x)
    dx, dy, ok = inverse_deviation(T, y, x, xp, yp)
    return x + dy, y + dx, ok


@njit(cache=True)
def _degree(T):
    return T[0].max() + 1


@njit(cache=True)
def classify(T, x, y, k0, nmax, conv_tol, mode):
    """Iterate from state (x, y) at step k0 until exit, convergence or step nmax.

    Returns (code, steps, x, y).  Exit means leaving the cone |y| <= |x|.
    """
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    tol2 = conv_tol * conv_tol
    k = k0
    while k < nmax:
        x, y, ok = step(T, x, y, mode, xp, yp)
        k += 1
        if not ok:
            return FAILED, k, x, y
        if abs(y) > abs(x):
            return (EXIT_ABOVE if y > 0 else EXIT_BELOW), k, x, y
        if x * x + y * y < tol2:
            return CONVERGED, k, x, y
    return UNDECIDED, k, x, y


@njit(cache=True)
def iterate_n(T, xs, ys, ns, mode, escape):
    """Apply the mode's map ns[i] times to each point; stop early past |p| > escape.

    Returns (x, y, status) with status 0 ok, ESCAPED or FAILED.
    """
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    ox = xs.copy()
    oy = ys.copy()
    st = np.zeros(xs.shape[0], np.int64)
    for i in range(xs.shape[0]):
        x, y = xs[i], ys[i]
        for _ in range(ns[i]):
            x, y, ok = step(T, x, y, mode, xp, yp)
            if not ok:
                st[i] = FAILED
                break
            if abs(x) + abs(y) > escape:
                st[i] = ESCAPED
                break
        ox[i] = x
        oy[i] = y
    return ox, oy, st


@njit(cache=True)
def iterate_until(T, xs, ys, sign, thresh, mode, nmax, escape):
    """Iterate each point until sign * x >= thresh (x is the first state coordinate).

    Returns (x, y, count, status); status 0 ok, UNDECIDED if nmax was hit,
    ESCAPED or FAILED.
    """
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    n = xs.shape[0]
    ox = xs.copy()
    oy = ys.copy()
    cnt = np.zeros(n, np.int64)
    st = np.zeros(n, np.int64)
    for i in range(n):
        x, y = xs[i], ys[i]
        k = 0
        while sign * x < thresh:
            if k >= nmax:
                st[i] = UNDECIDED
                break
            x, y, ok = step(T, x, y, mode, xp, yp)
            k += 1
            if not ok:
                st[i] = FAILED
                break
            if abs(x) + abs(y) > escape:
                st[i] = ESCAPED
                break
        ox[i] = x
        oy[i] = y
        cnt[i] = k
    return ox, oy, cnt, st


@njit(cache=True)
def orbit_in_cone(T, x, y, n, mode):
    """Follow n steps checking the cone |y| <= |x| and strict decrease of |x|.

    Returns (ok, steps_done, x, y).
    """
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    for k in range(n):
        nx, ny, ok = step(T, x, y, mode, xp, yp)
        if not ok or abs(ny) > abs(nx) or not abs(nx) < abs(x):
            return False, k, x, y
        x, y = nx, ny
    return True, n, x, y


@njit(cache=True)
def factor_orbits(T, grid, phis, starts, ns, which):
    """Iterate a one-dimensional factor map ns[i] times.

    which == 0: u -> u + (f - x)(u, phi(u)), the map along the stable graph.
    which == 1: inverse of v -> v + (g - y)(phi(v), v) along the unstable graph.
    ``phi`` is the piecewise-linear interpolant of (grid, phis).
    """
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    out = starts.copy()
    for i in range(starts.shape[0]):
        u = starts[i]
        for _ in range(ns[i]):
            if which == 0:
                fx, fy = deviation(T, u, np.interp(u, grid, phis), xp, yp)
                u = u + fx
            else:
                # fixed point w = u - dev_g(phi(w), w); the map is a tiny perturbation of id
                w = u
                for _it in range(200):
                    fx, fy = deviation(T, np.interp(w, grid, phis), w, xp, yp)
                    nw = u - fy
                    if nw == w:
                        break
                    w = nw
                u = w
        out[i] = u
    return out


@njit(cache=True)
def factor_step(T, grid, phis, us, which):
    """One forward step of a factor map (which: 0 stable-side F1, 1 unstable-side F2)."""
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    out = us.copy()
    for i in range(us.shape[0]):
        u = us[i]
        if which == 0:
            fx, fy = deviation(T, u, np.interp(u, grid, phis), xp, yp)
            out[i] = u + fx
        else:
            fx, fy = deviation(T, np.interp(u, grid, phis), u, xp, yp)
            out[i] = u + fy
    return out


# ---------------------------------------------------------------------------
# foliation charts
#
# A chart is described by its vertical fundamental segments at x = +-x0 (with
# ordinate ranges) and horizontal ones at y = +-yu (with abscissa ranges).
# Vertical leaves are F^i(gamma1(VL, t)), gamma1(p, t) = p + t (F(p) - p);
# horizontal ones F^-j(gamma2(HL, r)), gamma2(q, r) = q + r (F^-1(q) - q).

OUTSIDE = 5
LINGERING = 6  # orbit stayed in the chart for the whole step budget


@njit(cache=True)
def _vertical_residual(T, xv, s, zx, zy, xp, yp):
    fx, fy = deviation(T, xv, s, xp, yp)
    t = (zx - xv) / fx
    return s + t * fy - zy, t


@njit(cache=True)
def _horizontal_residual(T, yh, a, zx, zy, xp, yp):
    dx, dy, ok = inverse_deviation(T, a, yh, xp, yp)
    r = (zy - yh) / dy
    return a + r * dx - zx, r


@njit(cache=True)
def _solve_increasing(T, kind, c, lo, hi, zx, zy, xp, yp, strict):
    """Bisection on a residual increasing in the leaf parameter.

    kind 0: vertical (c = xv), kind 1: horizontal (c = yh).  Returns
    (ok, parameter, homotopy value).  When not strict, an unbracketed root is
    clamped to the nearer end instead of failing.
    """
    if kind == 0:
        rlo, plo = _vertical_residual(T, c, lo, zx, zy, xp, yp)
        rhi, phi = _vertical_residual(T, c, hi, zx, zy, xp, yp)
    else:
        rlo, plo = _horizontal_residual(T, c, lo, zx, zy, xp, yp)
        rhi, phi = _horizontal_residual(T, c, hi, zx, zy, xp, yp)
    if rlo > 0:
        return (not strict), lo, plo
    if rhi < 0:
        return (not strict), hi, phi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if kind == 0:
            rm, pm = _vertical_residual(T, c, mid, zx, zy, xp, yp)
        else:
            rm, pm = _horizontal_residual(T, c, mid, zx, zy, xp, yp)
        if rm > 0:
            hi = mid
        elif rm < 0:
            lo = mid
        else:
            return True, mid, pm
    mid = 0.5 * (lo + hi)
    if kind == 0:
        rm, pm = _vertical_residual(T, c, mid, zx, zy, xp, yp)
    else:
        rm, pm = _horizontal_residual(T, c, mid, zx, zy, xp, yp)
    return True, mid, pm


@njit(cache=True)
def vertical_coord(T, x0, lo_p, hi_p, lo_m, hi_m, px, py, nmax):
    """(status, side, i, t, s): p = F^i(gamma1((side*x0, s), t)), t in [0, 1).

    The side is the fundamental segment the backward orbit crosses first.
    """
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    if abs(px) > x0:
        return OUTSIDE, 0, 0, np.nan, np.nan
    zx, zy = px, py
    i = 0
    while True:
        dx, dy, ok = inverse_deviation(T, zx, zy, xp, yp)
        if not ok:
            return FAILED, 0, i, np.nan, np.nan
        wx, wy = zx + dx, zy + dy
        if abs(wx) > x0:
            break
        zx, zy = wx, wy
        i += 1
        if i >= nmax:
            return LINGERING, 0, i, np.nan, np.nan
    side = 1 if wx > 0 else -1
    xv = side * x0
    lo, hi = (lo_p, hi_p) if side > 0 else (lo_m, hi_m)
    ok, s, t = _solve_increasing(T, 0, xv, lo, hi, zx, zy, xp, yp, True)
    if not ok or not t < 1.0 or t < -1e-9:
        return OUTSIDE, side, i, t, s
    return 0, side, i, max(t, 0.0), s


@njit(cache=True)
def horizontal_coord(T, yu, lo_p, hi_p, lo_m, hi_m, px, py, nmax, strict):
    """(status, side, j, r, a): F^j(p) = gamma2((a, side*yu), r), r in [0, 1)."""
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    if abs(py) > yu:
        return OUTSIDE, (1 if py > 0 else -1), 0, np.nan, np.nan
    zx, zy = px, py
    j = 0
    while True:
        fx, fy = deviation(T, zx, zy, xp, yp)
        wx, wy = zx + fx, zy + fy
        if abs(wy) > yu:
            break
        zx, zy = wx, wy
        j += 1
        if j >= nmax:
            return LINGERING, 0, j, np.nan, np.nan
    side = 1 if wy > 0 else -1
    yh = side * yu
    lo, hi = (lo_p, hi_p) if side > 0 else (lo_m, hi_m)
    ok, a, r = _solve_increasing(T, 1, yh, lo, hi, zx, zy, xp, yp, strict)
    if not ok or not r < 1.0 or r < -1e-9:
        return OUTSIDE, side, j, r, a
    return 0, side, j, max(r, 0.0), a


@njit(cache=True)
def leaf_point(T, xv, s, t, i, ybound):
    """F^i(gamma1((xv, s), t)), stopping early once |y| exceeds ybound."""
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    fx, fy = deviation(T, xv, s, xp, yp)
    x, y = xv + t * fx, s + t * fy
    for _ in range(i):
        if abs(y) > ybound:
            break
        fx, fy = deviation(T, x, y, xp, yp)
        x, y = x + fx, y + fy
    return x, y


@njit(cache=True)
def _above(T, yu, hl, x, y, side, j, r):
    """Is (x, y) above the horizontal leaf (side, j, r)?  hl = (lo+, hi+, lo-, hi-)."""
    if y > yu:
        return True
    if y < -yu:
        return False
    # an orbit still inside after j + 2 steps is closer to W^s than the target leaf
    st, sw, jw, rw, _ = horizontal_coord(T, yu, hl[0], hl[1], hl[2], hl[3], x, y, j + 2, False)
    if st == LINGERING:
        return side < 0
    if sw != side:
        return sw > side
    # upper side: moving up lowers j + r; lower side: moving up raises it
    if jw != j:
        return (jw < j) if side > 0 else (jw > j)
    return (rw < r) if side > 0 else (rw > r)


@njit(cache=True)
def reconstruct(T, x0, vl, yu, hl, side_v, i, t, side_h, j, r):
    """Intersection of the vertical leaf (side_v, i, t) with the horizontal leaf (side_h, j, r).

    vl = (lo+, hi+, lo-, hi-) ordinate ranges of the vertical segments.
    """
    xv = side_v * x0
    lo, hi = (vl[0], vl[1]) if side_v > 0 else (vl[2], vl[3])
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        x, y = leaf_point(T, xv, mid, t, i, yu)
        if _above(T, yu, hl, x, y, side_h, j, r):
            hi = mid
        else:
            lo = mid
    return leaf_point(T, xv, 0.5 * (lo + hi), t, i, np.inf)


@njit(cache=True)
def tangent_ratio(T, x, y, vx, vy, n, inverse, bx, by):
    """Follow a tangent vector for up to n steps while the base point stays in |x| <= bx, |y| <= by.

    Returns the min of |vy|/|vx| (forward) or |vx|/|vy| (inverse) seen on the way.
    """
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    best = np.inf
    for k in range(n + 1):
        if abs(x) > bx or abs(y) > by:
            break
        num, den = (abs(vy), abs(vx)) if inverse == 0 else (abs(vx), abs(vy))
        ratio = num / den if den > 0 else np.inf
        if ratio < best:
            best = ratio
        if k == n:
            break
        if inverse == 0:
            e11, e12, e21, e22 = jacobian_deviation(T, x, y, xp, yp)
            vx, vy = vx + e11 * vx + e12 * vy, vy + e21 * vx + e22 * vy
            fx, fy = deviation(T, x, y, xp, yp)
            x, y = x + fx, y + fy
        else:
            dx, dy, ok = inverse_deviation(T, x, y, xp, yp)
            x, y = x + dx, y + dy
            e11, e12, e21, e22 = jacobian_deviation(T, x, y, xp, yp)
            a, b, c, dd = 1.0 + e11, e12, e21, 1.0 + e22
            det = a * dd - b * c
            vx, vy = (dd * vx - b * vy) / det, (a * vy - c * vx) / det
    return best


@njit(cache=True)
def graph_crossing(T, kind, c, lo, hi, t, grid, phis):
    """Where the homotopy leaf with parameter t crosses an interpolated graph.

    kind 0: vertical leaf gamma1((c, s), t), graph y = phi(x); returns x.
    kind 1: horizontal leaf gamma2((a, c), t), graph x = phi(y); returns y.
    """
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    u, w = 0.0, 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if kind == 0:
            fx, fy = deviation(T, c, mid, xp, yp)
            u, w = c + t * fx, mid + t * fy
            res = w - np.interp(u, grid, phis)
        else:
            dx, dy, ok = inverse_deviation(T, mid, c, xp, yp)
            w, u = mid + t * dx, c + t * dy
            res = w - np.interp(u, grid, phis)
        if res > 0:
            hi = mid
        elif res < 0:
            lo = mid
        else:
            break
        if not lo < 0.5 * (lo + hi) < hi:
            break
    return u


# ---------------------------------------------------------------------------
# shadowing search


@njit(cache=True)
def shadow_errors(T, qx, qy, px, py):
    """max_k |F^k(q) - p_k|_inf for each candidate q; diverging orbits score +inf."""
    d = _degree(T)
    xp = np.empty(d + 1)
    yp = np.empty(d + 1)
    out = np.empty(qx.shape[0])
    for i in range(qx.shape[0]):
        x, y = qx[i], qy[i]
        worst = max(abs(x - px[0]), abs(y - py[0]))
        for k in range(1, px.shape[0]):
            fx, fy = deviation(T, x, y, xp, yp)
            x, y = x + fx, y + fy
            e = max(abs(x - px[k]), abs(y - py[k]))
            if not e < np.inf:
                worst = np.inf
                break
            if e > worst:
                worst = e
        out[i] = worst
    return out
