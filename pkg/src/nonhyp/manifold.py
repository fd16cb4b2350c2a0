"""Stable and unstable graphs through the fixed point, by exit-side bisection.

A point of the cone C^s(1, delta) either stays in it forever (it lies on the
stable set) or leaves through the upper or the lower diagonal, and it can never
come back.  Along a vertical arc the points that leave upward lie above the
stable set and the ones that leave downward lie below it, so bisection on the
exit side pins the crossing down.

Near the stable set orbits linger for a time that grows like 1/distance, so a
finite iteration budget leaves an undecided window around the crossing.  Both
edges of that window are located to ``tol`` and the graph value is its
midpoint; the window width is reported per sample as ``bracket_width``.

The unstable side runs the same code on the inverse map with the coordinates
swapped (mode 1 of the compiled kernels).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from math import sqrt

import numpy as np

from . import _kernels as K
from .cone import ConeCertificate
from .planar_map import MapSpec, partial_derivative
from .tensor import circle_min

DEFAULT_SAMPLES = 401
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 2000
ORBIT_TARGET = 1e-6
BUDGET_FACTOR = 10.0

STABLE, UNSTABLE = "stable", "unstable"
_MODE = {STABLE: 0, UNSTABLE: 1}


class Outcome(enum.IntEnum):
    EXIT_ABOVE = K.EXIT_ABOVE
    EXIT_BELOW = K.EXIT_BELOW
    UNDECIDED = K.UNDECIDED
    CONVERGED = K.CONVERGED
    FAILED = K.FAILED


@dataclass(frozen=True)
class ArcClassification:
    outcome: Outcome
    iterations_used: int


class BracketError(RuntimeError):
    """Both ends of a bisection bracket leave the cone on the same side."""


def _check_side(side: str) -> int:
    if side not in _MODE:
        raise ValueError(f"side must be 'stable' or 'unstable', got {side!r}")
    return _MODE[side]


def _classify_state(T, u, v, max_iter, conv_tol, mode) -> tuple[int, int]:
    """Budget max_iter, doubled once (resuming the same orbit) when undecided."""
    code, k, xu, xv = K.classify(T, u, v, 0, max_iter, conv_tol, mode)
    if code == K.UNDECIDED:
        code, k, _, _ = K.classify(T, xu, xv, k, 2 * max_iter, conv_tol, mode)
    return int(code), int(k)


def classify_point(
    s: MapSpec,
    cert: ConeCertificate,
    p,
    max_iter: int = DEFAULT_MAX_ITER,
    conv_tol: float = DEFAULT_TOL,
    side: str = STABLE,
) -> ArcClassification:
    """Which way the orbit of p leaves the cone, if it does within the budget.

    For ``side="unstable"`` the orbit is the backward one and the cone is
    C^u(1, delta); "above" then means leaving through x > |y|.
    """
    mode = _check_side(side)
    x, y = float(p[0]), float(p[1])
    u, v = (x, y) if mode == 0 else (y, x)
    slack = 1e-15 * cert.delta
    if not (abs(v) <= abs(u) + slack and abs(u) <= cert.delta + slack):
        raise ValueError(f"point {p} is outside the {side} cone of half-width {cert.delta}")
    if u == 0.0 and v == 0.0:
        return ArcClassification(Outcome.CONVERGED, 0)
    code, k = _classify_state(s.kernel_terms, u, v, max_iter, conv_tol, mode)
    return ArcClassification(Outcome(code), k)


@dataclass(frozen=True)
class ZoneBracket:
    """Result of one exit-side bisection on a scalar parameter."""

    value: float
    lower: float
    upper: float
    evaluations: int
    iterations: int
    converged: bool = False

    @property
    def width(self) -> float:
        return self.upper - self.lower


def zone_bisect(classify, lo: float, hi: float, tol: float, ratio: float = 0.5) -> ZoneBracket:
    """Bisect between an EXIT_BELOW end ``lo`` and an EXIT_ABOVE end ``hi``.

    ``classify(t)`` returns (code, iterations).  When a trial point is
    undecided, the lower edge of the undecided window is searched in [lo, t]
    and the upper edge in [t, hi]; the value is the window midpoint.
    ``ratio`` places the trial point at lo + ratio*(hi - lo).
    """
    evals, iters = 0, 0

    def run(t):
        nonlocal evals, iters
        code, k = classify(t)
        evals += 1
        iters = max(iters, k)
        return code

    if run(lo) != K.EXIT_BELOW or run(hi) != K.EXIT_ABOVE:
        raise BracketError(f"bracket [{lo}, {hi}] does not straddle the invariant set")
    mid = None
    while hi - lo > tol:
        t = lo + ratio * (hi - lo)
        if not lo < t < hi:
            break
        code = run(t)
        if code == K.EXIT_ABOVE:
            hi = t
        elif code == K.EXIT_BELOW:
            lo = t
        elif code == K.CONVERGED:
            return ZoneBracket(t, t, t, evals, iters, True)
        else:
            mid = t
            break
    if mid is None:
        return ZoneBracket(0.5 * (lo + hi), lo, hi, evals, iters)

    # undecided window: both edges, each kept sound at every step
    a, b = lo, mid
    while b - a > tol:
        t = a + ratio * (b - a)
        if not a < t < b:
            break
        code = run(t)
        if code == K.EXIT_ABOVE:
            raise BracketError("exit above below an undecided point")
        if code == K.EXIT_BELOW:
            a = t
        else:
            b = t
    lower = a
    a, b = mid, hi
    while b - a > tol:
        t = a + ratio * (b - a)
        if not a < t < b:
            break
        code = run(t)
        if code == K.EXIT_BELOW:
            raise BracketError("exit below above an undecided point")
        if code == K.EXIT_ABOVE:
            b = t
        else:
            a = t
    upper = b
    return ZoneBracket(0.5 * (lower + upper), lower, upper, evals, iters)


@dataclass(frozen=True)
class ManifoldGraph:
    """Sampled graph v = phi(u): u is x for the stable side and y for the unstable one."""

    side: str
    xs: np.ndarray
    phis: np.ndarray
    bisect_tol: float
    lipschitz_estimate: float
    iterations: np.ndarray = field(repr=False, default=None)
    bracket_width: np.ndarray = field(repr=False, default=None)
    max_iter: int = DEFAULT_MAX_ITER

    def __call__(self, u):
        return np.interp(u, self.xs, self.phis)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Plane coordinates (x, y) of the samples."""
        if self.side == STABLE:
            return self.xs, self.phis
        return self.phis, self.xs

    def to_csv(self, path) -> None:
        rows = np.column_stack([self.xs, self.phis, self.iterations, self.bracket_width])
        np.savetxt(
            path, rows, delimiter=",", header="x,phi,iterations,bracket_width",
            comments="", fmt=["%.17g", "%.17g", "%d", "%.17g"],
        )


def lipschitz_estimate(xs: np.ndarray, phis: np.ndarray) -> float:
    # for a piecewise-linear interpolant the largest pairwise slope is an adjacent one
    return float(np.max(np.abs(np.diff(phis) / np.diff(xs)))) if len(xs) > 1 else 0.0


def _graph(s, cert, side, n_samples, tol, max_iter, grid=None):
    mode = _check_side(side)
    T = s.kernel_terms
    us = np.linspace(-cert.delta, cert.delta, n_samples) if grid is None else np.asarray(grid, float)
    if np.any(np.diff(us) <= 0):
        raise ValueError("sample abscissae must be strictly increasing")
    phis = np.zeros_like(us)
    iters = np.zeros(us.shape, dtype=np.int64)
    widths = np.zeros_like(us)
    for i, u in enumerate(us):
        if u == 0.0:
            continue
        br = zone_bisect(
            lambda v: _classify_state(T, u, v, max_iter, tol, mode), -abs(u), abs(u), tol
        )
        phis[i], iters[i], widths[i] = br.value, br.iterations, br.width
    return ManifoldGraph(side, us, phis, tol, lipschitz_estimate(us, phis), iters, widths, max_iter)


def stable_graph(
    s: MapSpec,
    cert: ConeCertificate,
    n_samples: int = DEFAULT_SAMPLES,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    grid=None,
) -> ManifoldGraph:
    return _graph(s, cert, STABLE, n_samples, tol, max_iter, grid)


def unstable_graph(
    s: MapSpec,
    cert: ConeCertificate,
    n_samples: int = DEFAULT_SAMPLES,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    grid=None,
) -> ManifoldGraph:
    """Graph x = phi(y) of the unstable set, computed with the inverse map."""
    return _graph(s, cert, UNSTABLE, n_samples, tol, max_iter, grid)


# ---------------------------------------------------------------------------
# verification


def _swap_spec(s: MapSpec) -> MapSpec:
    from .cone import _swap

    return MapSpec(_swap(s.Q), _swap(s.P), tuple(_swap(t) for t in s.Y), tuple(_swap(t) for t in s.X))


def decay_rate(s: MapSpec, cert: ConeCertificate, side: str = STABLE, tol: float = 1e-9) -> float:
    """c > 0 such that 1/|u|^(2k) grows by at least 2k*c per step inside the cone.

    On the stable side |x| - |x'| = |P - X| with P(x, lam x) = x^(2k+1) P(1, lam),
    and P(1, lam) = (P_x + lam P_y)(1, lam) / (2k+1) is bounded below through
    the endpoint forms P_x +- P_y; the higher-order part costs at most
    sum|c| delta^(deg-2k-1).  The backward map on the unstable side loses the
    same amount measured at the image point, which costs the factor
    (1 + c delta^(2k))^(-2k).
    """
    mode = _check_side(side)
    lead, extra = (s.P, s.X) if mode == 0 else (s.Q, s.Y)
    d = lead.degree
    main = partial_derivative(lead, "x" if mode == 0 else "y")
    cross = partial_derivative(lead, "y" if mode == 0 else "x")
    low = min(
        circle_min(np.array(main.coeffs) + sg * np.array(cross.coeffs), tol)[0] for sg in (1.0, -1.0)
    )
    budget = sum(sum(abs(c) for c in t.coeffs) * cert.delta ** (t.degree - d) for t in extra)
    c = low / d - budget
    if not c > 0:
        raise ValueError("no positive decay rate on this cone")
    if mode == 1:
        c = c / (1.0 + c * cert.delta ** (d - 1)) ** (d - 1)
    return c


def _jacobian_bound(s: MapSpec, r: float) -> float:
    """Row-sum bound of DF - I on the ball |p| <= r, term by term."""
    E, C = s.kernel_terms
    rows = []
    for row in range(2, 6):
        deg = E[row].sum(axis=1)
        rows.append(float(np.sum(np.abs(C[row]) * r ** deg)))
    return max(rows[0] + rows[1], rows[2] + rows[3])


@dataclass
class GraphReport:
    side: str
    samples: int
    orbit_prefix: int
    prefix_ok: bool
    failed_samples: list
    tail_steps_bound: float
    convergence_budget: float
    cone_ok: bool
    lipschitz_estimate: float
    lipschitz_limit: float
    invariance_defect: float
    invariance_slack: float

    @property
    def orbits_ok(self) -> bool:
        return self.prefix_ok and self.tail_steps_bound <= self.convergence_budget

    @property
    def lipschitz_ok(self) -> bool:
        return self.lipschitz_estimate < self.lipschitz_limit

    @property
    def invariance_ok(self) -> bool:
        return self.invariance_slack >= 0

    @property
    def ok(self) -> bool:
        return self.orbits_ok and self.cone_ok and self.lipschitz_ok and self.invariance_ok


def verify_graph(
    s: MapSpec,
    g: ManifoldGraph,
    cert: ConeCertificate,
    target: float = ORBIT_TARGET,
    prefix: int | None = None,
) -> GraphReport:
    """Orbit behaviour, cone containment, Lipschitz bound and invariance of a graph.

    Orbits are simulated for ``prefix`` steps (default: the bisection budget)
    checking the cone and strict decrease of the contracting coordinate.  Past
    that, 1/|u|^(2k) grows by at least 2k*c per step inside the cone, which
    bounds the remaining steps to |p| < target; that bound must not exceed
    BUDGET_FACTOR / target^(2k).
    """
    mode = _check_side(g.side)
    T = s.kernel_terms
    n = 2 * g.max_iter if prefix is None else prefix
    deg = (s.P if mode == 0 else s.Q).degree
    p2 = deg - 1
    c = decay_rate(s, cert, g.side)
    # |v| <= |u| inside the cone, so |p| < target once |u| < target / sqrt(2)
    r = target / sqrt(2)
    failed = []
    tail = 0.0
    for i, (u, v) in enumerate(zip(g.xs, g.phis)):
        if u == 0.0 and v == 0.0:
            continue
        ok, done, xu, _ = K.orbit_in_cone(T, u, v, n, mode)
        if not ok:
            failed.append(i)
            continue
        if abs(xu) < r:
            continue
        tail = max(tail, (r ** -p2 - abs(xu) ** -p2) / (p2 * c))
    budget = BUDGET_FACTOR * r ** -p2

    cone_ok = bool(np.all(np.abs(g.phis) <= np.abs(g.xs)))
    limit = cert.alpha if mode == 0 else 1.0 / cert.beta

    # invariance: the image of each sample must sit on the interpolated graph,
    # up to the undecided windows and the interpolation error of Lipschitz graphs
    us, vs = g.xs, g.phis
    nu, nv, st = K.iterate_n(T, us.copy(), vs.copy(), np.ones(us.size, np.int64), mode, np.inf)
    defect = np.abs(nv - g(nu))
    j = np.clip(np.searchsorted(g.xs, nu), 1, g.xs.size - 1)
    near = np.minimum(np.abs(nu - g.xs[j - 1]), np.abs(g.xs[j] - nu))
    local = np.abs((g.phis[j] - g.phis[j - 1]) / (g.xs[j] - g.xs[j - 1]))
    window = g.bracket_width if g.bracket_width is not None else np.zeros_like(us)
    e = _jacobian_bound(s, sqrt(2) * cert.delta)
    allowed = (
        0.5 * (1 + e) * (1 + limit) * window
        + 0.5 * np.maximum(window[j - 1], window[j])
        + (limit + local) * near
        + 2 * g.bisect_tol
    )
    inside = st == 0
    slack = float(np.min((allowed - defect)[inside])) if inside.any() else -np.inf
    return GraphReport(
        g.side, int(g.xs.size), n, not failed, failed, tail, budget, cone_ok,
        g.lipschitz_estimate, limit, float(np.max(defect[inside])) if inside.any() else np.inf, slack,
    )


# ---------------------------------------------------------------------------
# uniqueness along general vertical arcs


def crossing_arcs(cert: ConeCertificate, n_arcs: int, seed: int = 0) -> np.ndarray:
    """Random alpha-vertical segments running from the lower to the upper diagonal.

    Rows (x0, y0, x1, y1) with |y0| = |x0| (y0 < 0 side) and |y1| = |x1|, all
    inside C^s(1, delta).
    """
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_arcs:
        xc = cert.delta * rng.uniform(0.02, 0.9) * rng.choice([-1.0, 1.0])
        yc = xc * rng.uniform(-0.9, 0.9)
        slope = rng.choice([-1.0, 1.0]) * cert.alpha / rng.uniform(0.05, 1.0)
        # intersections of y = yc + slope (x - xc) with y = -|x| and y = |x|
        sg = np.sign(xc)
        xl = (yc - slope * xc) / (-sg - slope)
        xu = (yc - slope * xc) / (sg - slope)
        if max(abs(xl), abs(xu)) > cert.delta or np.sign(xl) != sg or np.sign(xu) != sg:
            continue
        out.append((xl, -abs(xl), xu, abs(xu)))
    return np.array(out)


def arc_crossing(
    s: MapSpec,
    cert: ConeCertificate,
    arc,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    ratio: float = 0.5,
) -> tuple[np.ndarray, ZoneBracket]:
    """Point where a crossing arc meets the stable set; tol is in plane distance."""
    T = s.kernel_terms
    x0, y0, x1, y1 = map(float, arc)
    length = float(np.hypot(x1 - x0, y1 - y0))

    def cls(t):
        return _classify_state(T, x0 + t * (x1 - x0), y0 + t * (y1 - y0), max_iter, tol, 0)

    br = zone_bisect(cls, 0.0, 1.0, tol / length, ratio)
    t = br.value
    return np.array([x0 + t * (x1 - x0), y0 + t * (y1 - y0)]), br


def uniqueness_check(
    s: MapSpec,
    cert: ConeCertificate,
    n_arcs: int = 100,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
) -> np.ndarray:
    """Distances between two bisections per arc, one halving and one golden-section split."""
    arcs = crossing_arcs(cert, n_arcs, seed)
    gaps = np.empty(len(arcs))
    for i, arc in enumerate(arcs):
        p, _ = arc_crossing(s, cert, arc, tol, max_iter, 0.5)
        q, _ = arc_crossing(s, cert, arc, tol, max_iter, 0.381966011250105)
        gaps[i] = float(np.hypot(*(p - q)))
    return gaps
