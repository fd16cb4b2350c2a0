"""Foliation charts near the fixed point and the conjugacy to the product of factor maps.

Two transverse foliations cover a neighbourhood N of the origin.  Vertical
leaves are the images F^i(gamma1(VL, t)) of straight homotopies between a
vertical segment VL and its image F(VL); horizontal leaves are the preimages
F^-j(gamma2(HL, r)) of homotopies between a horizontal segment HL and
F^-1(HL).  Every point of N off the stable and unstable sets gets coordinates
(i, t, j, r), and F acts on them by (i, t, j, r) -> (i + 1, t, j - 1, r).

The product map F1 x F2 has straight leaves, so the point with given
coordinates in its chart has a closed form; the conjugacy H sends each point of
N to that point.  For the product side the homotopy parameter is matched
through the graph crossings (leaf t of F crosses the stable graph at abscissa
xi(t), and the product leaf t sits at x = xi(t)), which makes H the identity in
the first coordinate along the stable set and in the second along the
unstable set.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.spatial import cKDTree

from . import _kernels as K
from .cone import ConeCertificate
from .manifold import ManifoldGraph
from .planar_map import MapSpec, Point, inverse_deviation

HORIZONTAL, VERTICAL = "horizontal", "vertical"
MAP, PRODUCT = "map", "product"

DEFAULT_NMAX = 10_000_000
SNAP = 1e-12
MATCH_TOL = 1e-9
GRAPH_TOL = 1e-12
DEFAULT_BAND = 1e-3


class ChartError(RuntimeError):
    """The chart cannot be built (endpoints never reach the band, or matching fails)."""


class CoordinateError(ValueError):
    """Foliation coordinates are undefined: the point is outside N or too close to a graph."""


class VerticalityError(AssertionError):
    """A homotopy leaf is not transverse in the expected direction."""


# ---------------------------------------------------------------------------
# factor maps


@dataclass(frozen=True)
class FactorMap:
    """F1 (axis horizontal, along the stable graph) or F2 (axis vertical, along the unstable one)."""

    axis: str
    graph: ManifoldGraph = field(repr=False)
    spec: MapSpec = field(repr=False)
    delta: float
    direction: str = "forward"

    @property
    def _which(self) -> int:
        return 0 if self.axis == HORIZONTAL else 1

    def _check(self, u: np.ndarray) -> None:
        if np.any(np.abs(u) > self.delta * (1 + 1e-12)):
            raise ValueError(f"argument outside [-{self.delta:.6g}, {self.delta:.6g}]")

    def __call__(self, u):
        arr = np.atleast_1d(np.asarray(u, dtype=float))
        self._check(arr)
        out = K.factor_step(self.spec.kernel_terms, self.graph.xs, self.graph.phis, arr, self._which)
        return float(out[0]) if np.ndim(u) == 0 else out

    def iterate(self, u, n):
        """F1^n for n >= 0, or F2^-n for n >= 0 when the axis is vertical (the contracting directions)."""
        arr = np.atleast_1d(np.asarray(u, dtype=float))
        self._check(arr)
        ns = np.broadcast_to(np.asarray(n, dtype=np.int64), arr.shape).copy()
        if np.any(ns < 0):
            raise ValueError("iteration counts must be non-negative")
        out = K.factor_orbits(self.spec.kernel_terms, self.graph.xs, self.graph.phis, arr, ns, self._which)
        return float(out[0]) if np.ndim(u) == 0 else out

    def inverse(self, u):
        """Preimage under the map: F1^-1 by bisection, F2^-1 by fixed point."""
        if self.axis == VERTICAL:
            return self.iterate(u, 1)
        arr = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty_like(arr)
        for k, v in enumerate(arr):
            # F1 is increasing and F1(v) lies between 0 and v
            if v == 0:
                out[k] = 0.0
                continue
            lo, hi = (v, min(2 * v, self.delta)) if v > 0 else (max(2 * v, -self.delta), v)
            if (self(lo) - v) * (self(hi) - v) > 0:
                raise ValueError(f"preimage of {v:.6g} lies outside [-{self.delta:.6g}, {self.delta:.6g}]")
            out[k] = brentq(lambda w: self(w) - v, lo, hi, xtol=1e-16, rtol=1e-15)
        return float(out[0]) if np.ndim(u) == 0 else out


def induced_factor_maps(s: MapSpec, gs: ManifoldGraph, gu: ManifoldGraph) -> tuple[FactorMap, FactorMap]:
    """F1(x) = first coordinate of F(x, phi_s(x)) and F2(y) = second coordinate of F(phi_u(y), y)."""
    delta = float(min(gs.xs[-1], -gs.xs[0], gu.xs[-1], -gu.xs[0]))
    return (
        FactorMap(HORIZONTAL, gs, s, delta, "inward"),
        FactorMap(VERTICAL, gu, s, delta, "outward"),
    )


# ---------------------------------------------------------------------------
# homotopy leaves


@dataclass(frozen=True)
class HomotopyArc:
    kind: str
    t: float
    points: np.ndarray
    slopes: np.ndarray  # dy/dx along the arc

    @property
    def min_transversality(self) -> float:
        """min |dy/dx| for a vertical arc, min |dx/dy| for a horizontal one."""
        with np.errstate(divide="ignore"):
            m = np.abs(self.slopes) if self.kind == VERTICAL else 1 / np.abs(self.slopes)
        return float(np.min(m))


def _inverse_jacobian_deviation(s: MapSpec, x, y):
    """Entries of D(F^-1) - I at (x, y)."""
    dx, dy = inverse_deviation(s, x, y)
    e11, e12, e21, e22 = s.jacobian_deviation(x + dx, y + dy)
    a, b, c, d = 1 + e11, e12, e21, 1 + e22
    det = a * d - b * c
    return (d / det - 1, -b / det, -c / det, a / det - 1), (dx, dy)


def homotopy_arc(s: MapSpec, level: float, params, t: float, kind: str = VERTICAL) -> HomotopyArc:
    """The arc of gamma1 (vertical, segment x = level) or gamma2 (horizontal, y = level).

    gamma1((x0, y), t) = t F(x0, y) + (1 - t)(x0, y) for y in params;
    gamma2((x, y0), r) = r F^-1(x, y0) + (1 - r)(x, y0) for x in params.
    Raises VerticalityError if the arc is not transverse in the right direction.
    """
    if not 0 <= t <= 1:
        raise ValueError(f"homotopy parameter must lie in [0, 1], got {t}")
    u = np.asarray(params, dtype=float)
    c = np.full_like(u, level)
    with np.errstate(divide="ignore", invalid="ignore"):
        if kind == VERTICAL:
            fx, fy = s.deviation(c, u)
            _, e12, _, e22 = s.jacobian_deviation(c, u)
            pts = np.column_stack([c + t * fx, u + t * fy])
            slopes = (1 + t * e22) / (t * e12)
            bad = np.abs(slopes) <= 1
        elif kind == HORIZONTAL:
            (g11, _, g21, _), (dx, dy) = _inverse_jacobian_deviation(s, u, c)
            pts = np.column_stack([u + t * dx, c + t * dy])
            slopes = (t * g21) / (1 + t * g11)
            bad = np.abs(slopes) >= 1
        else:
            raise ValueError(f"kind must be {VERTICAL!r} or {HORIZONTAL!r}")
    arc = HomotopyArc(kind, float(t), pts, np.asarray(slopes))
    if np.any(bad):
        raise VerticalityError(
            f"{kind} homotopy arc at level {level:.6g}, t = {t}: transversality "
            f"{arc.min_transversality:.4g} <= 1; shrink the chart"
        )
    return arc


# ---------------------------------------------------------------------------
# charts


@dataclass(frozen=True)
class FoliationChart:
    """Fundamental segments VL (x = x0), its mirror (x = -x0), HL (y = y_u) and its mirror.

    ``vl`` and ``vl_bar`` are ordinate ranges, ``hl`` and ``hl_bar`` abscissa
    ranges.  N is bounded by these four segments and the orbit arcs joining
    p2 to q2, p2_bar to q1, p1 to q2_bar and p1_bar to q1_bar.
    """

    kind: str
    x0: float
    y_u: float
    m_hat: int
    vl: tuple[float, float]
    vl_bar: tuple[float, float]
    hl: tuple[float, float]
    hl_bar: tuple[float, float]
    endpoints: dict
    matching_residual: float
    spec: MapSpec = field(repr=False)
    gs: ManifoldGraph = field(repr=False)
    gu: ManifoldGraph = field(repr=False)
    factors: tuple | None = field(default=None, repr=False)

    @property
    def vl_ranges(self) -> np.ndarray:
        return np.array([*self.vl, *self.vl_bar])

    @property
    def hl_ranges(self) -> np.ndarray:
        return np.array([*self.hl, *self.hl_bar])

    def boundary(self, per_step: int = 8) -> list[np.ndarray]:
        """Polylines of the boundary of N: the four segments and the four orbit arcs."""
        e = self.endpoints
        lines = [
            np.array([e["p1"], e["p2"]]),
            np.array([e["p1_bar"], e["p2_bar"]]),
            np.array([e["q1"], e["q2"]]),
            np.array([e["q1_bar"], e["q2_bar"]]),
        ]
        ts = np.linspace(0, 1, per_step, endpoint=False)
        for name in ("p2", "p2_bar", "p1", "p1_bar"):
            pts = []
            for i in range(self.m_hat):
                pts.extend(self.leaf_points(name, i, ts))
            pts.append(e[{"p2": "q2", "p2_bar": "q1", "p1": "q2_bar", "p1_bar": "q1_bar"}[name]])
            lines.append(np.array(pts))
        return lines

    def leaf_points(self, endpoint: str, i: int, ts) -> list[tuple[float, float]]:
        x, y = self.endpoints[endpoint]
        if self.kind == MAP:
            return [K.leaf_point(self.spec.kernel_terms, x, y, t, i, np.inf) for t in ts]
        F1, F2 = self.factors
        out = []
        for t in ts:
            u = F1.iterate(x + t * (F1(x) - x), i)
            v = y + t * (F2(y) - y)
            for _ in range(i):
                v = F2(v)
            out.append((u, v))
        return out


def _orbit_y(T, x, y, m) -> float:
    ox, oy, st = K.iterate_n(T, np.array([x]), np.array([y]), np.array([m]), 0, 10.0)
    return float(oy[0])


def _orbit(T, x, y, m) -> Point:
    ox, oy, st = K.iterate_n(T, np.array([x]), np.array([y]), np.array([m]), 0, 10.0)
    return Point(float(ox[0]), float(oy[0]))


def build_chart(
    s: MapSpec,
    cert: ConeCertificate,
    gs: ManifoldGraph,
    gu: ManifoldGraph,
    start_fraction: float = 0.25,
    max_steps: int = 100_000,
) -> FoliationChart:
    """Chart of the map with VL at x0 = delta/2 and HL in the band delta/4 <= |y| <= delta/2.

    An upper endpoint started start_fraction * x0 above the stable graph is
    iterated until it reaches the band; the step count is m_hat and the height
    reached is y_u.  The other three endpoints are then placed by root solves
    so that F^m_hat sends them exactly to height +-y_u.
    """
    T = s.kernel_terms
    delta = cert.delta
    x0 = delta / 2
    x, y = x0, float(gs(x0)) + start_fraction * x0
    m = 0
    while abs(y) < delta / 4:
        if m >= max_steps:
            raise ChartError(f"upper endpoint did not reach |y| >= {delta / 4:.4g} in {max_steps} steps")
        dx, dy = s.deviation(x, y)
        x, y = x + dx, y + dy
        m += 1
    if abs(y) > delta / 2:
        raise ChartError(f"upper endpoint jumped over the band (|y| = {abs(y):.4g})")
    if m == 0:
        raise ChartError("start point already in the band; lower start_fraction")
    y_u = abs(y)

    def ordinate(xv: float, upper: bool) -> float:
        target = y_u if upper else -y_u
        on_graph = float(gs(xv))
        lo, hi = (on_graph, x0) if upper else (-x0, on_graph)
        g = lambda v: _orbit_y(T, xv, v, m) - target
        glo, ghi = g(lo), g(hi)
        if not (glo < 0 < ghi):
            raise ChartError(
                f"matching root not bracketed at x = {xv:.4g} ({'upper' if upper else 'lower'}): "
                f"residuals {glo:.3g}, {ghi:.3g}"
            )
        return brentq(g, lo, hi, xtol=1e-16, rtol=1e-15, maxiter=500)

    e = {
        "p2": Point(x0, ordinate(x0, True)),
        "p1": Point(x0, ordinate(x0, False)),
        "p2_bar": Point(-x0, ordinate(-x0, True)),
        "p1_bar": Point(-x0, ordinate(-x0, False)),
    }
    e["q2"] = _orbit(T, *e["p2"], m)
    e["q1"] = _orbit(T, *e["p2_bar"], m)
    e["q2_bar"] = _orbit(T, *e["p1"], m)
    e["q1_bar"] = _orbit(T, *e["p1_bar"], m)
    residual = max(
        abs(e["q2"].y - y_u), abs(e["q1"].y - y_u), abs(e["q2_bar"].y + y_u), abs(e["q1_bar"].y + y_u)
    )
    if not residual < MATCH_TOL:
        raise ChartError(f"endpoint matching residual {residual:.3g} >= {MATCH_TOL}")
    for a, b in (("q1", "q2"), ("q1_bar", "q2_bar")):
        if not e[a].x < float(gu(e[a].y)) < e[b].x:
            raise ChartError(f"horizontal segment {a}-{b} does not cross the unstable graph")
    return FoliationChart(
        MAP, x0, y_u, m,
        (e["p1"].y, e["p2"].y), (e["p1_bar"].y, e["p2_bar"].y),
        (e["q1"].x, e["q2"].x), (e["q1_bar"].x, e["q2_bar"].x),
        e, residual, s, gs, gu,
    )


def build_product_chart(chart: FoliationChart, F1: FactorMap, F2: FactorMap) -> FoliationChart:
    """The analogous chart of F1 x F2 with the same x0, y_u and m_hat."""
    x0, y_u, m = chart.x0, chart.y_u, chart.m_hat
    lo, hi = (float(v) for v in F2.iterate(np.array([-y_u, y_u]), m))
    left, right = (float(v) for v in F1.iterate(np.array([-x0, x0]), m))
    e = {
        "p1": Point(x0, lo), "p2": Point(x0, hi),
        "p1_bar": Point(-x0, lo), "p2_bar": Point(-x0, hi),
        "q1": Point(left, y_u), "q2": Point(right, y_u),
        "q1_bar": Point(left, -y_u), "q2_bar": Point(right, -y_u),
    }
    back = [F2(v) for v in (lo, hi)]
    for _ in range(m - 1):
        back = [F2(v) for v in back]
    residual = max(abs(back[0] + y_u), abs(back[1] - y_u))
    return FoliationChart(
        PRODUCT, x0, y_u, m, (lo, hi), (lo, hi), (left, right), (left, right),
        e, residual, chart.spec, chart.gs, chart.gu, (F1, F2),
    )


# ---------------------------------------------------------------------------
# coordinates


@dataclass(frozen=True)
class FoliationCoord:
    """Leaf indices and homotopy parameters; s and a are the anchors on VL and HL."""

    i: int
    t: float
    j: int
    r: float
    side_v: int
    side_h: int
    s: float = float("nan")
    a: float = float("nan")

    def step(self) -> "FoliationCoord":
        """Coordinates of F(p): one more vertical iterate, one fewer horizontal."""
        return FoliationCoord(self.i + 1, self.t, self.j - 1, self.r, self.side_v, self.side_h, self.s, self.a)


_STATUS = {K.OUTSIDE: "outside N", K.LINGERING: "too close to an invariant graph", K.FAILED: "inverse failed"}


def vertical_coordinate(chart: FoliationChart, p, nmax: int = DEFAULT_NMAX):
    """(side, i, t, s) of the vertical leaf through p."""
    st, side, i, t, s = K.vertical_coord(chart.spec.kernel_terms, chart.x0, *chart.vl_ranges, p[0], p[1], nmax)
    if st != 0:
        raise CoordinateError(f"vertical coordinate of {tuple(p)}: {_STATUS.get(st, st)}")
    if t >= 1 - SNAP:
        i, t = i + 1, 0.0
    return int(side), int(i), float(t) + 0.0, float(s)


def horizontal_coordinate(chart: FoliationChart, p, nmax: int = DEFAULT_NMAX):
    """(side, j, r, a) of the horizontal leaf through p."""
    st, side, j, r, a = K.horizontal_coord(
        chart.spec.kernel_terms, chart.y_u, *chart.hl_ranges, p[0], p[1], nmax, True
    )
    if st != 0:
        raise CoordinateError(f"horizontal coordinate of {tuple(p)}: {_STATUS.get(st, st)}")
    if r >= 1 - SNAP:
        j, r = j + 1, 0.0
    return int(side), int(j), float(r) + 0.0, float(a)


def foliation_coords(chart: FoliationChart, s: MapSpec, p, nmax: int = DEFAULT_NMAX, check: bool = False) -> FoliationCoord:
    """(i, t, j, r) of p in the chart of the map.

    Raises CoordinateError outside N or when an orbit lingers beyond nmax steps
    next to the stable or unstable set.  With check, the point rebuilt from the
    coordinates must reproduce p within 1e-8.
    """
    if chart.kind != MAP:
        raise ValueError("coordinates are computed in the chart of the map")
    if s is not chart.spec and s.kernel_terms[1].tobytes() != chart.spec.kernel_terms[1].tobytes():
        raise ValueError("chart was built for a different map")
    sv, i, t, sa = vertical_coordinate(chart, p, nmax)
    sh, j, r, a = horizontal_coordinate(chart, p, nmax)
    c = FoliationCoord(i, t, j, r, sv, sh, sa, a)
    if check:
        q = chart_point(chart, c)
        err = max(abs(q.x - p[0]), abs(q.y - p[1]))
        if not err <= 1e-8:
            raise CoordinateError(f"reconstruction of {tuple(p)} off by {err:.3g}")
    return c


def chart_point(chart: FoliationChart, c: FoliationCoord) -> Point:
    """The intersection of the vertical leaf (i, t) with the horizontal leaf (j, r)."""
    if chart.kind == MAP:
        x, y = K.reconstruct(
            chart.spec.kernel_terms, chart.x0, chart.vl_ranges, chart.y_u, chart.hl_ranges,
            c.side_v, c.i, c.t, c.side_h, c.j, c.r,
        )
        return Point(float(x), float(y))
    F1, F2 = chart.factors
    xv, yh = c.side_v * chart.x0, c.side_h * chart.y_u
    xi = xv + c.t * (F1(xv) - xv)
    eta = yh + c.r * (F2.iterate(yh, 1) - yh)
    return Point(F1.iterate(xi, c.i), F2.iterate(eta, c.j))


def _crossing_x(chart: FoliationChart, side_v: int, t: float) -> float:
    lo, hi = chart.vl if side_v > 0 else chart.vl_bar
    return float(K.graph_crossing(chart.spec.kernel_terms, 0, side_v * chart.x0, lo, hi, t, chart.gs.xs, chart.gs.phis))


def _crossing_y(chart: FoliationChart, side_h: int, r: float) -> float:
    lo, hi = chart.hl if side_h > 0 else chart.hl_bar
    return float(K.graph_crossing(chart.spec.kernel_terms, 1, side_h * chart.y_u, lo, hi, r, chart.gu.xs, chart.gu.phis))


def conjugacy_H(chart: FoliationChart, chart_p: FoliationChart, p, nmax: int = DEFAULT_NMAX) -> Point:
    """Image of p under the conjugacy from the map to the chart_p dynamics.

    With chart_p the chart itself this rebuilds p from its coordinates.  With
    a product chart the result is (F1^i(xi), F2^-j(eta)), where xi and eta are
    the graph crossings of the fundamental leaves through p.
    """
    x, y = float(p[0]), float(p[1])
    if x == 0.0 and y == 0.0:
        return Point(0.0, 0.0)
    on_stable = abs(y - float(chart.gs(x))) <= GRAPH_TOL
    on_unstable = abs(x - float(chart.gu(y))) <= GRAPH_TOL
    if chart_p.kind == MAP:
        if on_stable or on_unstable:
            raise CoordinateError("coordinates degenerate on the invariant graphs")
        return chart_point(chart_p, foliation_coords(chart, chart.spec, p, nmax))
    F1, F2 = chart_p.factors
    hx = hy = 0.0
    if not on_unstable:
        side_v, i, t, _ = vertical_coordinate(chart, p, nmax)
        hx = F1.iterate(_crossing_x(chart, side_v, t), i)
    if not on_stable:
        side_h, j, r, _ = horizontal_coordinate(chart, p, nmax)
        hy = F2.iterate(_crossing_y(chart, side_h, r), j)
    return Point(hx, hy)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass(frozen=True)
class LeafReport:
    min_vertical: float
    min_horizontal: float
    samples: int

    @property
    def ok(self) -> bool:
        return self.min_vertical > 1 and self.min_horizontal > 1


def verify_leaves(chart: FoliationChart, n_t: int = 11, n_param: int = 41, max_steps: int = 5000) -> LeafReport:
    """Transversality of the leaves: tangents of gamma1 followed forward, of gamma2 backward.

    Each tangent is carried along the orbit of its base point while that
    point stays in the box |x| <= x0, |y| <= y_u, which contains N.
    """
    if chart.kind != MAP:
        raise ValueError("leaf checks apply to the chart of the map")
    s, T = chart.spec, chart.spec.kernel_terms
    ts = np.linspace(0, 1, n_t, endpoint=False)
    vmin = hmin = np.inf
    for side, (lo, hi) in ((1, chart.vl), (-1, chart.vl_bar)):
        xv = side * chart.x0
        ys = np.linspace(lo, hi, n_param)
        arcs = [homotopy_arc(s, xv, ys, t, VERTICAL) for t in ts]
        _, e12, _, e22 = s.jacobian_deviation(np.full_like(ys, xv), ys)
        for t, arc in zip(ts, arcs):
            for (x, y), a, b in zip(arc.points, e12, e22):
                vmin = min(vmin, K.tangent_ratio(T, x, y, t * a, 1 + t * b, max_steps, 0, chart.x0, chart.y_u))
    for side, (lo, hi) in ((1, chart.hl), (-1, chart.hl_bar)):
        yh = side * chart.y_u
        xs = np.linspace(lo, hi, n_param)
        (g11, _, g21, _), _ = _inverse_jacobian_deviation(s, xs, np.full_like(xs, yh))
        for t in ts:
            arc = homotopy_arc(s, yh, xs, t, HORIZONTAL)
            for (x, y), a, c in zip(arc.points, g11, g21):
                hmin = min(hmin, K.tangent_ratio(T, x, y, 1 + t * a, t * c, max_steps, 1, chart.x0, chart.y_u))
    return LeafReport(float(vmin), float(hmin), 4 * n_t * n_param)


@dataclass(frozen=True)
class ConjugacyGrid:
    """Grid run of H: rows (x, y, Hx, Hy, defect) for grid points of N off the bands."""

    rows: np.ndarray
    n_grid: int
    n_outside: int
    n_band: int
    self_conjugacy: bool
    runtime: float = 0.0

    @property
    def max_defect(self) -> float:
        d = self.rows[:, 4]
        d = d[np.isfinite(d)]
        return float(d.max()) if d.size else float("nan")

    @property
    def defect_points(self) -> int:
        return int(np.isfinite(self.rows[:, 4]).sum())

    @property
    def identity_error(self) -> float:
        if not len(self.rows):
            return float("nan")
        return float(np.max(np.abs(self.rows[:, 2:4] - self.rows[:, 0:2])))

    @property
    def min_separation(self) -> float:
        """Smallest distance between two images; positive means injective on the grid."""
        if len(self.rows) < 2:
            return float("inf")
        dist, _ = cKDTree(self.rows[:, 2:4]).query(self.rows[:, 2:4], k=2)
        return float(dist[:, 1].min())

    @property
    def injective(self) -> bool:
        return self.min_separation > 0

    def to_csv(self, path) -> None:
        np.savetxt(path, self.rows, delimiter=",", header="x,y,Hx,Hy,defect", comments="", fmt="%.17g")


def _target_map(chart_p: FoliationChart):
    if chart_p.kind == MAP:
        T = chart_p.spec.kernel_terms
        return lambda q: tuple(
            float(v[0]) for v in K.iterate_n(T, np.array([q[0]]), np.array([q[1]]), np.array([1]), 0, 10.0)[:2]
        )
    F1, F2 = chart_p.factors
    return lambda q: (F1(q[0]), F2(q[1]))


def conjugacy_grid(
    chart: FoliationChart,
    chart_p: FoliationChart,
    n: int = 50,
    band: float = DEFAULT_BAND,
    nmax: int = DEFAULT_NMAX,
) -> ConjugacyGrid:
    """H and the defect |H(F(p)) - F'(H(p))| on an n x n grid of the box around N.

    Grid points closer than ``band`` to either invariant graph are skipped, as
    are the ones outside N.  The defect is left NaN when F(p) is outside N.
    """
    t0 = time.perf_counter()
    s = chart.spec
    xs = np.linspace(-chart.x0, chart.x0, n)
    ys = np.linspace(-chart.y_u, chart.y_u, n)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    gx, gy = gx.ravel(), gy.ravel()
    near = (np.abs(gy - chart.gs(gx)) < band) | (np.abs(gx - chart.gu(gy)) < band)
    target = _target_map(chart_p)
    rows = []
    outside = 0
    for x, y in zip(gx[~near], gy[~near]):
        try:
            h = conjugacy_H(chart, chart_p, (x, y), nmax)
        except CoordinateError:
            outside += 1
            continue
        fx, fy = s.deviation(x, y)
        try:
            hf = conjugacy_H(chart, chart_p, (x + fx, y + fy), nmax)
            th = target(h)
            defect = float(np.hypot(hf[0] - th[0], hf[1] - th[1]))
        except CoordinateError:
            defect = float("nan")
        rows.append((x, y, h.x, h.y, defect))
    rows = np.array(rows, dtype=float).reshape(-1, 5)
    return ConjugacyGrid(
        rows, n * n, outside, int(near.sum()), chart_p.kind == MAP, time.perf_counter() - t0
    )
