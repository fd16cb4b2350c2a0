"""Cone parameters around the fixed point and sampled checks of the cone conditions.

Notation: C^s(1, d) = {|y| <= |x| <= d} and C^u(1, d) = {|x| <= |y| <= d}.  These
reach out to |p| = sqrt(2) d, so the certificate's ``delta`` is the ball radius
on which the derivative bounds hold divided by sqrt(2).

All margins are computed from F - id and DF - I directly, so that quantities
of size |p|^3 are not lost against quantities of size |p| or 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, sqrt
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq
from scipy.stats import qmc

from .planar_map import MapSpec, TensorSet, check_hypotheses, derive_tensors, inverse_deviation
from .tensor import HomogeneousPolynomial, circle_max, linear_combine, partial_derivative, symmetrize, z_min

PUNCTURE = 1e-12
DELTA_SAFETY = 0.98
ALPHA_CAP = 16.0


class HypothesisFailure(RuntimeError):
    def __init__(self, failing: list[str]):
        super().__init__("tensor(s) not positive definite: " + ", ".join(failing))
        self.failing = failing


@dataclass(frozen=True)
class ConeCertificate:
    alpha: float
    beta: float
    delta: float
    eps_dom: float
    tau0: float
    kappa: float
    sample_resolution: dict = field(default_factory=dict)
    margins: dict = field(default_factory=dict)
    radii: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.alpha > 1:
            raise ValueError(f"alpha must exceed 1, got {self.alpha}")
        if not 0 < self.beta < 1:
            raise ValueError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if abs(self.tau0 - (1 - self.eps_dom / 2)) > 1e-15:
            raise ValueError("tau0 must equal 1 - eps_dom/2")
        if not 1 < self.kappa < 1 / self.tau0:
            raise ValueError(f"kappa {self.kappa} outside (1, 1/tau0)")

    @property
    def sound(self) -> bool:
        return bool(self.margins) and all(v > 0 for v in self.margins.values())

    def with_margins(self, margins: dict, resolution: dict) -> "ConeCertificate":
        return ConeCertificate(
            self.alpha, self.beta, self.delta, self.eps_dom, self.tau0, self.kappa,
            {**self.sample_resolution, **resolution}, {**self.margins, **margins}, self.radii,
        )


def _pd(form: HomogeneousPolynomial, tol: float) -> bool:
    return z_min(symmetrize(form), tol).is_pd


def _slope_sup(main: HomogeneousPolynomial, cross: HomogeneousPolynomial, tol: float) -> float:
    """sup{a >= 1 : main +- a*cross both PD}, capped at ALPHA_CAP."""
    ok = lambda a: _pd(linear_combine(1.0, main, a, cross), tol) and _pd(
        linear_combine(1.0, main, -a, cross), tol
    )
    if not ok(1.0):
        raise ValueError("endpoint forms are not positive definite")
    lo, hi = 1.0, 2.0
    while ok(hi):
        lo, hi = hi, 2 * hi
        if hi > ALPHA_CAP:
            return ALPHA_CAP
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _forms(ts: TensorSet):
    Px = ts.A.polynomial()
    Py = linear_combine(0.5, ts.C.polynomial(), -0.5, ts.D.polynomial())
    Qy = ts.B.polynomial()
    Qx = linear_combine(0.5, ts.E.polynomial(), -0.5, ts.H.polynomial())
    return Px, Py, Qx, Qy


def find_alpha(ts: TensorSet, tol: float = 1e-9) -> float:
    """Midpoint of (1, a_max) where a_max bounds the slopes keeping dP/dx +- a dP/dy PD.

    The Q-side forms a dQ/dy +- dQ/dx are PD for every a >= 1 once dQ/dy +- dQ/dx
    are, so only the P-side limits a.
    """
    Px, Py, Qx, Qy = _forms(ts)
    a_max = _slope_sup(Px, Py, tol)
    alpha = 0.5 * (1 + a_max)
    for sgn in (1, -1):
        if not (_pd(linear_combine(1.0, Px, sgn * alpha, Py), tol)
                and _pd(linear_combine(alpha, Qy, sgn, Qx), tol)):
            raise ValueError("no admissible alpha > 1")
    return alpha


def find_beta(ts: TensorSet, tol: float = 1e-9) -> float:
    """Slope of the inverse-side stable cone: 1/a' with P and Q roles exchanged."""
    Px, Py, Qx, Qy = _forms(ts)
    a_max = _slope_sup(Qy, Qx, tol)
    return 1.0 / (0.5 * (1 + a_max))


def _budget(terms, wx: float, wy: float):
    """Coefficients b, exponents e with |wx*dX/dx| + |wy*dX/dy| <= sum b r^e on |p| <= r."""
    b, e = [], []
    for i, j, c in terms:
        w = abs(c) * (wx * i + wy * j)
        if w > 0:
            b.append(w)
            e.append(i + j - 1)
    return np.array(b), np.array(e)


def _radius_lower(m: float, deg: int, b: np.ndarray, e: np.ndarray) -> float:
    """sup{r : m r^deg > sum b r^e}; the X/Y exponents exceed deg."""
    if m <= 0:
        return 0.0
    if b.size == 0:
        return np.inf
    h = lambda r: m - np.sum(b * r ** (e - deg))
    hi = 1.0
    while h(hi) > 0:
        hi *= 2
    return brentq(h, 0.0, hi, xtol=1e-15, rtol=1e-14)


def _radius_upper(M: float, deg: int, b: np.ndarray, e: np.ndarray) -> float:
    """sup{r : M r^deg + sum b r^e < 1}."""
    h = lambda r: M * r**deg + np.sum(b * r**e) - 1.0
    if M <= 0 and b.size == 0:
        return np.inf
    hi = 1.0
    while h(hi) < 0:
        hi *= 2
    return brentq(h, 0.0, hi, xtol=1e-15, rtol=1e-14)


def delta_constraints(s: MapSpec, alpha: float, tol: float = 1e-9) -> dict[str, float]:
    """Largest radius allowed by each bound on the derivative forms.

    Each family is linear in lambda (or in the sign), so its minimum over the
    circle is concave and its maximum convex in the parameter: the endpoint
    forms give the extreme values.
    """
    Px, Py = partial_derivative(s.P, "x"), partial_derivative(s.P, "y")
    Qx, Qy = partial_derivative(s.Q, "x"), partial_derivative(s.Q, "y")
    Xt, Yt = s.higher_terms("X"), s.higher_terms("Y")
    families = {
        "interp_P": ([linear_combine(1, Px, 1, Py), linear_combine(1, Px, -1, Py)], _budget(Xt, 1, 1)),
        "interp_Q": ([linear_combine(1, Qy, 1, Qx), linear_combine(1, Qy, -1, Qx)], _budget(Yt, 1, 1)),
        "slope_P": (
            [linear_combine(1, Px, alpha, Py), linear_combine(1, Px, -alpha, Py)],
            _budget(Xt, 1, alpha),
        ),
        "slope_Q": (
            [linear_combine(alpha, Qy, 1, Qx), linear_combine(alpha, Qy, -1, Qx)],
            _budget(Yt, 1, alpha),
        ),
    }
    out = {}
    for name, (forms, (b, e)) in families.items():
        deg = forms[0].degree
        m = min(z_min(symmetrize(f), tol).z_min_lower for f in forms)
        M = max(circle_max(f.coeffs, tol) for f in forms)
        out[name + "_positive"] = _radius_lower(m, deg, b, e)
        out[name + "_below_one"] = _radius_upper(M, deg, b, e)
    return out


def find_delta(s: MapSpec, alpha: float, grid=None, tol: float = 1e-9) -> float:
    """A radius strictly inside the feasible one, DELTA_SAFETY times the supremum."""
    radii = delta_constraints(s, alpha, tol)
    r = min(radii.values())
    if not r > 0:
        raise ValueError("no positive radius absorbs the higher-order terms")
    return DELTA_SAFETY * r


class KappaCone(NamedTuple):
    eps_dom: float
    tau0: float
    kappa: float
    region: float


def _ratio_inf(main: HomogeneousPolynomial, cross: HomogeneousPolynomial, tol: float) -> float:
    """inf{r : r*main +- cross both PD}, i.e. max of |cross|/main on the circle."""
    ok = lambda r: _pd(linear_combine(r, main, 1.0, cross), tol) and _pd(
        linear_combine(r, main, -1.0, cross), tol
    )
    lo, hi = 0.0, 1.0
    if not ok(hi):
        raise ValueError("strict dominance fails")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def find_eps_kappa(s: MapSpec, region: float, grid=None, tol: float = 1e-9) -> KappaCone:
    """Dominance gap eps, tau0 = 1 - eps/2, kappa = (1 + 1/tau0)/2 and the radius
    on which the higher-order terms stay below eps/2 of the leading derivative."""
    Px, Py = partial_derivative(s.P, "x"), partial_derivative(s.P, "y")
    Qx, Qy = partial_derivative(s.Q, "x"), partial_derivative(s.Q, "y")
    eps = 1.0 - max(_ratio_inf(Px, Py, tol), _ratio_inf(Qy, Qx, tol))
    if not eps > 0:
        raise ValueError("dominance gap is not positive")
    tau0 = 1.0 - eps / 2
    kappa = 0.5 * (1.0 + 1.0 / tau0)
    mA = z_min(symmetrize(Px), tol).z_min_lower
    mB = z_min(symmetrize(Qy), tol).z_min_lower
    rx = _radius_lower(0.5 * eps * mA, Px.degree, *_budget(s.higher_terms("X"), 1, 1))
    ry = _radius_lower(0.5 * eps * mB, Qy.degree, *_budget(s.higher_terms("Y"), 1, 1))
    r = min(rx, ry)
    if r <= region:
        region = DELTA_SAFETY * r
    return KappaCone(eps, tau0, kappa, region)


# ---------------------------------------------------------------------------
# sampled verification


def _cone_points(radius: float, n: int, flip: bool = False):
    """Deterministic points of C^s(1, radius) (or C^u when flip) minus the puncture.

    Half are spread uniformly in |x|, half geometrically down to 1e-6*radius;
    y/x is uniform in [-1, 1].
    """
    u = qmc.Halton(d=3, scramble=False).random(n + 1)[1:]
    half = n // 2
    mag = np.empty(n)
    mag[:half] = radius * (0.02 + 0.98 * u[:half, 0])
    mag[half:] = radius * 10.0 ** (-6 * u[half:, 0])
    lam = 2 * u[:, 1] - 1
    sgn = np.where(u[:, 2] < 0.5, -1.0, 1.0)
    a = sgn * mag
    b = lam * a
    keep = np.hypot(a, b) > PUNCTURE
    a, b = a[keep], b[keep]
    return (b, a) if flip else (a, b)


def _disc_points(radius: float, n: int):
    u = qmc.Halton(d=2, scramble=False).random(n + 1)[1:]
    half = n // 2
    rr = np.empty(n)
    rr[:half] = radius * np.sqrt(0.0004 + 0.9996 * u[:half, 0])
    rr[half:] = radius * 10.0 ** (-6 * u[half:, 0])
    th = 2 * np.pi * u[:, 1]
    return rr * np.cos(th), rr * np.sin(th)


def _diagonal_points(radius: float, n: int):
    m = ceil(n / 4)
    t = radius * np.geomspace(1e-6, 1.0, m)
    xs = np.concatenate([t, -t, t, -t])
    ys = np.concatenate([t, t, -t, -t])
    return xs, ys


def _boundary_vector_margin(e11, e12, e21, e22, vx, vy, slope, steep: bool):
    """Slack of the image of (vx, vy) under I + E against the cone boundary of given slope.

    steep=True: the target cone is |w_y| > slope |w_x|; margin |w_y| - slope |w_x|.
    steep=False: the target is |w_y| < slope |w_x|; margin slope |w_x| - |w_y|.
    (vx, vy) lies on that boundary, so the leading terms cancel exactly and only
    the E-part is kept when the image stays in the same quadrant.
    """
    ex = e11 * vx + e12 * vy
    ey = e21 * vx + e22 * vy
    wx, wy = vx + ex, vy + ey
    sx, sy = np.sign(vx), np.sign(vy)
    same = (np.sign(wx) == sx) & (np.sign(wy) == sy)
    if steep:
        fast = sy * ey - slope * sx * ex
        slow = np.abs(wy) - slope * np.abs(wx)
    else:
        fast = slope * sx * ex - sy * ey
        slow = slope * np.abs(wx) - np.abs(wy)
    return np.where(same, fast, slow)


def _line_interval(c: float, s: float, radius: float, positive: bool):
    """x-range of {y = c + s x} inside C^s(1, radius) on the chosen side of x = 0."""
    lo, hi = (0.0, radius) if positive else (-radius, 0.0)
    # |c + s x| <= |x| as two linear inequalities a x <= b
    sg = 1.0 if positive else -1.0
    for a, b in (((s - sg), -c), ((-s - sg), c)):
        if a > 0:
            hi = min(hi, b / a)
        elif a < 0:
            lo = max(lo, b / a)
        elif b < 0:
            return None
    return (lo, hi) if hi > lo else None


def vertical_arcs(cert: ConeCertificate, n_arcs: int, seed: int = 0):
    """Deterministic alpha-vertical segments inside C^s(1, delta): (x0, y0, x1, y1) rows."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n_arcs:
        x = cert.delta * rng.uniform(0.02, 1.0) * rng.choice([-1.0, 1.0])
        y = x * rng.uniform(-1, 1)
        if rng.uniform() < 0.2:
            lim = abs(x)
            out.append((x, -lim, x, lim))
            continue
        s = rng.choice([-1.0, 1.0]) * cert.alpha / rng.uniform(0.05, 1.0)
        c = y - s * x
        iv = _line_interval(c, s, cert.delta, x > 0)
        if iv is None or iv[1] - iv[0] <= 0:
            continue
        out.append((iv[0], c + s * iv[0], iv[1], c + s * iv[1]))
    return np.array(out)


@dataclass
class ConditionCheck:
    name: str
    samples: int
    violations: int
    min_margin: float
    min_scaled_margin: float

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.min_margin > 0


def _summarize(name, margins, scale):
    margins = np.asarray(margins, dtype=float)
    bad = ~(margins > 0)
    return ConditionCheck(
        name,
        int(margins.size),
        int(bad.sum()),
        float(np.min(margins)),
        float(np.min(margins / scale)),
    )


@dataclass
class CheckReport:
    checks: list[ConditionCheck]

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)

    @property
    def violations(self) -> dict[str, int]:
        return {c.name: c.violations for c in self.checks if c.violations}

    def margins(self) -> dict[str, float]:
        return {c.name: c.min_scaled_margin for c in self.checks}

    def __getitem__(self, name) -> ConditionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def verify_cone_lemma(s: MapSpec, cert: ConeCertificate, samples: int = 10_000, arcs: int = 100) -> CheckReport:
    """Sampled check of the four forward cone conditions on C^s(1, delta).

    Scaled margins divide by the homogeneous size of each quantity (|p|^(2k+1),
    |p|^(2k), ...) so that points near the origin are comparable.
    """
    d = cert.delta
    k2 = 2 * s.k
    checks = []

    x, y = _cone_points(d, samples)
    r = np.hypot(x, y)
    sg = np.sign(x)
    pull = s.contraction_part(x, y)
    f = x - pull
    into = sg * f  # 0 < f < x for x > 0
    checks.append(_summarize("contract_positive", into, np.abs(x)))
    checks.append(_summarize("contract_inward", sg * pull, r ** (k2 + 1)))

    qx, qy = _diagonal_points(d, samples)
    rq = np.hypot(qx, qy)
    push = s.expansion_part(qx, qy)
    pull_q = s.contraction_part(qx, qy)
    checks.append(_summarize("diagonal_push", np.sign(qy) * push, rq ** (2 * s.k_prime + 1)))
    # |g| - |f| with |qx| == |qy| exactly
    checks.append(
        _summarize("diagonal_exit", np.sign(qy) * push + np.sign(qx) * pull_q, rq ** (min(k2, 2 * s.k_prime) + 1))
    )

    e11, e12, e21, e22 = s.jacobian_deviation(x, y)
    cone_m = np.minimum(
        _boundary_vector_margin(e11, e12, e21, e22, 1.0, cert.alpha, cert.alpha, True),
        _boundary_vector_margin(e11, e12, e21, e22, 1.0, -cert.alpha, cert.alpha, True),
    )
    checks.append(_summarize("unstable_cone", cone_m, r ** min(k2, 2 * s.k_prime)))

    pairs = max(1, ceil(samples / arcs))
    segs = vertical_arcs(cert, arcs)
    rng = np.random.default_rng(1)
    t1 = rng.uniform(size=(arcs, pairs))
    t2 = rng.uniform(size=(arcs, pairs))
    ax, ay, bx, by = (segs[:, i : i + 1] for i in range(4))
    px, py = ax + t1 * (bx - ax), ay + t1 * (by - ay)
    qx2, qy2 = ax + t2 * (bx - ax), ay + t2 * (by - ay)
    dy = py - qy2
    dg = s.expansion_part(px, py) - s.expansion_part(qx2, qy2)
    sep = np.where(np.sign(dy + dg) == np.sign(dy), np.sign(dy) * dg, np.abs(dy + dg) - np.abs(dy))
    scale = np.abs(dy) * np.maximum(np.hypot(px, py), np.hypot(qx2, qy2)) ** (2 * s.k_prime)
    keep = dy != 0
    checks.append(_summarize("vertical_separation", sep[keep], scale[keep]))
    return CheckReport(checks)


def verify_kappa_cone(s: MapSpec, cert: ConeCertificate, samples: int = 10_000) -> CheckReport:
    """DF(p) maps C^u(kappa) into itself for p in B(0, sqrt(2) delta) minus the puncture.

    The ball covers both cones C^s(1, delta) and C^u(1, delta).
    """
    x, y = _disc_points(sqrt(2) * cert.delta, samples)
    r = np.hypot(x, y)
    e = s.jacobian_deviation(x, y)
    m = np.minimum(
        _boundary_vector_margin(*e, 1.0, cert.kappa, cert.kappa, True),
        _boundary_vector_margin(*e, -1.0, cert.kappa, cert.kappa, True),
    )
    return CheckReport([_summarize("kappa_cone", m, r ** (2 * min(s.k, s.k_prime)))])


def verify_inverse_cone_lemma(
    s: MapSpec, cert: ConeCertificate, samples: int = 10_000, arcs: int = 100
) -> CheckReport:
    """Mirror of the cone conditions for the inverse map on C^u(1, delta) with beta-cones."""
    d = cert.delta
    checks = []
    x, y = _cone_points(d, samples, flip=True)
    r = np.hypot(x, y)
    dx, dy = inverse_deviation(s, x, y)
    sg = np.sign(y)
    checks.append(_summarize("inv_contract_positive", sg * (y + dy), np.abs(y)))
    checks.append(_summarize("inv_contract_inward", -sg * dy, r ** (2 * s.k_prime + 1)))

    qx, qy = _diagonal_points(d, samples)
    rq = np.hypot(qx, qy)
    ddx, ddy = inverse_deviation(s, qx, qy)
    checks.append(_summarize("inv_diagonal_push", np.sign(qx) * ddx, rq ** (2 * s.k + 1)))
    checks.append(
        _summarize("inv_diagonal_exit", np.sign(qx) * ddx - np.sign(qy) * ddy,
                   rq ** (2 * min(s.k, s.k_prime) + 1))
    )

    # D(F^-1)(p) = (I + E(p'))^-1 with p' = F^-1(p); (I+E)^-1 = I + G, G = -(I+E)^-1 E
    e11, e12, e21, e22 = s.jacobian_deviation(x + dx, y + dy)
    a, b, c, dd = 1 + e11, e12, e21, 1 + e22
    det = a * dd - b * c
    i11, i12, i21, i22 = dd / det, -b / det, -c / det, a / det
    g11 = -(i11 * e11 + i12 * e21)
    g12 = -(i11 * e12 + i12 * e22)
    g21 = -(i21 * e11 + i22 * e21)
    g22 = -(i21 * e12 + i22 * e22)
    m = np.minimum(
        _boundary_vector_margin(g11, g12, g21, g22, 1.0, cert.beta, cert.beta, False),
        _boundary_vector_margin(g11, g12, g21, g22, 1.0, -cert.beta, cert.beta, False),
    )
    checks.append(_summarize("inv_stable_cone", m, r ** (2 * min(s.k, s.k_prime))))

    # beta-horizontal segments inside C^u(1, delta), mirrored from vertical ones
    mirror = ConeCertificate(1 / cert.beta, cert.beta, d, cert.eps_dom, cert.tau0, cert.kappa)
    segs = vertical_arcs(mirror, arcs, seed=2)[:, [1, 0, 3, 2]]
    pairs = max(1, ceil(samples / arcs))
    rng = np.random.default_rng(3)
    t1 = rng.uniform(size=(arcs, pairs))
    t2 = rng.uniform(size=(arcs, pairs))
    ax, ay, bx, by = (segs[:, i : i + 1] for i in range(4))
    px, py = ax + t1 * (bx - ax), ay + t1 * (by - ay)
    qx2, qy2 = ax + t2 * (bx - ax), ay + t2 * (by - ay)
    dpx, _ = inverse_deviation(s, px, py)
    dqx, _ = inverse_deviation(s, qx2, qy2)
    dxx = px - qx2
    dd_ = dpx - dqx
    sep = np.where(np.sign(dxx + dd_) == np.sign(dxx), np.sign(dxx) * dd_, np.abs(dxx + dd_) - np.abs(dxx))
    scale = np.abs(dxx) * np.maximum(np.hypot(px, py), np.hypot(qx2, qy2)) ** (2 * s.k)
    keep = dxx != 0
    checks.append(_summarize("inv_horizontal_separation", sep[keep], scale[keep]))
    return CheckReport(checks)


def build_certificate(s: MapSpec, tol: float = 1e-9) -> ConeCertificate:
    """Parameters only; raises HypothesisFailure when a tensor is not PD."""
    hyp = check_hypotheses(s, tol)
    if not hyp.overall:
        raise HypothesisFailure(hyp.failing)
    ts = derive_tensors(s)
    alpha = find_alpha(ts, tol)
    beta = find_beta(ts, tol)
    radii = delta_constraints(s, alpha, tol)
    # the inverse-side conditions use beta-cones; their radii come from the
    # mirrored constraint set
    mirror = MapSpec(
        _swap(s.Q), _swap(s.P), tuple(_swap(t) for t in s.Y), tuple(_swap(t) for t in s.X)
    )
    radii.update({"inverse_" + k: v for k, v in delta_constraints(mirror, 1 / beta, tol).items()})
    ball = DELTA_SAFETY * min(radii.values())
    kc = find_eps_kappa(s, ball, tol=tol)
    radii["dominance_smallness"] = kc.region / DELTA_SAFETY if kc.region < ball else np.inf
    # the cones {|y| <= |x| <= delta} must fit inside the ball
    delta = min(ball, kc.region) / sqrt(2)
    return ConeCertificate(alpha, beta, delta, kc.eps_dom, kc.tau0, kc.kappa, radii=radii)


def _swap(p: HomogeneousPolynomial) -> HomogeneousPolynomial:
    """The form q(x, y) = p(y, x)."""
    return HomogeneousPolynomial(p.degree, tuple(reversed(p.coeffs)))


def certify(s: MapSpec, samples: int = 10_000, tol: float = 1e-9) -> ConeCertificate:
    """Parameters plus sampled verification; margins are the minimum scaled slacks."""
    cert = build_certificate(s, tol)
    margins, res = {}, {}
    for rep in (
        verify_cone_lemma(s, cert, samples),
        verify_kappa_cone(s, cert, samples),
        verify_inverse_cone_lemma(s, cert, samples),
    ):
        for c in rep.checks:
            margins[c.name] = c.min_scaled_margin if c.violations == 0 else min(c.min_scaled_margin, 0.0)
            res[c.name] = c.samples
    return cert.with_margins(margins, res)
