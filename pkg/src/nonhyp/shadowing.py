"""Finite shadowing near the fixed point.

Everything here is measured in the sup-norm, so the neighbourhoods S(p, d)
are squares.  ``build_env`` picks a square K1 on which DF and its inverse are
close to the identity and the cross derivatives of the second component are
small, and a half-size square K on which the box conditions of the shadowing
lemma are then checked by sampling.  Shadow points are found by direct search
over S(p0, eps).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from . import _kernels as K
from .cone import CheckReport, ConeCertificate, _summarize
from .planar_map import MapSpec, Point

DEFAULT_EPS_TARGET = 5e-5
REGION_SAFETY = 0.98
CROSS_LIMIT = 0.25
JACOBIAN_LIMIT = 0.5  # row-sum bound e < 1/2 keeps alpha = e / (1 - e) below 1
SEARCH_GRID = 33
SEARCH_ROUNDS = 8
SEARCH_SHRINK = 4.0
ORACLE_GRID = 1025


class Box(NamedTuple):
    """The square [-half_width, half_width]^2."""

    half_width: float

    def contains(self, x, y):
        return (np.abs(x) <= self.half_width) & (np.abs(y) <= self.half_width)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(-self.half_width, self.half_width, size=(n, 2))


# ---------------------------------------------------------------------------
# term-wise bounds on a square


def _terms(forms):
    return [t for f in forms for t in f.terms()]


def _bound(terms, r: float, weight) -> float:
    """sup over |x|, |y| <= r of sum |c| weight(i, j) |x|^(i+j-1), term by term."""
    return float(sum(abs(c) * weight(i, j) * r ** (i + j - 1) for i, j, c in terms if c))


def jacobian_row_bound(s: MapSpec, r: float) -> float:
    """Bound on ||DF - I||_inf over the square of half-width r."""
    total = lambda i, j: i + j
    return max(_bound(_terms([s.P] + list(s.X)), r, total), _bound(_terms([s.Q] + list(s.Y)), r, total))


def cross_bounds(s: MapSpec, r: float) -> tuple[float, float]:
    """Bounds on |dQ/dx| and |dY/dx| over the square of half-width r."""
    dx = lambda i, j: i
    return _bound(_terms([s.Q]), r, dx), _bound(_terms(s.Y), r, dx)


def _largest_radius(fn, limit: float, r_max: float) -> float:
    if fn(r_max) <= limit:
        return r_max
    return brentq(lambda r: fn(r) - limit, 0.0, r_max, xtol=1e-14)


# ---------------------------------------------------------------------------
# environment


@dataclass(frozen=True)
class ShadowEnv:
    K: Box
    K1: Box
    delta: float
    Delta: float
    alpha_norm: float
    seed: int = 0
    bounds: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.Delta != 2 * self.delta:
            raise ValueError("Delta must equal 2 delta")
        if not self.alpha_norm < 1:
            raise ValueError(f"alpha_norm must be below 1, got {self.alpha_norm}")
        if not self.K.half_width + self.Delta <= self.K1.half_width:
            raise ValueError("the Delta-neighbourhood of K must lie in K1")

    def with_delta(self, delta: float) -> "ShadowEnv":
        return replace(self, delta=delta, Delta=2 * delta)


def build_env(s: MapSpec, eps_target: float = DEFAULT_EPS_TARGET, cert: ConeCertificate | None = None, seed: int = 0) -> ShadowEnv:
    """K1 from the operator-norm and cross-derivative bounds, K = K1 / 2, delta <= eps_target.

    The bounds are term-wise over the square, so they hold on all of K1, not
    only at samples.  K1 also stays inside the certified cone region when a
    certificate is given, since the displacement conditions need the sign
    information proved there.
    """
    if not eps_target > 0:
        raise ValueError("eps_target must be positive")
    r_max = cert.delta if cert is not None else 1.0
    r_jac = _largest_radius(lambda r: jacobian_row_bound(s, r), JACOBIAN_LIMIT, r_max)
    r_q = _largest_radius(lambda r: cross_bounds(s, r)[0], CROSS_LIMIT, r_max)
    r_y = _largest_radius(lambda r: cross_bounds(s, r)[1], CROSS_LIMIT, r_max)
    r1 = REGION_SAFETY * min(r_jac, r_q, r_y)
    r2 = r1 / 2
    delta = min(eps_target, (r1 - r2) / 2)
    e = jacobian_row_bound(s, r1)
    dq, dy = cross_bounds(s, r1)
    bounds = {
        "jacobian_row_bound": e,
        "dQ_dx_bound": dq,
        "dY_dx_bound": dy,
        "radius_jacobian": r_jac,
        "radius_dQ_dx": r_q,
        "radius_dY_dx": r_y,
    }
    return ShadowEnv(Box(r2), Box(r1), delta, 2 * delta, e / (1 - e), seed, bounds)


# ---------------------------------------------------------------------------
# shadowing conditions


def _abs_shift(w, d):
    """|w + d| - |w| without cancellation when |d| is much smaller than |w|."""
    w = np.asarray(w, float)
    d = np.asarray(d, float)
    return np.where(np.abs(d) <= np.abs(w), np.sign(w) * d, np.abs(w + d) - np.abs(w))


def _dev_diff(s: MapSpec, x, y, u, v):
    """(F - id)(x + u, y + v) - (F - id)(x, y)."""
    fx1, fy1 = s.deviation(x + u, y + v)
    fx0, fy0 = s.deviation(x, y)
    return fx1 - fx0, fy1 - fy0


def _box_offsets(d: float) -> np.ndarray:
    """Corners and edge midpoints of the square of half-width d."""
    return np.array([(a, b) for a in (-d, 0.0, d) for b in (-d, 0.0, d) if (a, b) != (0.0, 0.0)])


def _inverse_offset(s: MapSpec, x, y, u, v, iters: int = 80):
    """d with F(p + d) = F(p) + (u, v), by the fixed point d = w - [(F - id)(p + d) - (F - id)(p)]."""
    dx, dy = np.array(u, float), np.array(v, float)
    for _ in range(iters):
        ex, ey = _dev_diff(s, x, y, dx, dy)
        nx, ny = u - ex, v - ey
        if np.array_equal(nx, dx) and np.array_equal(ny, dy):
            break
        dx, dy = nx, ny
    return dx, dy


def verify_shadowing_conditions(s: MapSpec, env: ShadowEnv, samples: int = 10_000, seed: int = 0, n_line: int = 9) -> CheckReport:
    """Sampled margins of the four shadowing conditions over K (all must be positive).

    box_forward / box_inverse: the image of S(p, delta) under F, and of
      S(F(p), delta) under F^-1, stays inside the open Delta-box.  Only the 8
      corner and edge-midpoint images are computed; a Lipschitz slack from
      the bound on DF - I over K1 covers the rest of the boundary.
    g_horizontal: |g(p + (v, 0)) - g(p)| < delta for |v| <= Delta.
    g_vertical: |g(p + (v, w)) - g(p)| > delta for |v| <= delta, |w| = delta.
    f_cross: |f(p + (v, w)) - f(p)| < delta on the cross-shaped set H(delta).
    """
    rng = np.random.default_rng([seed, samples])
    k = env.K.half_width
    extra = np.array([(0.0, 0.0), (k, k), (k, -k), (-k, k), (-k, -k), (k, 0.0), (0.0, k), (-k, 0.0), (0.0, -k)])
    pts = np.vstack([extra, env.K.sample(rng, max(samples - len(extra), 0))])
    px, py = pts[:, 0:1], pts[:, 1:2]
    d, D = env.delta, env.Delta
    e = jacobian_row_bound(s, env.K1.half_width)

    # F(q) - F(p) = (q - p) + [(F - id)(q) - (F - id)(p)]: the first part maps the
    # box boundary onto itself, the second moves by at most e * delta / 2 between
    # neighbouring samples (e * (1 + alpha) * delta / 2 on the inverse side)
    off = _box_offsets(d)
    u, v = off[:, 0][None, :], off[:, 1][None, :]
    ex, ey = _dev_diff(s, px, py, u, v)
    fwd = d + np.maximum(np.abs(ex), np.abs(ey)).max(axis=1) + e * d / 2
    ix, iy = _inverse_offset(s, px, py, np.broadcast_to(u, ex.shape), np.broadcast_to(v, ex.shape))
    inv = d + np.maximum(np.abs(ix - u), np.abs(iy - v)).max(axis=1) + e * (1 + env.alpha_norm) * d / 2

    line = np.linspace(-1, 1, n_line)[None, :]
    # g_horizontal: displacement of g, |v| <= Delta
    _, gy = _dev_diff(s, px, py, D * line, 0.0)
    g_h = d - np.abs(gy)
    # g_vertical: sides w = +-delta, |v| <= delta
    g_v = []
    for w in (d, -d):
        _, gy = _dev_diff(s, px, py, d * line, w)
        g_v.append(_abs_shift(w, gy))
    g_v = np.hstack(g_v)
    # f_cross: w = 0 with |v| <= delta, and |v| = delta with |w| <= delta
    f_c = []
    fx, _ = _dev_diff(s, px, py, d * line, 0.0)
    vv = np.broadcast_to(d * line, fx.shape)
    f_c.append((d - np.abs(vv)) - _abs_shift(vv, fx))
    for vs in (d, -d):
        fx, _ = _dev_diff(s, px, py, vs, d * line)
        f_c.append(-_abs_shift(vs, fx))
    f_c = np.hstack(f_c)
    return CheckReport([
        _summarize("box_forward", D - fwd, d),
        _summarize("box_inverse", D - inv, d),
        _summarize("g_horizontal", g_h.min(axis=1), d),
        _summarize("g_vertical", g_v.min(axis=1), d),
        _summarize("f_cross", f_c.min(axis=1), d),
    ])


def operator_norm_check(s: MapSpec, env: ShadowEnv, samples: int = 10_000, seed: int = 0) -> float:
    """max over random p in K1 and unit v of |DF(p) v|_inf - (1 + alpha_norm); must be <= 0."""
    rng = np.random.default_rng([seed, 51])
    p = env.K1.sample(rng, samples)
    v = rng.uniform(-1, 1, size=(samples, 2))
    v /= np.abs(v).max(axis=1, keepdims=True)
    e11, e12, e21, e22 = s.jacobian_deviation(p[:, 0], p[:, 1])
    out = np.maximum(
        np.abs(v[:, 0] + e11 * v[:, 0] + e12 * v[:, 1]), np.abs(v[:, 1] + e21 * v[:, 0] + e22 * v[:, 1])
    )
    return float(np.max(out - (1 + env.alpha_norm)))


# ---------------------------------------------------------------------------
# pseudo-orbits and shadow points


@dataclass(frozen=True)
class PseudoOrbit:
    points: np.ndarray  # (m + 1, 2)
    delta: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)

    @property
    def m(self) -> int:
        return len(self.points) - 1

    def jumps(self, s: MapSpec) -> np.ndarray:
        """|p_{k+1} - F(p_k)|_inf for k < m."""
        p = self.points
        if self.m == 0:
            return np.zeros(0)
        fx, fy = s.deviation(p[:-1, 0], p[:-1, 1])
        return np.maximum(np.abs(p[1:, 0] - p[:-1, 0] - fx), np.abs(p[1:, 1] - p[:-1, 1] - fy))

    def validate(self, s: MapSpec) -> "PseudoOrbit":
        j = self.jumps(s)
        if j.size and not np.all(j < self.delta):
            raise ValueError(f"not a {self.delta:.3g}-pseudo-orbit: jump {j.max():.3g}")
        return self


def _pseudo_orbit(s: MapSpec, K: Box, delta: float, p0, m: int, noise: float, rng) -> PseudoOrbit:
    if m < 0:
        raise ValueError("length must be non-negative")
    x, y = float(p0[0]), float(p0[1])
    if not K.contains(x, y):
        raise ValueError(f"p0 = {(x, y)} outside K")
    h = K.half_width
    pts = [(x, y)]
    for _ in range(m):
        fx, fy = s.deviation(x, y)
        nx, ny = x + fx, y + fy
        if not K.contains(nx, ny):
            break
        ex, ey = rng.uniform(-noise, noise, size=2) if noise > 0 else (0.0, 0.0)
        x, y = float(np.clip(nx + ex, -h, h)), float(np.clip(ny + ey, -h, h))
        pts.append((x, y))
    if m > 0 and len(pts) == 1:
        raise ValueError(f"orbit of {tuple(p0)} leaves K immediately")
    return PseudoOrbit(np.array(pts), delta).validate(s)


def generate_pseudo_orbit(
    s: MapSpec, env: ShadowEnv, p0, m: int, noise: float, seed, rng: np.random.Generator | None = None
) -> PseudoOrbit:
    """p_{k+1} = F(p_k) + uniform noise in [-noise, noise]^2, clipped to K.

    Clipping towards K never moves a point away from F(p_k) as long as F(p_k)
    lies in K; once F(p_k) leaves K the orbit is truncated there.  Pass rng to
    continue an existing stream; otherwise one is seeded from seed.
    """
    if not 0 <= noise <= env.delta:
        raise ValueError(f"noise must lie in [0, delta = {env.delta:.3g}]")
    rng = rng if rng is not None else np.random.default_rng(seed)
    return _pseudo_orbit(s, env.K, env.delta, p0, m, noise, rng)


@dataclass(frozen=True)
class ShadowResult:
    q: Point
    eps_achieved: float
    success: bool
    errors: np.ndarray = field(repr=False)  # per-step |F^k(q) - p_k|_inf
    orbit: np.ndarray = field(repr=False)  # F^k(q), k = 0..m
    evaluations: int = 0


def shadow_orbit(s: MapSpec, qx, qy, m: int):
    """F^k(q) for k = 0..m, for arrays of starting points; shape (m + 1,) + q.shape, twice."""
    qx = np.asarray(qx, dtype=float)
    qy = np.asarray(qy, dtype=float)
    xs, ys = [qx], [qy]
    for _ in range(m):
        fx, fy = s.deviation(qx, qy)
        qx, qy = qx + fx, qy + fy
        xs.append(qx)
        ys.append(qy)
    return np.stack(xs), np.stack(ys)


def shadow_objective(s: MapSpec, po: PseudoOrbit, qx, qy) -> np.ndarray:
    """max_k |F^k(q) - p_k|_inf for an array of candidate q (+inf for diverging orbits)."""
    qx, qy = np.broadcast_arrays(np.asarray(qx, dtype=float), np.asarray(qy, dtype=float))
    out = K.shadow_errors(
        s.kernel_terms, qx.ravel().copy(), qy.ravel().copy(),
        po.points[:, 0].copy(), po.points[:, 1].copy(),
    )
    return out.reshape(qx.shape)


def _result(s: MapSpec, po: PseudoOrbit, q, eps: float, evaluations: int) -> ShadowResult:
    xs, ys = shadow_orbit(s, q[0], q[1], po.m)
    orbit = np.column_stack([xs, ys])
    errors = np.abs(orbit - po.points).max(axis=1)
    achieved = float(errors.max())
    return ShadowResult(Point(float(q[0]), float(q[1])), achieved, achieved < eps, errors, orbit, evaluations)


def find_shadow_point(
    s: MapSpec,
    po: PseudoOrbit,
    eps: float,
    grid: int = SEARCH_GRID,
    rounds: int = SEARCH_ROUNDS,
    shrink: float = SEARCH_SHRINK,
) -> ShadowResult:
    """Grid search over S(p0, eps), then `rounds` re-grids of a cell shrunk by `shrink` around the best point."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    p0 = po.points[0]
    if po.m == 0:
        return _result(s, po, p0, eps, 0)
    cx, cy, h = p0[0], p0[1], eps
    best, best_val, evals = (p0[0], p0[1]), np.inf, 0
    lo_x, hi_x, lo_y, hi_y = p0[0] - eps, p0[0] + eps, p0[1] - eps, p0[1] + eps
    for _ in range(rounds + 1):
        gx = np.clip(np.linspace(cx - h, cx + h, grid), lo_x, hi_x)
        gy = np.clip(np.linspace(cy - h, cy + h, grid), lo_y, hi_y)
        qx, qy = np.meshgrid(gx, gy, indexing="ij")
        obj = shadow_objective(s, po, qx, qy)
        evals += obj.size
        k = np.unravel_index(np.argmin(obj), obj.shape)
        if obj[k] < best_val:
            best_val, best = float(obj[k]), (float(qx[k]), float(qy[k]))
        cx, cy = best
        h /= shrink
    return _result(s, po, best, eps, evals)


def brute_force_shadow(s: MapSpec, po: PseudoOrbit, eps: float, grid: int = ORACLE_GRID, chunk: int = 65) -> ShadowResult:
    """Exhaustive search over a grid x grid lattice of S(p0, eps)."""
    p0 = po.points[0]
    gx = np.linspace(p0[0] - eps, p0[0] + eps, grid)
    gy = np.linspace(p0[1] - eps, p0[1] + eps, grid)
    best, best_val = (p0[0], p0[1]), np.inf
    for start in range(0, grid, chunk):
        qx, qy = np.meshgrid(gx[start:start + chunk], gy, indexing="ij")
        obj = shadow_objective(s, po, qx, qy)
        k = np.unravel_index(np.argmin(obj), obj.shape)
        if obj[k] < best_val:
            best_val, best = float(obj[k]), (float(qx[k]), float(qy[k]))
    return _result(s, po, best, eps, grid * grid)


def resimulate(s: MapSpec, po: PseudoOrbit, q) -> float:
    """max_k |F^k(q) - p_k|_inf with a plain scalar loop, independent of the vectorised search."""
    x, y = float(q[0]), float(q[1])
    worst = 0.0
    for k, (px, py) in enumerate(po.points):
        if k:
            fx, fy = s.deviation(x, y)
            x, y = x + fx, y + fy
        worst = max(worst, abs(x - px), abs(y - py))
    return worst


# ---------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    orbit: PseudoOrbit
    result: ShadowResult


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent stream per trial, so the trials can run in any order."""
    return np.random.default_rng([seed, trial])


def run_trials(
    s: MapSpec, env: ShadowEnv, n_trials: int, m: int, noise: float, eps: float, seed: int, start_fraction: float = 0.5
) -> list[TrialRecord]:
    """Seeded pseudo-orbits from p0 uniform in the inner start_fraction of K, each searched for a shadow."""
    out = []
    h = env.K.half_width * start_fraction
    for trial in range(n_trials):
        rng = trial_rng(seed, trial)
        p0 = rng.uniform(-h, h, size=2)
        po = generate_pseudo_orbit(s, env, p0, m, noise, seed, rng=rng)
        out.append(TrialRecord(trial, po, find_shadow_point(s, po, eps)))
    return out


def write_shadow_csv(path, records: list[TrialRecord]) -> None:
    """One row per orbit step: orbit, k, px, py, Fqx, Fqy, err."""
    rows = []
    for rec in records:
        p, fq, err = rec.orbit.points, rec.result.orbit, rec.result.errors
        for k in range(len(p)):
            rows.append((rec.trial, k, p[k, 0], p[k, 1], fq[k, 0], fq[k, 1], err[k]))
    np.savetxt(
        path, np.array(rows, dtype=float).reshape(-1, 7), delimiter=",",
        header="orbit,k,px,py,Fqx,Fqy,err", comments="",
        fmt=["%d", "%d", "%.17g", "%.17g", "%.17g", "%.17g", "%.17g"],
    )


@dataclass(frozen=True)
class DeltaEstimate:
    """Statistical estimate: largest schedule delta whose trials were all shadowed."""

    eps: float
    delta: float | None
    schedule: tuple
    passed: tuple
    trials: int

    @property
    def monotone(self) -> bool:
        """Once a schedule entry passes, every smaller one passes too."""
        seen = False
        for ok in self.passed:
            if seen and not ok:
                return False
            seen = seen or ok
        return True


def estimate_delta_for_eps(
    s: MapSpec,
    env: ShadowEnv,
    eps: float,
    trials: int = 100,
    seed: int = 0,
    schedule=None,
    max_length: int = 50,
    noise_fraction: float = 0.999,
) -> DeltaEstimate:
    """Walk a decreasing delta schedule; random pseudo-orbits of length <= max_length at each entry.

    Noise is noise_fraction * delta per coordinate, just inside the strict
    pseudo-orbit inequality.  Raises RuntimeError when no entry passes.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if schedule is None:
        schedule = eps * 2.0 ** -np.arange(0, 10)
    schedule = tuple(float(d) for d in sorted(schedule, reverse=True))
    passed = []
    h = env.K.half_width / 2
    for d in schedule:
        ok = True
        for trial in range(trials):
            rng = trial_rng(seed, trial)
            p0 = rng.uniform(-h, h, size=2)
            m = int(rng.integers(0, max_length + 1))
            po = _pseudo_orbit(s, env.K, d, p0, m, noise_fraction * d, rng)
            if not find_shadow_point(s, po, eps).success:
                ok = False
                break
        passed.append(ok)
    best = next((d for d, ok in zip(schedule, passed) if ok), None)
    if best is None:
        raise RuntimeError(f"no delta in the schedule shadows at eps = {eps:.3g}; eps may be below the search resolution")
    return DeltaEstimate(eps, best, schedule, tuple(passed), trials)
