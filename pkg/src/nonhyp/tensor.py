"""Bivariate homogeneous forms, their symmetric tensors and positivity checks.

A form of degree ``d`` is stored densely: ``coeffs[j]`` multiplies
``x**(d - j) * y**j``.  The matching symmetric tensor of order ``m`` keeps one
entry per index multiset, ``b[j] = coeffs[j] / C(m, j)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, pi
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

GRID_POINTS = 4096
REFINE_MINIMA = 8
_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True)
class HomogeneousPolynomial:
    degree: int
    coeffs: tuple[float, ...]

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        coeffs = tuple(float(c) for c in self.coeffs)
        if len(coeffs) != self.degree + 1:
            raise ValueError(
                f"degree {self.degree} needs {self.degree + 1} coefficients, got {len(coeffs)}"
            )
        if not all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def from_terms(cls, terms: Iterable[Sequence[float]]) -> "HomogeneousPolynomial":
        """Build from ``(deg_x, deg_y, coeff)`` triples sharing one total degree."""
        terms = [(int(i), int(j), float(c)) for i, j, c in terms]
        if not terms:
            raise ValueError("need at least one term")
        degrees = {i + j for i, j, _ in terms}
        if len(degrees) != 1:
            raise ValueError(f"terms mix total degrees {sorted(degrees)}")
        d = degrees.pop()
        coeffs = [0.0] * (d + 1)
        for i, j, c in terms:
            if i < 0 or j < 0:
                raise ValueError("exponents must be non-negative")
            coeffs[j] += c
        return cls(d, tuple(coeffs))

    def terms(self) -> list[tuple[int, int, float]]:
        return [(self.degree - j, j, c) for j, c in enumerate(self.coeffs) if c != 0.0]

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape)
        d = self.degree
        # repeated products rather than pow, so (-x)^3 == -(x^3) exactly
        xp, yp = [np.ones_like(x)], [np.ones_like(y)]
        for _ in range(d):
            xp.append(xp[-1] * x)
            yp.append(yp[-1] * y)
        for j, c in enumerate(self.coeffs):
            if c != 0.0:
                out = out + c * xp[d - j] * yp[j]
        return out if out.ndim else float(out)

    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coeffs)

    def abs_sum(self) -> float:
        return float(sum(abs(c) for c in self.coeffs))


def partial_derivative(p: HomogeneousPolynomial, var: str) -> HomogeneousPolynomial:
    if p.degree == 0:
        raise ValueError("cannot differentiate a degree-0 form")
    d = p.degree
    if var == "x":
        # d/dx of c x^(d-j) y^j -> (d-j) c x^(d-1-j) y^j
        coeffs = [(d - j) * p.coeffs[j] for j in range(d)]
    elif var == "y":
        coeffs = [(j + 1) * p.coeffs[j + 1] for j in range(d)]
    else:
        raise ValueError(f"var must be 'x' or 'y', got {var!r}")
    return HomogeneousPolynomial(d - 1, tuple(coeffs))


def linear_combine(
    a: float, p: HomogeneousPolynomial, b: float, q: HomogeneousPolynomial
) -> HomogeneousPolynomial:
    if p.degree != q.degree:
        raise ValueError(f"degree mismatch: {p.degree} vs {q.degree}")
    return HomogeneousPolynomial(
        p.degree, tuple(a * u + b * v for u, v in zip(p.coeffs, q.coeffs))
    )


@dataclass(frozen=True)
class SymmetricTensor:
    order: int
    entries: tuple[float, ...]

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be non-negative")
        entries = tuple(float(e) for e in self.entries)
        if len(entries) != self.order + 1:
            raise ValueError(
                f"order {self.order} tensor needs {self.order + 1} entries, got {len(entries)}"
            )
        object.__setattr__(self, "entries", entries)

    @property
    def dim(self) -> int:
        return 2

    def polynomial(self) -> HomogeneousPolynomial:
        m = self.order
        return HomogeneousPolynomial(m, tuple(comb(m, j) * b for j, b in enumerate(self.entries)))

    def matrix(self) -> np.ndarray:
        """Full 2x2 array of an order-2 tensor."""
        if self.order != 2:
            raise ValueError("matrix view only exists for order 2")
        b0, b1, b2 = self.entries
        return np.array([[b0, b1], [b1, b2]])

    def full(self) -> np.ndarray:
        """All 2**m entries as an array of shape (2,)*m."""
        m = self.order
        out = np.empty((2,) * m)
        for idx in np.ndindex(*out.shape):
            out[idx] = self.entries[sum(idx)]
        return out


def symmetrize(raw, order: int | None = None) -> SymmetricTensor:
    """Symmetric tensor of a form.

    ``raw`` is a HomogeneousPolynomial, a SymmetricTensor (returned as is), or
    an array with 2**m entries indexed over all index tuples.
    """
    if isinstance(raw, SymmetricTensor):
        if order is not None and order != raw.order:
            raise ValueError(f"declared order {order} but tensor has order {raw.order}")
        return raw
    if isinstance(raw, HomogeneousPolynomial):
        m = raw.degree
        if order is not None and order != m:
            raise ValueError(f"declared order {order} but form has degree {m}")
        return SymmetricTensor(m, tuple(c / comb(m, j) for j, c in enumerate(raw.coeffs)))
    arr = np.asarray(raw, dtype=float)
    if order is None:
        order = int(round(np.log2(arr.size))) if arr.size > 1 else 0
    if arr.size != 2**order:
        raise ValueError(f"order {order} needs {2 ** order} raw entries, got {arr.size}")
    if order < 1:
        raise ValueError("order must be at least 1")
    arr = arr.reshape((2,) * order)
    sums = [0.0] * (order + 1)
    for idx in np.ndindex(*arr.shape):
        sums[sum(idx)] += float(arr[idx])
    return SymmetricTensor(order, tuple(c / comb(order, j) for j, c in enumerate(sums)))


def evaluate(T: SymmetricTensor, v) -> float | np.ndarray:
    v = np.asarray(v, dtype=float)
    return T.polynomial()(v[..., 0], v[..., 1])


@dataclass(frozen=True)
class PDReport:
    """Enclosure of the minimum of a form over the unit circle.

    ``perturb_margin`` is one admissible size of entrywise perturbation that
    keeps the tensor positive definite; it is a witness, not a tight value.
    """

    is_pd: bool
    z_min_lower: float
    z_min_upper: float
    argmin_angle: float
    perturb_margin: float
    order: int = 0

    @property
    def width(self) -> float:
        return self.z_min_upper - self.z_min_lower


def _circle_values(coeffs: np.ndarray, theta: np.ndarray):
    """Form value and angular derivative at (cos t, sin t)."""
    m = len(coeffs) - 1
    c, s = np.cos(theta), np.sin(theta)
    f = np.zeros_like(theta)
    df = np.zeros_like(theta)
    for j, a in enumerate(coeffs):
        if a == 0.0:
            continue
        f += a * c ** (m - j) * s**j
        # d/dt c^(m-j) s^j = j c^(m-j+1) s^(j-1) - (m-j) c^(m-j-1) s^(j+1)
        if j > 0:
            df += a * j * c ** (m - j + 1) * s ** (j - 1)
        if j < m:
            df -= a * (m - j) * c ** (m - j - 1) * s ** (j + 1)
    return f, df


def circle_min(coeffs: Sequence[float], tol: float = 1e-9) -> tuple[float, float, float]:
    """Certified enclosure (lower, upper, argmin angle) of min over the unit circle.

    Grid search plus golden-section polish gives the upper bound; a
    branch-and-bound over angle cells, using the second-derivative bound
    m**2 * sum|c|, gives a lower bound within ``tol`` of it.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = np.asarray(coeffs, dtype=float)
    m = len(a) - 1
    total = float(np.abs(a).sum())
    if m == 0 or total == 0.0:
        val = float(a[0]) if m == 0 else 0.0
        return val, val, 0.0
    slack = 16 * (m + 4) * _EPS * total
    curv = m * m * total

    h = 2 * pi / GRID_POINTS
    grid = np.arange(GRID_POINTS) * h
    fg, _ = _circle_values(a, grid)
    best_i = int(np.argmin(fg))
    best, best_t = float(fg[best_i]), float(grid[best_i])

    is_min = (fg <= np.roll(fg, 1)) & (fg <= np.roll(fg, -1))
    cand = np.flatnonzero(is_min)
    cand = cand[np.argsort(fg[cand], kind="stable")][:REFINE_MINIMA]
    fun = lambda t: float(_circle_values(a, np.array([t]))[0][0])
    for i in cand:
        t0 = grid[i]
        try:
            res = minimize_scalar(fun, bracket=(t0 - h, t0, t0 + h), method="golden", tol=1e-12)
        except ValueError:
            continue
        if res.fun < best:
            best, best_t = float(res.fun), float(res.x) % (2 * pi)

    upper = best + slack
    centers = grid + h / 2
    r = h / 2
    lowest_pruned = np.inf
    for _ in range(80):
        f, df = _circle_values(a, centers)
        i = int(np.argmin(f))
        if f[i] + slack < upper:
            upper = float(f[i]) + slack
            if f[i] < best:
                best, best_t = float(f[i]), float(centers[i]) % (2 * pi)
        lb = f - np.abs(df) * r - 0.5 * curv * r * r - slack
        keep = lb < upper - tol
        if (~keep).any():
            lowest_pruned = min(lowest_pruned, float(lb[~keep].min()))
        if not keep.any():
            break
        centers = centers[keep]
        centers = np.concatenate([centers - r / 2, centers + r / 2])
        r /= 2
    else:
        lowest_pruned = min(lowest_pruned, float(lb[keep].min()))
    return lowest_pruned, upper, best_t


def circle_max(coeffs: Sequence[float], tol: float = 1e-9) -> float:
    """Certified upper bound on the max of a form over the unit circle."""
    lo, _, _ = circle_min([-c for c in coeffs], tol)
    return -lo


def z_min(T: SymmetricTensor, tol: float = 1e-9) -> PDReport:
    if T.order % 2 or T.order == 0:
        raise ValueError(f"positive definiteness needs an even positive order, got {T.order}")
    lo, hi, theta = circle_min(T.polynomial().coeffs, tol)
    return PDReport(
        is_pd=lo > 0,
        z_min_lower=lo,
        z_min_upper=hi,
        argmin_angle=theta,
        perturb_margin=lo / 2 ** (T.order / 2),
        order=T.order,
    )


def perturbation_margin(T: SymmetricTensor, tol: float = 1e-9) -> float:
    rep = z_min(T, tol)
    if not rep.is_pd:
        raise ValueError("tensor is not positive definite")
    return rep.perturb_margin
