"""The planar map F(x, y) = (x - P + X, y + Q + Y) with a degenerate fixed point."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .tensor import (
    HomogeneousPolynomial,
    PDReport,
    SymmetricTensor,
    linear_combine,
    partial_derivative,
    symmetrize,
    z_min,
)


class Point(NamedTuple):
    x: float
    y: float


class Jacobian(NamedTuple):
    a11: float
    a12: float
    a21: float
    a22: float

    def matrix(self) -> np.ndarray:
        return np.array([[self.a11, self.a12], [self.a21, self.a22]])


class SpecError(ValueError):
    pass


def _sum_forms(forms: Sequence[HomogeneousPolynomial], x, y):
    out = 0.0
    for f in forms:
        out = out + f(x, y)
    return out


@dataclass(frozen=True)
class MapSpec:
    """Polynomial data of the map; X and Y are lists of higher-order homogeneous terms."""

    P: HomogeneousPolynomial
    Q: HomogeneousPolynomial
    X: tuple[HomogeneousPolynomial, ...] = ()
    Y: tuple[HomogeneousPolynomial, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "X", tuple(self.X))
        object.__setattr__(self, "Y", tuple(self.Y))

    @property
    def k(self) -> int:
        return (self.P.degree - 1) // 2

    @property
    def k_prime(self) -> int:
        return (self.Q.degree - 1) // 2

    @property
    def max_degree(self) -> int:
        return max([self.P.degree, self.Q.degree] + [t.degree for t in self.X + self.Y])

    @cached_property
    def _derivs(self):
        d = lambda forms, v: tuple(partial_derivative(f, v) for f in forms)
        return {
            "Px": partial_derivative(self.P, "x"),
            "Py": partial_derivative(self.P, "y"),
            "Qx": partial_derivative(self.Q, "x"),
            "Qy": partial_derivative(self.Q, "y"),
            "Xx": d(self.X, "x"),
            "Xy": d(self.X, "y"),
            "Yx": d(self.Y, "x"),
            "Yy": d(self.Y, "y"),
        }

    def deviation(self, x, y):
        """F(p) - p, computed without forming p + small."""
        return (-self.P(x, y) + _sum_forms(self.X, x, y), self.Q(x, y) + _sum_forms(self.Y, x, y))

    def jacobian_deviation(self, x, y):
        """Entries of DF(p) - I."""
        d = self._derivs
        return (
            -d["Px"](x, y) + _sum_forms(d["Xx"], x, y),
            -d["Py"](x, y) + _sum_forms(d["Xy"], x, y),
            d["Qx"](x, y) + _sum_forms(d["Yx"], x, y),
            d["Qy"](x, y) + _sum_forms(d["Yy"], x, y),
        )

    def contraction_part(self, x, y):
        """P - X, the amount by which F pulls the first coordinate in."""
        return self.P(x, y) - _sum_forms(self.X, x, y)

    def expansion_part(self, x, y):
        """Q + Y, the amount by which F pushes the second coordinate out."""
        return self.Q(x, y) + _sum_forms(self.Y, x, y)

    def higher_terms(self, which: str) -> list[tuple[int, int, float]]:
        forms = self.X if which == "X" else self.Y
        return [t for f in forms for t in f.terms()]

    @cached_property
    def kernel_terms(self) -> tuple[np.ndarray, np.ndarray]:
        """Term table for the compiled kernels: exponents (6, n, 2), coefficients (6, n).

        Rows: f - x, g - y, then the four entries of DF - I.  Short rows are
        padded with zero-coefficient constant terms.
        """
        d = self._derivs
        neg = lambda fs: [(i, j, -c) for f in fs for i, j, c in f.terms()]
        pos = lambda fs: [(i, j, c) for f in fs for i, j, c in f.terms()]
        groups = [
            neg([self.P]) + pos(self.X),
            pos([self.Q]) + pos(self.Y),
            neg([d["Px"]]) + pos(d["Xx"]),
            neg([d["Py"]]) + pos(d["Xy"]),
            pos([d["Qx"]]) + pos(d["Yx"]),
            pos([d["Qy"]]) + pos(d["Yy"]),
        ]
        n = max(1, max(len(g) for g in groups))
        exps = np.zeros((6, n, 2), dtype=np.int64)
        coef = np.zeros((6, n))
        for r, g in enumerate(groups):
            for k, (i, j, c) in enumerate(g):
                exps[r, k] = i, j
                coef[r, k] = c
        return exps, coef


def validate_spec(s: MapSpec) -> MapSpec:
    for name, form in (("P", s.P), ("Q", s.Q)):
        if form.degree % 2 == 0:
            raise SpecError(f"deg {name} must be odd, got {form.degree}")
        if form.degree < 3:
            raise SpecError(f"deg {name} must be at least 3, got {form.degree}")
    for name, forms, base in (("X", s.X, s.P.degree), ("Y", s.Y, s.Q.degree)):
        for f in forms:
            if f.degree <= base:
                raise SpecError(
                    f"{name} not higher order: term of degree {f.degree} <= {base}"
                )
            if f(0.0, 0.0) != 0.0:
                raise SpecError(f"{name} must vanish at the origin")
    for f in (s.P, s.Q) + s.X + s.Y:
        if not np.all(np.isfinite(f.coeffs)):
            raise SpecError("NaN or infinite coefficient")
    return s


def canonical_spec(X=(), Y=()) -> MapSpec:
    """P = x^3 + x y^2, Q = y^3 + x^2 y, optionally with extra terms."""
    P = HomogeneousPolynomial(3, (1.0, 0.0, 1.0, 0.0))
    Q = HomogeneousPolynomial(3, (0.0, 1.0, 0.0, 1.0))
    return validate_spec(MapSpec(P, Q, tuple(X), tuple(Y)))


def eval_F(s: MapSpec, p) -> Point:
    x, y = p
    dx, dy = s.deviation(x, y)
    return Point(x + dx, y + dy)


def eval_DF(s: MapSpec, p) -> Jacobian:
    e11, e12, e21, e22 = s.jacobian_deviation(*p)
    return Jacobian(1.0 + e11, e12, e21, 1.0 + e22)


def inverse_deviation(s: MapSpec, qx, qy, tol: float = 1e-12, max_iter: int = 100):
    """d with F(q + d) = q, by Newton on G(d) = d + (F - id)(q + d).

    Works elementwise on arrays. Raises when any entry fails to converge.
    """
    qx = np.asarray(qx, dtype=float)
    qy = np.asarray(qy, dtype=float)
    dx = np.zeros(np.broadcast(qx, qy).shape)
    dy = np.zeros_like(dx)
    for it in range(max_iter):
        fx, fy = s.deviation(qx + dx, qy + dy)
        gx, gy = dx + fx, dy + fy
        e11, e12, e21, e22 = s.jacobian_deviation(qx + dx, qy + dy)
        a, b, c, d = 1.0 + e11, e12, e21, 1.0 + e22
        det = a * d - b * c
        sx = (d * gx - b * gy) / det
        sy = (a * gy - c * gx) / det
        dx = dx - sx
        dy = dy - sy
        scale = np.maximum(np.abs(qx + dx) + np.abs(qy + dy), 1e-300)
        if np.all(np.abs(sx) + np.abs(sy) <= 4 * np.finfo(float).eps * scale):
            break
    fx, fy = s.deviation(qx + dx, qy + dy)
    res = np.abs(dx + fx) + np.abs(dy + fy)
    if not np.all(np.isfinite(res)) or np.any(res > tol):
        raise ArithmeticError(
            f"inverse did not converge within {max_iter} iterations (residual {np.max(res):.3g})"
        )
    return dx, dy


def eval_F_inverse(s: MapSpec, q, tol: float = 1e-12) -> Point:
    qx, qy = q
    dx, dy = inverse_deviation(s, qx, qy, tol)
    return Point(float(qx + dx), float(qy + dy))


@dataclass(frozen=True)
class TensorSet:
    A: SymmetricTensor
    B: SymmetricTensor
    C: SymmetricTensor
    D: SymmetricTensor
    E: SymmetricTensor
    H: SymmetricTensor

    NAMES = ("A", "B", "C", "D", "E", "H")

    def items(self):
        return [(n, getattr(self, n)) for n in self.NAMES]


def derive_tensors(s: MapSpec) -> TensorSet:
    Px, Py = partial_derivative(s.P, "x"), partial_derivative(s.P, "y")
    Qx, Qy = partial_derivative(s.Q, "x"), partial_derivative(s.Q, "y")
    return TensorSet(
        A=symmetrize(Px),
        B=symmetrize(Qy),
        C=symmetrize(linear_combine(1.0, Px, 1.0, Py)),
        D=symmetrize(linear_combine(1.0, Px, -1.0, Py)),
        E=symmetrize(linear_combine(1.0, Qy, 1.0, Qx)),
        H=symmetrize(linear_combine(1.0, Qy, -1.0, Qx)),
    )


DESCRIPTIONS = {
    "A": "dP/dx",
    "B": "dQ/dy",
    "C": "dP/dx + dP/dy",
    "D": "dP/dx - dP/dy",
    "E": "dQ/dy + dQ/dx",
    "H": "dQ/dy - dQ/dx",
}


@dataclass(frozen=True)
class HypothesisReport:
    reports: dict[str, PDReport] = field(default_factory=dict)

    @property
    def overall(self) -> bool:
        return all(r.is_pd for r in self.reports.values())

    @property
    def failing(self) -> list[str]:
        return [n for n, r in self.reports.items() if not r.is_pd]


def check_hypotheses(s: MapSpec, tol: float = 1e-9) -> HypothesisReport:
    ts = derive_tensors(s)
    return HypothesisReport({name: z_min(T, tol) for name, T in ts.items()})
