import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonhyp.planar_map import (
    MapSpec,
    SpecError,
    canonical_spec,
    check_hypotheses,
    derive_tensors,
    eval_DF,
    eval_F,
    eval_F_inverse,
    inverse_deviation,
    validate_spec,
)
from nonhyp.tensor import HomogeneousPolynomial

from conftest import quartic_x
from oracles import CANONICAL_MATRICES, Z_MIN_CANONICAL

P = HomogeneousPolynomial(3, (1.0, 0.0, 1.0, 0.0))
Q = HomogeneousPolynomial(3, (0.0, 1.0, 0.0, 1.0))


def test_canonical_degrees(canonical):
    assert (canonical.k, canonical.k_prime) == (1, 1)


@pytest.mark.parametrize(
    "kwargs, message",
    [
        (dict(X=(HomogeneousPolynomial(3, (0.1, 0, 0, 0)),)), "X not higher order"),
        (dict(Y=(HomogeneousPolynomial(2, (0.1, 0, 0)),)), "Y not higher order"),
    ],
)
def test_validate_rejects_low_order_terms(kwargs, message):
    with pytest.raises(SpecError, match=message):
        validate_spec(MapSpec(P, Q, **kwargs))


def test_validate_rejects_even_degree():
    with pytest.raises(SpecError, match="deg P must be odd"):
        validate_spec(MapSpec(HomogeneousPolynomial(4, (1, 0, 0, 0, 0)), Q))


def test_validate_rejects_linear_part():
    with pytest.raises(SpecError, match="at least 3"):
        validate_spec(MapSpec(HomogeneousPolynomial(1, (1, 0)), Q))


def test_nan_coefficients_rejected():
    with pytest.raises(ValueError):
        HomogeneousPolynomial(3, (np.nan, 0, 0, 0))


@pytest.mark.parametrize(
    "p, expected",
    [((0.0, 0.0), (0.0, 0.0)), ((0.3, 0.0), (0.273, 0.0)), ((0.0, 0.3), (0.0, 0.327))],
)
def test_eval_F_examples(canonical, p, expected):
    assert eval_F(canonical, p) == pytest.approx(expected, abs=1e-15)


def test_eval_DF_examples(canonical):
    assert eval_DF(canonical, (0.0, 0.0)) == (1.0, 0.0, 0.0, 1.0)
    assert eval_DF(canonical, (0.1, 0.1)) == pytest.approx((0.96, -0.02, 0.02, 1.04), abs=1e-15)


@st.composite
def specs(draw):
    c = st.floats(-2, 2, allow_nan=False)
    k = draw(st.sampled_from([3, 5]))
    Pc = draw(st.lists(c, min_size=k + 1, max_size=k + 1))
    Qc = draw(st.lists(c, min_size=k + 1, max_size=k + 1))
    X = HomogeneousPolynomial(k + 1, tuple(draw(st.lists(c, min_size=k + 2, max_size=k + 2))))
    Y = HomogeneousPolynomial(k + 2, tuple(draw(st.lists(c, min_size=k + 3, max_size=k + 3))))
    return validate_spec(MapSpec(HomogeneousPolynomial(k, tuple(Pc)), HomogeneousPolynomial(k, tuple(Qc)), (X,), (Y,)))


point = st.floats(-0.5, 0.5, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(specs(), point, point)
def test_jacobian_matches_finite_difference(s, x, y):
    h = 1e-6
    J = np.array(eval_DF(s, (x, y))).reshape(2, 2)
    fd = np.empty((2, 2))
    for col, (dx, dy) in enumerate(((h, 0.0), (0.0, h))):
        fp = np.array(eval_F(s, (x + dx, y + dy)))
        fm = np.array(eval_F(s, (x - dx, y - dy)))
        fd[:, col] = (fp - fm) / (2 * h)
    assert np.allclose(J, fd, atol=1e-6, rtol=0)


@given(specs())
def test_origin_is_fixed(s):
    assert eval_F(s, (0.0, 0.0)) == (0.0, 0.0)
    assert eval_DF(s, (0.0, 0.0)) == (1.0, 0.0, 0.0, 1.0)


@given(point, point)
def test_odd_symmetry(x, y):
    s = canonical_spec()
    fx, fy = eval_F(s, (x, y))
    assert eval_F(s, (-x, -y)) == (-fx, -fy)


def test_inverse_examples(canonical):
    assert eval_F_inverse(canonical, (0.0, 0.0)) == (0.0, 0.0)
    assert eval_F_inverse(canonical, eval_F(canonical, (0.2, 0.1))) == pytest.approx((0.2, 0.1), abs=1e-10)
    p = eval_F_inverse(canonical, (0.273, 0.0))
    assert p == pytest.approx((0.3, 0.0), abs=1e-10)
    assert np.hypot(*(np.array(eval_F(canonical, p)) - (0.273, 0.0))) <= 1e-10


def test_inverse_round_trip_in_ball(canonical, cert):
    rng = np.random.default_rng(5)
    r = np.sqrt(2) * cert.delta
    pts = rng.uniform(-r, r, size=(4000, 2))
    pts = pts[np.hypot(pts[:, 0], pts[:, 1]) <= r][:1000]
    assert len(pts) == 1000
    for p in pts:
        assert eval_F_inverse(canonical, eval_F(canonical, p)) == pytest.approx(tuple(p), abs=1e-9)


def test_inverse_reports_non_convergence(canonical):
    with pytest.raises(ArithmeticError, match="did not converge"):
        inverse_deviation(canonical, 0.3, 0.3, max_iter=1)


def test_canonical_tensors(canonical):
    ts = derive_tensors(canonical)
    for name, T in ts.items():
        assert np.array_equal(T.matrix(), CANONICAL_MATRICES[name]), name


def test_pure_power_family_tensor_a():
    s = validate_spec(MapSpec(HomogeneousPolynomial(3, (1, 0, 0, 0)), HomogeneousPolynomial(3, (0, 0, 0, 1))))
    assert np.array_equal(derive_tensors(s).A.matrix(), [[3, 0], [0, 0]])


@given(specs())
def test_tensor_orders(s):
    ts = derive_tensors(s)
    k2, kp2 = 2 * s.k, 2 * s.k_prime
    assert [T.order for _, T in ts.items()] == [k2, kp2, k2, k2, kp2, kp2]


def test_hypotheses_canonical(canonical):
    rep = check_hypotheses(canonical)
    assert rep.overall
    for name, r in rep.reports.items():
        assert r.z_min_lower <= Z_MIN_CANONICAL[name] <= r.z_min_upper


def test_hypotheses_pure_powers():
    s = validate_spec(MapSpec(HomogeneousPolynomial(3, (1, 0, 0, 0)), HomogeneousPolynomial(3, (0, 0, 0, 1))))
    rep = check_hypotheses(s)
    assert not rep.overall and "A" in rep.failing
    assert rep.reports["A"].z_min_lower <= 0.0 <= rep.reports["A"].z_min_upper


def test_hypotheses_indefinite():
    s = validate_spec(MapSpec(P, HomogeneousPolynomial(3, (0, -3, 0, 1))))
    rep = check_hypotheses(s)
    assert not rep.overall and "B" in rep.failing
    assert rep.reports["B"].z_min_upper < 0


def test_perturbed_spec_keeps_hypotheses():
    assert check_hypotheses(canonical_spec(Y=[quartic_x()])).overall
