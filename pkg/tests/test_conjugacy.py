import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonhyp.conjugacy import (
    HORIZONTAL,
    MAP,
    PRODUCT,
    VERTICAL,
    CoordinateError,
    VerticalityError,
    chart_point,
    conjugacy_H,
    conjugacy_grid,
    foliation_coords,
    homotopy_arc,
    induced_factor_maps,
    verify_leaves,
)
from nonhyp.manifold import Outcome, classify_point
from nonhyp.planar_map import eval_F


@pytest.fixture(scope="module")
def factors(canonical, graphs):
    return induced_factor_maps(canonical, *graphs)


# -- factor maps ---------------------------------------------------------


def test_factor_maps_on_axes(factors):
    F1, F2 = factors
    assert F1(0.3) == pytest.approx(0.273, abs=1e-15)
    assert F2(0.3) == pytest.approx(0.327, abs=1e-15)
    xs = np.linspace(-0.3, 0.3, 13)
    assert np.allclose(F1(xs), xs - xs**3, atol=1e-16, rtol=0)
    assert np.allclose(F2.inverse(xs + xs**3), xs, atol=1e-15, rtol=0)


def test_factor_map_domain(factors, cert):
    F1, _ = factors
    with pytest.raises(ValueError):
        F1(1.01 * cert.delta)


def test_factor_inverse_round_trip(factors):
    F1, F2 = factors
    for u in (-0.2, -0.01, 0.0, 0.05, 0.25):
        assert F1(F1.inverse(u)) == pytest.approx(u, abs=1e-15)
        assert F2.inverse(F2(u)) == pytest.approx(u, abs=1e-15)
    with pytest.raises(ValueError, match="outside"):
        F1.inverse(0.3)


@settings(max_examples=30)
@given(st.floats(1e-3, 0.3))
def test_factor_orbits_decrease_to_zero(u):
    from nonhyp.planar_map import canonical_spec
    from nonhyp.manifold import ManifoldGraph
    from nonhyp.conjugacy import FactorMap

    flat = ManifoldGraph("stable", np.array([-0.32, 0.0, 0.32]), np.zeros(3), 1e-10, 0.0)
    s = canonical_spec()
    F1 = FactorMap(HORIZONTAL, flat, s, 0.32)
    F2 = FactorMap(VERTICAL, ManifoldGraph("unstable", flat.xs, flat.phis, 1e-10, 0.0), s, 0.32)
    seq1 = F1.iterate(np.full(6, u), np.array([0, 1, 10, 100, 1000, 100_000]))
    seq2 = F2.iterate(np.full(6, u), np.array([0, 1, 10, 100, 1000, 100_000]))
    for seq in (seq1, seq2):
        assert np.all(np.diff(seq) < 0) and np.all(seq > 0)
        assert seq[-1] < 3e-3


def test_perturbed_factor_maps(perturbed, graphs_perturbed):
    F1, F2 = induced_factor_maps(perturbed, *graphs_perturbed)
    gs = graphs_perturbed[0]
    for x in (0.05, 0.15, 0.3):
        fx, _ = eval_F(perturbed, (x, float(gs(x))))
        assert F1(x) == pytest.approx(fx, abs=1e-12)
        assert 0 < F1(x) < x
        assert F2(x) > x


# -- homotopy leaves -----------------------------------------------------


def test_identity_leaf_is_vertical(canonical):
    arc = homotopy_arc(canonical, 0.1, np.linspace(-0.1, 0.1, 11), 0.0)
    assert np.all(np.isinf(arc.slopes))
    assert np.array_equal(arc.points[:, 0], np.full(11, 0.1))


def test_image_leaf_is_vertical(canonical):
    arc = homotopy_arc(canonical, 0.1, np.linspace(-0.1, 0.1, 11), 1.0)
    assert arc.min_transversality > 1
    assert np.allclose(arc.points, [eval_F(canonical, (0.1, y)) for y in np.linspace(-0.1, 0.1, 11)])


def test_half_leaf_slope_formula(canonical):
    ys = np.linspace(-0.1, 0.1, 21)
    ys = ys[ys != 0]
    arc = homotopy_arc(canonical, 0.1, ys, 0.5)
    expected = (3 * ys**2 + 0.01 + 2) / (0.2 * ys)
    assert np.allclose(np.abs(arc.slopes), np.abs(expected), rtol=1e-12)
    assert arc.min_transversality > 1


def test_horizontal_leaf(canonical):
    arc = homotopy_arc(canonical, 0.08, np.linspace(-0.1, 0.1, 11), 0.5, HORIZONTAL)
    assert arc.min_transversality > 1


def test_canonical_leaves_vertical_everywhere(canonical):
    # 1 + 3y^2 + x^2 > 2|xy|, so the canonical leaves never tip over
    arc = homotopy_arc(canonical, 0.9, np.linspace(-0.9, 0.9, 11), 1.0)
    assert arc.min_transversality > 1


def test_verticality_failure_far_out():
    from nonhyp.planar_map import canonical_spec
    from nonhyp.tensor import HomogeneousPolynomial

    s = canonical_spec(X=[HomogeneousPolynomial(4, (0.0, 0.0, 0.0, 5.0, 0.0))])  # 5 x y^3
    homotopy_arc(s, 0.05, np.linspace(-0.05, 0.05, 11), 1.0)
    with pytest.raises(VerticalityError):
        homotopy_arc(s, 0.9, np.linspace(-0.9, 0.9, 11), 1.0)


def test_leaves_transverse(chart, chart_perturbed):
    for c in (chart, chart_perturbed):
        rep = verify_leaves(c)
        assert rep.ok, rep


# -- charts --------------------------------------------------------------


def test_canonical_chart(chart, cert):
    assert chart.kind == MAP
    assert chart.x0 == cert.delta / 2
    assert cert.delta / 4 <= chart.y_u <= cert.delta / 2
    assert chart.m_hat == 41
    assert chart.matching_residual < 1e-9


def test_chart_endpoint_matching(chart, canonical):
    e = chart.endpoints
    for a, b in (("p2", "q2"), ("p2_bar", "q1"), ("p1", "q2_bar"), ("p1_bar", "q1_bar")):
        p = e[a]
        for _ in range(chart.m_hat):
            p = eval_F(canonical, p)
        assert p == pytest.approx(tuple(e[b]), abs=1e-9)


def test_chart_point_symmetry(chart):
    e = chart.endpoints
    assert e["p1_bar"] == pytest.approx((-e["p2"].x, -e["p2"].y), abs=1e-14)
    assert e["p2_bar"] == pytest.approx((-e["p1"].x, -e["p1"].y), abs=1e-14)


def test_endpoints_straddle_stable_set(chart, canonical, cert):
    assert classify_point(canonical, cert, chart.endpoints["p1"]).outcome == Outcome.EXIT_BELOW
    assert classify_point(canonical, cert, chart.endpoints["p2"]).outcome == Outcome.EXIT_ABOVE


def test_perturbed_chart(chart_perturbed):
    assert chart_perturbed.m_hat == 43
    assert chart_perturbed.matching_residual < 1e-9


def test_boundary_closes(chart):
    lines = chart.boundary()
    assert len(lines) == 8
    e = chart.endpoints
    assert tuple(lines[4][0]) == pytest.approx(tuple(e["p2"]))
    assert tuple(lines[4][-1]) == pytest.approx(tuple(e["q2"]))


# -- coordinates ---------------------------------------------------------


def test_point_on_fundamental_segment(chart, canonical):
    y = 0.5 * (chart.vl[0] + chart.vl[1]) + 0.3 * (chart.vl[1] - chart.vl[0])
    c = foliation_coords(chart, canonical, (chart.x0, y))
    assert (c.i, c.t) == (0, 0.0)


def test_point_on_image_segment(chart, canonical):
    y = chart.vl[0] + 0.8 * (chart.vl[1] - chart.vl[0])
    c = foliation_coords(chart, canonical, eval_F(canonical, (chart.x0, y)))
    assert (c.i, c.t) == (1, 0.0)


def random_points(chart, n, seed):
    rng = np.random.default_rng(seed)
    pts = np.column_stack([rng.uniform(-chart.x0, chart.x0, n), rng.uniform(-chart.y_u, chart.y_u, n)])
    return pts[(np.abs(pts[:, 1] - chart.gs(pts[:, 0])) > 1e-3) & (np.abs(pts[:, 0] - chart.gu(pts[:, 1])) > 1e-3)]


def test_reconstruction_round_trip(chart_perturbed, perturbed):
    done = 0
    for p in random_points(chart_perturbed, 120, 3):
        try:
            c = foliation_coords(chart_perturbed, perturbed, p)
        except CoordinateError:
            continue
        q = chart_point(chart_perturbed, c)
        assert q == pytest.approx(tuple(p), abs=1e-8)
        done += 1
    assert done > 50


def test_coordinates_step_under_the_map(chart_perturbed, perturbed):
    done = 0
    for p in random_points(chart_perturbed, 80, 4):
        try:
            c = foliation_coords(chart_perturbed, perturbed, p)
            cf = foliation_coords(chart_perturbed, perturbed, eval_F(perturbed, p))
        except CoordinateError:
            continue
        step = c.step()
        assert (cf.i, cf.j, cf.side_v, cf.side_h) == (step.i, step.j, step.side_v, step.side_h)
        assert cf.t == pytest.approx(step.t, abs=1e-9) and cf.r == pytest.approx(step.r, abs=1e-9)
        done += 1
    assert done > 30


def test_outside_points_rejected(chart, canonical):
    with pytest.raises(CoordinateError):
        foliation_coords(chart, canonical, (0.95 * chart.x0, 0.95 * chart.y_u))


def test_coordinates_need_map_chart(product_perturbed, perturbed):
    with pytest.raises(ValueError):
        foliation_coords(product_perturbed, perturbed, (0.01, 0.01))


# -- conjugacy -----------------------------------------------------------


def test_fixed_point_maps_to_itself(chart_perturbed, product_perturbed):
    assert conjugacy_H(chart_perturbed, product_perturbed, (0.0, 0.0)) == (0.0, 0.0)


def test_invariant_sets_map_to_axes(chart_perturbed, product_perturbed):
    gs, gu = chart_perturbed.gs, chart_perturbed.gu
    for x in (-0.12, -0.05, 0.03, 0.1):
        h = conjugacy_H(chart_perturbed, product_perturbed, (x, float(gs(x))))
        assert h == pytest.approx((x, 0.0), abs=1e-9)
    for y in (-0.06, -0.02, 0.04):
        h = conjugacy_H(chart_perturbed, product_perturbed, (float(gu(y)), y))
        assert h == pytest.approx((0.0, y), abs=1e-9)


def test_product_chart(product_perturbed, chart_perturbed):
    assert product_perturbed.kind == PRODUCT
    assert product_perturbed.m_hat == chart_perturbed.m_hat
    assert product_perturbed.matching_residual < 1e-12


def test_self_conjugacy_small_grid(chart):
    grid = conjugacy_grid(chart, chart, n=16)
    assert len(grid.rows) > 100
    assert grid.identity_error <= 1e-8


def test_product_conjugacy_small_grid(chart_perturbed, product_perturbed, tmp_path):
    grid = conjugacy_grid(chart_perturbed, product_perturbed, n=16)
    assert grid.defect_points > 100
    assert grid.max_defect <= 1e-6
    assert grid.injective
    path = tmp_path / "c.csv"
    grid.to_csv(path)
    assert path.read_text().splitlines()[0] == "x,y,Hx,Hy,defect"
