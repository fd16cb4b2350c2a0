import numpy as np
import pytest

from nonhyp.cone import certify
from nonhyp.manifold import (
    BracketError,
    Outcome,
    classify_point,
    crossing_arcs,
    decay_rate,
    stable_graph,
    uniqueness_check,
    unstable_graph,
    verify_graph,
    zone_bisect,
)
from nonhyp.planar_map import canonical_spec, eval_F

from conftest import quartic_x

TOL = 1e-10
BUDGET = 4000  # default 2000 steps, doubled once


def perturbed_step(x, y):
    """The perturbed map written out by hand, independent of the package."""
    return x - x * x * x - x * y * y, y + y * y * y + x * x * y + 0.1 * x * x * x * x


def exits(x, y, below):
    for _ in range(BUDGET):
        x, y = perturbed_step(x, y)
        if abs(y) > abs(x):
            return (y < 0) == below
    return False


def edge(x, below, tol):
    """Plain bisection for the edge of the set of ordinates exiting below (or above)."""
    lo, hi = -abs(x), abs(x)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if exits(x, mid, below) == below:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- classification ------------------------------------------------------


def test_axis_point_converges(canonical, cert):
    c = classify_point(canonical, cert, (0.3, 0.0), max_iter=100_000, conv_tol=1e-2)
    assert c.outcome == Outcome.CONVERGED


def test_axis_point_undecided_with_small_budget(canonical, cert):
    c = classify_point(canonical, cert, (0.3, 0.0), max_iter=50)
    assert c.outcome == Outcome.UNDECIDED and c.iterations_used == 100


def test_diagonal_points_exit_in_one_step(canonical, cert):
    up = classify_point(canonical, cert, (0.3, 0.3))
    down = classify_point(canonical, cert, (0.3, -0.3))
    assert (up.outcome, up.iterations_used) == (Outcome.EXIT_ABOVE, 1)
    assert (down.outcome, down.iterations_used) == (Outcome.EXIT_BELOW, 1)
    fx, fy = eval_F(canonical, (0.3, 0.3))
    assert fx == pytest.approx(0.246) and fy == pytest.approx(0.354)


def test_classify_outside_cone(canonical, cert):
    with pytest.raises(ValueError):
        classify_point(canonical, cert, (0.1, 0.2))
    with pytest.raises(ValueError):
        classify_point(canonical, cert, (0.5, 0.0))


def test_bracket_must_straddle():
    with pytest.raises(BracketError):
        zone_bisect(lambda t: (Outcome.EXIT_ABOVE, 1), 0.0, 1.0, 1e-3)


# -- canonical graphs ----------------------------------------------------


@pytest.mark.parametrize("which", [0, 1])
def test_canonical_graphs_flat(graphs, cert, which):
    g = graphs[which]
    assert g.xs.size == 401
    assert g.xs[0] == -cert.delta and g.xs[-1] == cert.delta
    assert np.all(np.diff(g.xs) > 0)
    assert np.max(np.abs(g.phis)) <= 1e-9
    assert g.phis[200] == 0.0
    assert g.lipschitz_estimate < cert.alpha


@pytest.mark.parametrize("which", [0, 1])
def test_canonical_graphs_verify(canonical, graphs, cert, which):
    rep = verify_graph(canonical, graphs[which], cert)
    assert rep.ok, rep
    assert rep.invariance_defect <= 1e-15


def test_convergence_budget_matches_asymptotics(canonical, cert):
    # on the axis x -> x - x^3 has 1/x_k^2 = 1/x0^2 + 2k + O(log k), so reaching
    # 1e-6 / sqrt(2) takes ~ 1e12 steps; the bound uses the slowest rate in the cone
    rep = verify_graph(canonical, stable_graph(canonical, cert, n_samples=11), cert)
    k_needed = 0.5 * ((np.sqrt(2) / 1e-6) ** 2 - cert.delta**-2)
    c = decay_rate(canonical, cert)
    assert k_needed <= rep.tail_steps_bound <= k_needed / c * 1.001
    assert rep.tail_steps_bound <= rep.convergence_budget


def test_decay_rate_positive(canonical, cert):
    assert decay_rate(canonical, cert) > 0
    assert decay_rate(canonical, cert, "unstable") > 0


# -- perturbed graphs ----------------------------------------------------


def test_perturbed_stable_graph_bends(graphs_perturbed):
    gs, _ = graphs_perturbed
    nonzero = gs.xs != 0
    assert np.all(gs.phis[nonzero] != 0)
    assert np.all(np.abs(gs.phis) <= np.abs(gs.xs))


def test_perturbed_graphs_verify(perturbed, graphs_perturbed, cert_perturbed):
    for g in graphs_perturbed:
        rep = verify_graph(perturbed, g, cert_perturbed)
        assert rep.ok, rep
        assert rep.lipschitz_estimate < rep.lipschitz_limit


def test_perturbed_even_symmetry(perturbed, cert_perturbed, graphs_perturbed):
    # (x, y) -> (-x, y) maps the perturbed map to itself, so phi^s is even
    gs, _ = graphs_perturbed
    assert np.allclose(gs.phis, gs.phis[::-1], atol=2 * TOL)


def test_odd_symmetry_of_mirrored_grid(canonical, cert):
    grid = np.linspace(0.01, cert.delta, 7)
    a = stable_graph(canonical, cert, grid=grid)
    b = stable_graph(canonical, cert, grid=-grid[::-1])
    assert np.array_equal(a.phis, -b.phis[::-1])


def test_perturbed_graph_matches_hand_bisection(graphs_perturbed):
    gs, _ = graphs_perturbed
    for k in range(25, 401, 50):
        x = gs.xs[k]
        lower = edge(x, True, TOL / 2)
        upper = edge(x, False, TOL / 2)
        assert abs(0.5 * (lower + upper) - gs.phis[k]) <= 2 * TOL
        assert upper - lower == pytest.approx(gs.bracket_width[k], abs=2 * TOL)


def test_all_pairs_lipschitz(graphs_perturbed, cert_perturbed):
    gs, _ = graphs_perturbed
    dx = gs.xs[:, None] - gs.xs[None, :]
    dy = gs.phis[:, None] - gs.phis[None, :]
    off = dx != 0
    assert np.max(np.abs(dy[off] / dx[off])) < cert_perturbed.alpha


def test_unstable_graph_bends_with_x_perturbation():
    s = canonical_spec(X=[quartic_x().__class__(4, (0.0, 0.0, 0.0, 0.0, 0.1))])
    c = certify(s)
    gu = unstable_graph(s, c, n_samples=21)
    assert np.any(np.abs(gu.phis) > 1e-6)
    assert np.all(np.abs(gu.phis) <= np.abs(gu.xs))


def test_graph_csv(tmp_path, graphs):
    path = tmp_path / "g.csv"
    graphs[0].to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,phi,iterations,bracket_width"
    assert len(lines) == 402
    row = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.array_equal(row[:, 0], graphs[0].xs)


# -- uniqueness along crossing arcs --------------------------------------


def test_crossing_arcs_are_steep_and_inside(cert):
    arcs = crossing_arcs(cert, 100)
    x0, y0, x1, y1 = arcs.T
    assert np.all(np.abs(y0) == np.abs(x0)) and np.all(np.abs(y1) == np.abs(x1))
    assert np.all(y0 < 0) and np.all(y1 > 0)
    slope = np.abs((y1 - y0) / (x1 - x0))
    assert np.all(slope >= cert.alpha)
    assert np.all(np.maximum(np.abs(x0), np.abs(x1)) <= cert.delta)


def test_uniqueness_two_bisections_agree(canonical, cert):
    gaps = uniqueness_check(canonical, cert, 100, TOL)
    assert gaps.size == 100 and gaps.max() <= 2 * TOL
