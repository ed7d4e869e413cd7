import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ndtr

from atsbsde.errors import ConfigurationError
from atsbsde.model import ForwardSpec, ProblemSpec, brownian, capped_square, cubic_damped
from atsbsde.quantize import (GridPolicy, MonteCarloOptions, SpatialGrid, build_chain,
                              build_spatial_grids, increment_weights, project, transition_row)
from atsbsde.timegrid import GridKind, GridSpec, build_grid, truncation_radius


def _grid(m, eta=1.0, d=1):
    return SpatialGrid(np.zeros(d), np.full(d, eta), m)


def _pb(T=1.0, d=1):
    return ProblemSpec(T, brownian(d), cubic_damped(1, d), capped_square(3.6))


def test_spatial_grid_policy():
    g = build_grid(GridSpec(GridKind.UNIFORM, 4), _pb())
    grids = build_spatial_grids(brownian(1), g)
    assert grids[0].size == 1 and grids[0].nodes()[0, 0] == 0.0
    assert grids[4].per_axis == 9
    assert GridPolicy().x_max(1.0) == 5.0
    assert grids[4].nodes()[-1, 0] == pytest.approx(5.0)
    nodes = grids[3].nodes()[:, 0]
    assert np.allclose(nodes, -nodes[::-1])
    with pytest.raises(ConfigurationError):
        build_spatial_grids(brownian(1), g, GridPolicy(schedule=lambda i, t: 0))


def test_multi_d_node_count():
    g = _grid(2, 0.5, d=2)
    assert g.nodes().shape == (25, 2)
    assert project(g, np.zeros(2)) == g.root_index()


def test_project_examples():
    g = _grid(3, 0.5)
    nodes = g.nodes()
    for k in range(g.size):
        assert project(g, nodes[k]) == k
    assert project(g, np.array([0.25])) == 3  # midpoint of nodes 3 and 4 goes low
    assert project(g, np.array([-0.25])) == 2
    assert project(g, np.array([100.0])) == g.size - 1
    assert project(g, np.array([-100.0])) == 0


@settings(max_examples=200)
@given(st.floats(-50, 50), st.integers(0, 6), st.floats(0.01, 3.0))
def test_project_idempotent(x, m, eta):
    g = _grid(m, eta)
    k = project(g, np.array([x]))
    assert project(g, g.nodes()[k]) == k
    assert abs(g.nodes()[k, 0] - x) <= eta / 2 + 1e-12 or abs(x) > m * eta


def test_transition_row_examples():
    src = _grid(0)
    tgt = _grid(1, 1.0)
    row = transition_row("analytic", (src, 0), tgt, brownian(1), 0.0, 1.0)
    assert row[1] == pytest.approx(ndtr(0.5) - ndtr(-0.5), abs=1e-15)
    assert row[1] == pytest.approx(0.38292, abs=1e-5)
    assert row.sum() == pytest.approx(1.0, abs=1e-15)
    assert transition_row("analytic", (src, 0), _grid(0), brownian(1), 0.0, 1.0).tolist() == [1.0]


def test_degenerate_sigma():
    fwd = ForwardSpec(np.zeros(1), lambda t, x: 0 * x, lambda t, x: np.zeros(np.shape(x) + (1,)))
    with pytest.raises(ConfigurationError):
        transition_row("analytic", (_grid(0), 0), _grid(1), fwd, 0.0, 0.5)
    with pytest.raises(ConfigurationError):
        increment_weights((_grid(0), 0), _grid(1), fwd, 0.0, 0.5)


def test_weight_examples():
    src = _grid(0)
    tgt = SpatialGrid(np.zeros(1), np.array([0.05]), 2)
    w = increment_weights((src, 0), tgt, brownian(1), 0.0, 0.95)
    assert w[2, 0] == 0.0
    assert w[3, 0] == pytest.approx(0.05 / 0.95)
    R = truncation_radius(0.95)
    assert w[4, 0] == pytest.approx(R / 0.95) and w[0, 0] == pytest.approx(-R / 0.95)


def test_chain_rows_and_bounds():
    pb = _pb()
    g = build_grid(GridSpec(GridKind.ATS_COMPARISON, 15), pb)
    ch = build_chain(pb, g)
    for i in range(g.N):
        st_ = ch.step(i)
        assert st_.P.shape == (ch.spatial[i].size, ch.spatial[i + 1].size)
        assert np.all(st_.P >= 0)
        assert np.max(np.abs(st_.P.sum(axis=1) - 1.0)) <= 1e-12
        bound = truncation_radius(g.steps[i]) / g.steps[i]
        assert np.all(np.abs(st_.H) <= bound * (1 + 1e-15))
        assert np.allclose(st_.P, st_.P[::-1, ::-1], atol=1e-14)  # symmetry of zero-drift rows


def test_martingale_weight_slack():
    pb = _pb()
    g = build_grid(GridSpec(GridKind.UNIFORM, 20), pb)
    ch = build_chain(pb, g)
    for i in range(1, g.N):
        st_ = ch.step(i)
        eta = ch.spatial[i + 1].spacing[0]
        m = (st_.P * st_.H[:, :, 0]).sum(axis=1)
        assert np.max(np.abs(m)) <= 10 * eta / g.steps[i]


def test_single_step_chain():
    pb = _pb(T=0.5)
    g = build_grid(GridSpec(GridKind.UNIFORM, 1), pb)
    ch = build_chain(pb, g)
    assert ch.step(0).P.shape == (1, 3)
    assert ch.step(0).P.sum() == pytest.approx(1.0, abs=1e-15)


def test_analytic_matches_monte_carlo():
    pb = _pb()
    g = build_grid(GridSpec(GridKind.UNIFORM, 6), pb)
    a = build_chain(pb, g)
    S = 100_000
    mc = build_chain(pb, g, mode="mc", mc_opts=MonteCarloOptions(S, 11))
    inside, total = 0, 0
    for i in (0, 2, 5):
        P, Q = a.step(i).P, mc.step(i).P
        # frequencies are exact rationals; the float sum may be off by a few ulps
        assert np.max(np.abs(Q.sum(axis=1) - 1.0)) <= 1e-15 * Q.shape[1]
        band = 3 * np.sqrt(P * (1 - P) / S) + 1e-12
        inside += int(np.sum(np.abs(P - Q) <= band))
        total += P.size
        assert np.allclose(a.step(i).H, mc.step(i).H)
    assert inside / total >= 0.95


def test_mc_deterministic_by_seed():
    pb = _pb(d=2)
    g = build_grid(GridSpec(GridKind.UNIFORM, 3), pb)
    o = MonteCarloOptions(2000, 5)
    a = build_chain(pb, g, mode="mc", mc_opts=o, cache=False)
    b = build_chain(pb, g, mode="mc", mc_opts=o)
    assert np.array_equal(a.step(2).P, b.step(2).P)
    with pytest.raises(ConfigurationError):
        build_chain(pb, g, mode="analytic")
