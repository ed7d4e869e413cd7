import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import ndtr

from atsbsde.errors import ConfigurationError
from atsbsde.model import ProblemSpec, brownian, capped_square, cubic_damped, pure_cubic, zero_terminal
from atsbsde.timegrid import (H_MAX, R_MAX, GridKind, GridSpec, RateKind, StepRegime, ats_step_size,
                              build_grid, grid_diagnostics, h0_lipz, hat_h0, increment_clamp_error,
                              increment_truncation, lambda_factor, stability_constants, stability_rate,
                              step_bound, truncation_level, truncation_moment_envelope)


def _lambda_quad(h):
    r, _ = increment_truncation(h)
    phi = lambda x: math.exp(-x * x / 2) / math.sqrt(2 * math.pi)
    inner, _ = integrate.quad(lambda x: x * x * phi(x), -r, r)
    return inner + 2 * r * r * (1 - ndtr(r))


def test_truncation_values():
    r, R = increment_truncation(math.exp(-0.5))
    assert r == pytest.approx(math.sqrt(2) / 2, rel=1e-14)
    assert R == math.sqrt(math.exp(-0.5)) * r
    assert increment_truncation(0.95)[1] == pytest.approx(0.0707, abs=5e-5)
    for bad in (0.0, -1.0, 0.96, 1.0):
        with pytest.raises(ConfigurationError):
            increment_truncation(bad)


@pytest.mark.parametrize("h, expected", [(0.95, 5.06e-3), (0.5, 0.503)])
def test_lambda_matches_quadrature(h, expected):
    assert lambda_factor(h) == pytest.approx(_lambda_quad(h), rel=1e-9)
    assert lambda_factor(h) == pytest.approx(expected, rel=5e-3)


def test_lambda_limits_and_monotonicity():
    # below h ~ 5e-3 the deficit 1 - Lambda is under double-precision resolution
    hs = np.geomspace(1e-2, 0.95, 200)
    lam = [lambda_factor(h) for h in hs]
    assert all(b < a for a, b in zip(lam, lam[1:]))
    assert all(lambda_factor(h) <= 1.0 for h in np.geomspace(1e-12, 1e-2, 50))
    assert lambda_factor(1e-12) == pytest.approx(1.0, abs=1e-12)
    assert all(lambda_factor(0.95) <= v < 1 for v in lam)


def test_clamp_error_closed_form():
    rng = np.random.default_rng(0)
    G = rng.standard_normal(2_000_000)
    for h in (0.95, 0.5, 0.3):
        r, _ = increment_truncation(h)
        v = (np.abs(G) - r).clip(min=0) ** 2 / h
        se = v.std() / math.sqrt(v.size)
        assert abs(increment_clamp_error(h) - v.mean()) <= 4 * se


def test_h0_examples():
    assert h0_lipz(0.0) == H_MAX
    assert h0_lipz(0.999 / (3.0 * R_MAX)) == H_MAX
    assert R_MAX == pytest.approx(2 * math.sqrt(2) / math.e, rel=1e-14)
    h = h0_lipz(10.0)
    assert h == pytest.approx(3.5e-6, rel=0.05)
    assert increment_truncation(h)[1] <= 1 / 30


@settings(max_examples=100)
@given(st.floats(0.33, 1e4))
def test_h0_is_safe_below(lz):
    h = h0_lipz(lz)
    for f in (1.0, 0.7, 0.1, 1e-3):
        assert increment_truncation(h * f)[1] <= 1 / (3 * lz) * (1 + 1e-12)


def test_hat_h0():
    assert hat_h0(cubic_damped()) == math.inf
    drv = cubic_damped(z_coupling=[0.5])
    assert hat_h0(drv) == pytest.approx(1 / 8 / (2 * 2 * 0.25))


def _pb(c=3.6, T=1.0, drv=None, term=None):
    return ProblemSpec(T, brownian(1), drv or cubic_damped(), term or capped_square(c))


def test_ats1d_with_zero_terminal_is_uniform():
    pb = _pb(term=zero_terminal())
    for t in (0.1, 0.5, 1.0):
        assert ats_step_size(GridSpec(GridKind.ATS_1D, 10), pb, t) == 0.1
    g = build_grid(GridSpec(GridKind.ATS_1D, 10), pb)
    u = build_grid(GridSpec(GridKind.UNIFORM, 10), pb)
    assert g.N == 10 and np.allclose(g.times, u.times, atol=1e-15)
    assert np.all(u.steps == 0.1)


def test_small_t_next_clause_wins():
    h, clause = ats_step_size(GridSpec(GridKind.ATS_1D, 10), _pb(), 1e-4, with_clause=True)
    assert h == 1e-4 and clause == "t_next"


def test_comparison_first_clause():
    h = ats_step_size(GridSpec(GridKind.ATS_COMPARISON, 1), _pb(), 1.0)
    assert h == pytest.approx(1 / (4.5 * (1 + 2 * 3.6 ** 2)), rel=1e-14)
    assert h == pytest.approx(8.26e-3, rel=1e-3)


def test_kind_errors():
    with pytest.raises(ConfigurationError, match="ats_gmongr"):
        build_grid(GridSpec(GridKind.ATS_1D, 10), _pb(drv=pure_cubic()))
    with pytest.raises(ConfigurationError):
        build_grid(GridSpec(GridKind.ATS_MULTI, 10), _pb(drv=cubic_damped(z_coupling=[0.6])))
    with pytest.raises(ConfigurationError):
        build_grid(GridSpec(GridKind.ATS_GMONGR, 10), _pb(drv=pure_cubic()))
    with pytest.raises(ConfigurationError):
        GridSpec(GridKind.ATS_TRUNC_TERMINAL, 10)
    with pytest.raises(ConfigurationError):
        GridSpec(GridKind.ATS_1D, 10, L0=1.0, alpha=0.5)
    with pytest.raises(ConfigurationError):
        build_grid(GridSpec(GridKind.UNIFORM, 1), _pb(T=2.0))


def test_refined_and_comparison_are_finer():
    pb = _pb(c=4.0)
    for t in np.linspace(0.05, 1.0, 20):
        base = ats_step_size(GridSpec(GridKind.ATS_1D, 5), pb, t)
        assert ats_step_size(GridSpec(GridKind.ATS_REFINED, 5), pb, t) <= base
        assert ats_step_size(GridSpec(GridKind.ATS_COMPARISON, 5), pb, t) <= base


def test_truncation_level():
    assert truncation_level(1.0, 1.0, 3, 16) == pytest.approx(2.0, rel=1e-15)
    with pytest.raises(ConfigurationError):
        truncation_level(1.0, 1.0, 1, 16)


def test_step_bound_examples():
    drv = cubic_damped()
    assert step_bound(StepRegime.ONE_D, 2.0, drv) == pytest.approx(1 / 22.5)
    assert step_bound(StepRegime.ONE_D, 0.0, drv) == pytest.approx(2 / 9)
    assert step_bound(StepRegime.MULTI, 1.0, drv) == pytest.approx(0.25 / (2 * 2.25 * 2))
    assert step_bound(StepRegime.ONE_D_PAIR, (1.0, 1.0), drv) == pytest.approx(1 / (4.5 * 3))
    with pytest.raises(ConfigurationError):
        step_bound(StepRegime.MULTI, 1.0, pure_cubic())


def test_rates():
    drv = cubic_damped()
    assert stability_rate(RateKind.HAT_ONE_STEP, 0.0, 3.0, drv) == -1.0
    assert stability_rate(RateKind.TILDE_G, 0.01, 3.6, drv) == pytest.approx(-1 + 13.5 * 0.01 * (1 + 2 * 3.6 ** 4))
    assert stability_rate(RateKind.TILDE_G, 0.01, 3.6, drv) == pytest.approx(44.48, abs=5e-3)
    assert stability_rate(RateKind.TILDE_G, 1e-14, 3.6, drv) == pytest.approx(-1.0)
    sc = stability_constants(drv)
    assert sc.hat_M_y == -0.25 and sc.hat_h0 == math.inf


def test_moment_envelope():
    assert truncation_moment_envelope(0.95) == pytest.approx(0.0762, abs=5e-4)
    assert truncation_moment_envelope(0.5) == pytest.approx(1.212, abs=1e-3)
    assert truncation_moment_envelope(1e-6) < 1e-30


def test_diagnostics():
    pb = _pb()
    u = grid_diagnostics(build_grid(GridSpec(GridKind.UNIFORM, 15), pb))
    assert u.non_uniformity == 1.0 and u.excess == 1.0
    a = grid_diagnostics(build_grid(GridSpec(GridKind.ATS_COMPARISON, 15), pb))
    assert a.excess >= 1.0 and a.non_uniformity >= 1.0


KINDS = [GridKind.ATS_1D, GridKind.ATS_MULTI, GridKind.ATS_COMPARISON, GridKind.ATS_REFINED,
         GridKind.ATS_GMONGR, GridKind.ATS_TRUNC_TERMINAL]


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(KINDS), st.floats(0.05, 2.0), st.integers(1, 60), st.floats(0.5, 6.0))
def test_grid_recompute_property(kind, T, n, c):
    drv = pure_cubic(K=1.0) if kind is GridKind.ATS_GMONGR else cubic_damped()
    extra = dict(L0=1.0, alpha=0.5) if kind is GridKind.ATS_TRUNC_TERMINAL else {}
    pb = _pb(c=c, T=T, drv=drv)
    spec = GridSpec(kind, n, **extra)
    g = build_grid(spec, pb)
    for i in range(g.N):
        assert ats_step_size(spec, pb, g.times[i + 1]) == g.steps[i]
    assert abs(g.steps.sum() - T) <= 1e-12 * T
    assert g.modulus <= min(T / n, H_MAX)
    assert np.all(np.diff(g.steps[1:]) <= 0)
