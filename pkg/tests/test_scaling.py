import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rwmscale.errors import ConfigError
from rwmscale.scaling import (
    OPT_ACCEPT,
    OPT_ELL,
    OPT_SPEED,
    EsjdEstimate,
    RoughnessStats,
    asymptotic_accept,
    asymptotic_esjd,
    check_upper_bound,
    consistency_table,
    curve_from_points,
    default_bracket,
    ell_grid,
    estimate_esjd,
    norm_cdf,
    optimize_ell,
    refine_argmax,
    roughness_stats,
    sweep_ell,
)
from rwmscale.targets import build_flat, build_iid_product

from oracles import phi_max_error

# maximizer of ell^2 Phi(-ell/2), solved once with mpmath at 40 digits and frozen
ORACLE_ELL = 2.3812024967
ORACLE_ACCEPT = 0.2338101613
ORACLE_SPEED = 1.3257329182


def test_phi_against_series_oracle():
    assert phi_max_error(norm_cdf) <= 1e-12


def test_optimal_constants_match_independent_solve():
    mpmath.mp.dps = 40
    phi = lambda t: mpmath.ncdf(-t / 2)  # noqa: E731
    ell = mpmath.findroot(lambda t: 4 * phi(t) - t * mpmath.npdf(t / 2), 2.4)
    assert float(ell) == pytest.approx(ORACLE_ELL, abs=1e-9)
    assert OPT_ELL == pytest.approx(ORACLE_ELL, abs=1e-9)
    assert OPT_ACCEPT == pytest.approx(ORACLE_ACCEPT, abs=1e-9)
    assert OPT_SPEED == pytest.approx(ORACLE_SPEED, abs=1e-9)
    assert OPT_ACCEPT == pytest.approx(float(2 * phi(ell)), abs=1e-12)


def test_asymptotic_accept_examples():
    assert asymptotic_accept(2.38, np.ones(5)) == pytest.approx(2 * float(mpmath.ncdf(-1.19)), abs=1e-14)
    assert asymptotic_accept(1e-12, np.ones(3)) == pytest.approx(1.0)
    mpmath.mp.dps = 30
    oracle = float(mpmath.ncdf(-1) + mpmath.ncdf(-2))
    assert asymptotic_accept(2.0, np.array([1.0, 4.0])) == pytest.approx(oracle, abs=1e-14)
    assert oracle == pytest.approx(0.18141, abs=1e-5)


def test_asymptotic_esjd_examples():
    assert asymptotic_esjd(2.38, None, np.ones(1)) == pytest.approx(1.325, abs=1e-3)
    assert asymptotic_esjd(0.0, 10, np.ones(1)) == 0.0
    for ell in (0.3, 1.0, 2.5):
        assert asymptotic_esjd(ell, None, np.full(3, 4.0)) == pytest.approx(
            asymptotic_esjd(2 * ell, None, np.ones(3)) / 4, rel=1e-14)


def test_optimize_deterministic_evaluators():
    r = optimize_ell(lambda ell: 2 * ell**2 * norm_cdf(-ell / 2), (0.2, 6.0))
    assert abs(r.ell_hat - 2.38) <= 0.02 and not r.boundary
    r = optimize_ell(lambda ell: -(ell - 1.0) ** 2, (0.2, 6.0))
    assert abs(r.ell_hat - 1.0) <= 1e-3
    r = optimize_ell(lambda ell: asymptotic_esjd(ell, None, np.full(1, 3.0)), (0.1, 4.0))
    assert abs(r.ell_hat - 2.38 / math.sqrt(3)) <= 0.02


def test_refine_argmax_boundary_flag():
    g = np.linspace(1, 2, 10)
    assert refine_argmax(g, g).boundary
    assert refine_argmax(g, -g).boundary
    assert not refine_argmax(g, -(g - 1.5) ** 2).boundary


def test_ell_grid_checks():
    with pytest.raises(ConfigError):
        ell_grid((1.0, 0.5), 24)
    with pytest.raises(ConfigError):
        ell_grid((0.2, 6.0), 5)
    g = ell_grid((0.2, 6.0), 24)
    assert g[0] == pytest.approx(0.2) and g[-1] == pytest.approx(6.0) and len(g) == 24


def test_default_bracket_concentrated_roughness():
    lo, hi = default_bracket(RoughnessStats.from_samples(np.full(50, 4.0)))
    assert lo == pytest.approx(0.1) and hi == pytest.approx(3.0)


def test_estimate_esjd_flat_target():
    d, ell = 20, 1.7
    e = estimate_esjd(build_flat(d), ell, 400, 20, 0)
    assert e.accept_mean == 1.0
    assert e.esjd_mean == pytest.approx(ell**2 * d / (d - 1), rel=0.02)


def test_estimate_esjd_small_ell_accepts():
    e = estimate_esjd(build_iid_product("logistic", 50), 1e-3, 200, 5, 1)
    assert e.accept_mean >= 0.99


def test_estimate_esjd_single_outer_has_infinite_se():
    e = estimate_esjd(build_iid_product("standard-normal", 5), 1.0, 1, 10, 0)
    assert math.isinf(e.esjd_se)


def test_estimate_esjd_accept_d200():
    e = estimate_esjd(build_iid_product("standard-normal", 200), 2.38, 2000, 50, 3)
    assert abs(e.accept_mean - 0.234) <= 0.015


def test_roughness_stats_product_cv():
    r = roughness_stats(build_iid_product("standard-normal", 100), 10_000, 0)
    assert r.mean == pytest.approx(1.0, abs=0.01)
    assert r.cv == pytest.approx(math.sqrt(2 / 100), rel=0.05)


def test_roughness_stats_constant():
    r = RoughnessStats.from_samples(np.full(10, 2.0))
    assert r.cv == 0.0 and r.mean_sqrt == pytest.approx(math.sqrt(2))


def test_upper_bound_degenerate_curve():
    p = EsjdEstimate(2.0, 1.0, 0.1, 0.3, 0.01, 10, 10)
    rep = check_upper_bound(curve_from_points([p]))
    assert not rep.sufficient_scan and not rep.holds


def _product_curve(d):
    return sweep_ell(build_iid_product("standard-normal", d), 600, 30, seed=4, budget=12)


def test_acceptance_monotone_in_ell():
    curve = _product_curve(100)
    acc, se = curve.accept, curve.accept_se
    for k in range(len(acc) - 1):
        assert acc[k + 1] <= acc[k] + 2 * math.hypot(se[k], se[k + 1])


def test_consistency_with_asymptotic_esjd_d200():
    curve = _product_curve(200)
    assert all(r["ok"] for r in consistency_table(curve, curve.roughness))


@pytest.mark.xfail(strict=True, reason="finite-d bias at d=100 exceeds the 5% slack near ell=3.5")
def test_consistency_with_asymptotic_esjd_d100():
    curve = _product_curve(100)
    assert all(r["ok"] for r in consistency_table(curve, curve.roughness))


def finite_d_esjd_normal(ell, d, n, seed):
    """Exact-in-distribution ESJD for the standard-normal product by a reduced simulation.

    With ``R^2 = |x|^2 ~ chi2_d``, ``U = x.z / |x| ~ N(0, 1)`` and
    ``|z|^2 = U^2 + chi2_{d-1}`` independent, the log ratio is
    ``-sigma R U - sigma^2 |z|^2 / 2`` and the jump is ``sigma^2 |z|^2``.
    """
    rng = np.random.default_rng(seed)
    s = ell / math.sqrt(d - 1)
    R = np.sqrt(rng.chisquare(d, n))
    U = rng.standard_normal(n)
    Z2 = U**2 + rng.chisquare(d - 1, n)
    alpha = np.exp(np.minimum(0.0, -s * R * U - 0.5 * s**2 * Z2))
    v = s**2 * Z2 * alpha
    return v.mean(), v.std() / math.sqrt(n), alpha.mean()


def test_nested_estimator_matches_finite_d_oracle_d100():
    # the d=100 discrepancy above is a property of d=100, not of the estimator:
    # the nested estimate agrees with the finite-d value, which sits more than
    # 5% below the limit formula evaluated on chi2_d / d roughness samples
    d, ell = 100, 4.0
    est = estimate_esjd(build_iid_product("standard-normal", d), ell, 4000, 30, 9)
    exact, se, _ = finite_d_esjd_normal(ell, d, 4_000_000, 1)
    assert abs(est.esjd_mean - exact) <= 3 * math.hypot(est.esjd_se, se)
    rough = np.random.default_rng(0).chisquare(d, 200_000) / d
    asym = asymptotic_esjd(ell, d, rough)
    assert (asym - exact) / asym > 0.05


def test_sweep_independent_of_thread_count():
    t = build_iid_product("logistic", 20)
    a = sweep_ell(t, 100, 5, seed=2, budget=10, threads=1)
    b = sweep_ell(t, 100, 5, seed=2, budget=10, threads=4)
    np.testing.assert_array_equal(a.esjd, b.esjd)
    assert a.ell_hat == b.ell_hat


def test_sweep_rejects_unsorted_grid():
    with pytest.raises(ConfigError):
        sweep_ell(build_iid_product("standard-normal", 5), 10, 2, grid=[1.0, 0.5, 2.0])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 20.0), st.lists(st.floats(0.01, 10.0), min_size=1, max_size=20))
def test_jensen_lower_bound(ell, samples):
    s = np.array(samples)
    rough = RoughnessStats.from_samples(s)
    assert asymptotic_accept(ell, s) >= 2 * norm_cdf(-ell * rough.mean_sqrt / 2) - 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 10.0), st.lists(st.floats(0.2, 5.0), min_size=1, max_size=6))
def test_argmax_scale_equivariance(c, samples):
    s = np.array(samples)
    lo, hi = 0.05 / math.sqrt(s.max() * max(c, 1)), 8 / math.sqrt(s.min() * min(c, 1))
    base = optimize_ell(lambda e: asymptotic_esjd(e, None, s), (lo, hi)).ell_hat
    scaled = optimize_ell(lambda e: asymptotic_esjd(e, None, c * s), (lo, hi)).ell_hat
    assert scaled == pytest.approx(base / math.sqrt(c), rel=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 30.0), st.floats(0.0, 30.0))
def test_asymptotic_accept_decreasing(a, b):
    lo, hi = sorted((a, b))
    s = np.array([0.5, 1.0, 3.0])
    assert asymptotic_accept(hi, s) <= asymptotic_accept(lo, s) + 1e-15
