import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from rwmscale.diffusion import (
    PathEnsemble,
    complexity_scan,
    diffusion_compare,
    extract_sped_path,
    iact,
    loglog_fit,
    simulate_sde,
    speed_measure,
    sped_index,
    w1_distance,
    w1_trend,
)
from rwmscale.errors import ConfigError, NumericalError
from rwmscale.rwm import make_rng, run_chain, run_chains
from rwmscale.targets import build_hier_gauss, build_iid_product, synth_data


def normal_family(d):
    return build_iid_product("standard-normal", d)


def test_speed_measure_examples():
    assert speed_measure(2.38, 1.0) == pytest.approx(1.325, abs=1e-3)
    assert speed_measure(1e-8, 1.0) < 1e-15
    for ell in (0.4, 1.3, 3.0):
        assert speed_measure(ell, 4.0) == pytest.approx(speed_measure(2 * ell, 1.0) / 4, rel=1e-14)
    with pytest.raises(ConfigError):
        speed_measure(1.0, 0.0)


def test_brownian_variance_on_grid():
    h = 1.3
    ens = simulate_sde(lambda u: np.zeros_like(u), h, 2.0, n_paths=10_000, rng=1,
                       times=[0.0, 0.5, 1.0, 2.0])
    assert np.all(ens.at(0.0) == 0.0)
    for t in (0.5, 1.0, 2.0):
        assert ens.at(t).var() == pytest.approx(h * t, rel=0.05)


def test_ou_stationary_variance():
    h = 1.325
    T = 5 / h
    ens = simulate_sde(lambda u: -u, h, T, n_paths=10_000, rng=2, times=[0.0, T])
    assert ens.at(T).var() == pytest.approx(1.0, rel=0.05)


def test_dt_refinement_is_stable():
    score = lambda u: -u  # noqa: E731
    a = simulate_sde(score, 1.0, 1.0, dt=0.01, n_paths=20_000, start=2.0, rng=3, times=[0, 1])
    b = simulate_sde(score, 1.0, 1.0, dt=0.005, n_paths=20_000, start=2.0, rng=4, times=[0, 1])
    ua, ub = a.at(1.0), b.at(1.0)
    se = math.hypot(ua.std() / math.sqrt(ua.size), ub.std() / math.sqrt(ub.size))
    assert abs(ua.mean() - ub.mean()) < 2 * se
    # exact OU mean from 2 after time 1 at rate h/2
    assert ub.mean() == pytest.approx(2 * math.exp(-0.5), abs=4 * se)


def test_sde_preconditions():
    with pytest.raises(ConfigError):
        simulate_sde(lambda u: -u, 1.0, 1.0, dt=0.05)
    with pytest.raises(ConfigError):
        simulate_sde(lambda u: -u, 0.0, 1.0)
    ens = simulate_sde(lambda u: -u, 1.0, 0.0, n_paths=5, start=1.5)
    assert ens.times.tolist() == [0.0] and np.all(ens.paths == 1.5)


def test_sde_flags_large_score_and_blowup():
    with pytest.warns(RuntimeWarning):
        with pytest.raises(NumericalError):
            with np.errstate(over="ignore", invalid="ignore"):
                simulate_sde(lambda u: u**5, 1.0, 1.0, n_paths=10, start=10.0, rng=0)


def test_path_ensemble_invariants():
    with pytest.raises(ConfigError):
        PathEnsemble(np.array([0.0, 0.0]), np.zeros((2, 2)), "sde")
    with pytest.raises(NumericalError):
        PathEnsemble(np.array([0.0, 1.0]), np.array([[0.0, np.nan]]), "sde")


def test_sped_index_floor():
    assert sped_index(100, 0.5) == 50
    assert sped_index(100, 0.0) == 0
    assert sped_index(1000, 0.099999) == 99
    assert sped_index(100, 0.99999) == 99
    # 0.29 * 100 is 28.999999999999996 in floating point
    assert sped_index(100, 0.29) == 29


def test_extract_sped_path_indexing():
    t = build_iid_product("standard-normal", 10)
    tr = run_chain(t, 2.0, 20, rng=0, record_path=True)
    ens = extract_sped_path(tr, 10, 2.0, [0.0, 0.5, 1.0, 2.0])
    np.testing.assert_array_equal(ens.paths[0], tr.first_coord_path[[0, 5, 10, 20]])
    with pytest.raises(ConfigError):
        extract_sped_path(tr, 10, 3.0, [0.0, 3.0])
    with pytest.raises(ConfigError):
        extract_sped_path(run_chain(t, 2.0, 5, rng=0), 10, 0.1, [0.0])


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(8))))
def test_extract_is_pure_reindexing(perm):
    paths = np.arange(3 * 101, dtype=float).reshape(3, 101) ** 1.5
    grid = np.linspace(0, 1, 8)
    base = extract_sped_path(paths, 100, 1.0, grid)
    idx = sped_index(100, grid[perm])
    np.testing.assert_array_equal(paths[:, idx], base.paths[:, perm])


def test_w1_examples():
    rng = np.random.default_rng(0)
    a = rng.standard_normal(2000)
    assert w1_distance(a, a.copy()) == (0.0, 0.0)
    assert w1_distance(a + 0.3, a)[0] == pytest.approx(0.3, abs=1e-12)
    x = rng.standard_normal(100_000)
    y = 2.0 * rng.standard_normal(100_000)
    assert w1_distance(x, y)[0] == pytest.approx(math.sqrt(2 / math.pi), abs=0.02)


def test_w1_matches_scipy_for_unequal_sizes():
    rng = np.random.default_rng(1)
    for na, nb in [(7, 13), (100, 37), (1, 50), (250, 250)]:
        a, b = rng.gamma(2.0, size=na), rng.normal(1.0, 2.0, nb)
        assert w1_distance(a, b)[0] == pytest.approx(wasserstein_distance(a, b), rel=1e-10, abs=1e-12)


def test_w1_clamped_variant():
    a = np.array([0.0, 20.0])
    b = np.array([0.0, 30.0])
    plain, bounded = w1_distance(a, b, clamp=10)
    assert plain == 5.0 and bounded == 0.0
    with pytest.raises(ConfigError):
        w1_distance([], [1.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=5, max_size=5),
       st.lists(st.floats(-100, 100), min_size=5, max_size=5),
       st.lists(st.floats(-100, 100), min_size=5, max_size=5))
def test_w1_triangle_inequality(a, b, c):
    ab, bc, ac = (w1_distance(p, q)[0] for p, q in ((a, b), (b, c), (a, c)))
    assert ac <= ab + bc + 1e-9
    assert w1_distance(a, b)[1] <= ab + 1e-12


def test_diffusion_zero_horizon():
    reps = diffusion_compare(normal_family, 2.38, [20], T=0.0, start=2.0, n_paths=200, times=[0.0])
    assert reps[0].plain.tolist() == [0.0]


def test_diffusion_stationary_start_small_distance():
    reps = diffusion_compare(normal_family, 2.38, [100], T=1.0, n_paths=5000, seed=3, n_boot=20)
    assert reps[0].max_distance <= 0.05
    assert np.all(reps[0].bounded <= reps[0].plain + 1e-12)


def test_diffusion_requires_score():
    with pytest.raises(ConfigError):
        diffusion_compare(lambda d: build_hier_gauss(synth_data(3, seed=0)), 1.0, [13], n_paths=10)


def test_w1_trend_summary():
    class R:
        def __init__(self, d, plain):
            self.d, self.plain = d, np.array(plain)

    assert w1_trend([R(200, [0, 0.05]), R(50, [0, 0.04])])["non_increasing"]
    assert not w1_trend([R(200, [0, 0.08]), R(50, [0, 0.04])])["non_increasing"]


def test_ou_lag_autocorrelation_matches_chain():
    # corr(U(0), U(1)) of the chain at d=200 against the SDE and exp(-h/2)
    d, ell, n = 200, 2.38, 4000
    t = normal_family(d)
    x0 = t.stationary_sample(make_rng(0), n)
    ens = run_chains(t, ell, d, x0, make_rng(1))
    rc = np.corrcoef(ens.first_coord_paths[:, 0], ens.first_coord_paths[:, d])[0, 1]
    h = speed_measure(ell, 1.0)
    sde = simulate_sde(lambda u: -u, h, 1.0, n_paths=n, start=x0[:, 0], rng=2, times=[0.0, 1.0])
    rs = np.corrcoef(sde.paths[:, 0], sde.paths[:, 1])[0, 1]
    se = math.hypot(1 - rc**2, 1 - rs**2) / math.sqrt(n)
    assert abs(rc - rs) <= 3 * se
    assert rs == pytest.approx(math.exp(-h / 2), abs=3 * (1 - rs**2) / math.sqrt(n))


def test_iact_ar1():
    rng = np.random.default_rng(0)
    rho, n, m = 0.8, 20_000, 8
    x = np.empty((m, n))
    x[:, 0] = rng.standard_normal(m) / math.sqrt(1 - rho**2)
    eps = rng.standard_normal((m, n))
    for k in range(1, n):
        x[:, k] = rho * x[:, k - 1] + eps[:, k]
    est = iact(x)
    assert est.converged
    assert est.tau == pytest.approx((1 + rho) / (1 - rho), rel=0.1)


def test_iact_white_noise_and_window_flag():
    est = iact(np.random.default_rng(1).standard_normal(50_000))
    assert est.tau == pytest.approx(1.0, abs=0.05)
    trend = np.cumsum(np.ones(200))
    assert not iact(trend, max_lag=10).converged
    with pytest.raises(ConfigError):
        iact(np.zeros(3))


def test_loglog_fit_exact_power():
    d = np.array([10, 20, 40, 80])
    slope, ci, icpt = loglog_fit(d, 3.0 * d**1.5)
    assert slope == pytest.approx(1.5) and icpt == pytest.approx(math.log(3.0))
    assert ci[0] == pytest.approx(1.5) and ci[1] == pytest.approx(1.5)


@pytest.mark.parametrize("d_list", [[100], [25, 50, 100, 150], [10, 20, 40]])
def test_complexity_scan_preconditions(d_list):
    with pytest.raises(ConfigError):
        complexity_scan(normal_family, d_list)


def test_complexity_scan_rejects_metric():
    with pytest.raises(ConfigError):
        complexity_scan(normal_family, [5, 10, 20, 40], metric="ess")


@pytest.mark.slow
def test_complexity_slope_hierarchy():
    rep = complexity_scan(lambda n: build_hier_gauss(synth_data(n, seed=n)), [6, 10, 14, 20],
                          ell_rule=lambda d: 2.38 / math.sqrt(3), seed=1, n_chains=32,
                          iter_factor=100, coord=-1)
    assert 0.7 <= rep.slope <= 1.3


def test_complexity_w1_threshold_mode():
    rep = complexity_scan(normal_family, [5, 10, 20, 40], metric="w1-threshold", seed=0,
                          n_starts=2, n_paths=300, n_ref=5000, iter_factor=30, eps=0.15)
    assert all(f == "" for f in rep.flags)
    assert rep.values[-1] > rep.values[0]
    assert "iterations" in rep.to_dict()
