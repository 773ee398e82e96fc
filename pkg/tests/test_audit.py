import itertools
import json

import numpy as np
import pytest

from rwmscale.audit import (
    FLAG,
    NA,
    PASS,
    audit_A1,
    audit_A3,
    audit_A4_A5,
    audit_A6,
    empirical_typical_set,
    graph_metrics,
    rs_diagnostic,
    run_audit_suite,
)
from rwmscale.rwm import make_rng
from rwmscale.scaling import RoughnessStats, roughness_stats
from rwmscale.targets import (
    Hyper,
    TargetModel,
    build_block_product,
    build_dense_coupling,
    build_hier_gauss,
    build_hier_gauss_realistic,
    build_iid_product,
    build_scale_mixture,
    fd_partial2,
    hier_gauss_posterior,
    roughness,
    synth_data,
)

HIER20_DATA = synth_data(20, seed=3)


@pytest.fixture(scope="module")
def hier20():
    return build_hier_gauss(HIER20_DATA)


@pytest.fixture(scope="module")
def hier20_points(hier20):
    return hier20.stationary_sample(make_rng(0), 2000)


def test_typical_set_constant_samples():
    band = empirical_typical_set(RoughnessStats.from_samples(np.full(200, 2.5)))
    assert band.lo == band.hi == 2.5


def test_typical_set_excludes_about_one_percent():
    s = np.random.default_rng(0).gamma(5.0, size=10_000)
    band = empirical_typical_set(RoughnessStats.from_samples(s), 0.99)
    outside = np.sum(~band.contains(s))
    assert 90 <= outside <= 110
    assert not band.low_power


def test_typical_set_low_power_flag():
    assert empirical_typical_set(RoughnessStats.from_samples(np.ones(50))).low_power


def test_typical_set_of_hierarchy(hier20, hier20_points):
    # under the exact Gaussian posterior the score is N(0, P), so d * I is a
    # weighted chi-square sum with the eigenvalues of the precision P as weights
    _, P = hier_gauss_posterior(HIER20_DATA)
    lam = np.linalg.eigvalsh(P)
    d = lam.size
    ref = (np.random.default_rng(0).chisquare(1, (100_000, d)) * lam).sum(axis=1) / d
    ref_lo, ref_hi = np.quantile(ref, [0.005, 0.995])
    band = empirical_typical_set(RoughnessStats.from_samples(roughness(hier20, hier20_points)))
    assert band.lo == pytest.approx(ref_lo, abs=0.15)
    assert band.hi == pytest.approx(ref_hi, abs=0.25)
    assert band.lo < lam.sum() / d < band.hi


def test_graph_metrics_hierarchy():
    for n in (3, 6):
        gm = graph_metrics(build_hier_gauss(synth_data(n, constant=1.0)))
        assert gm.m_d == n + 1
        assert gm.max_clique_card == 2
        assert gm.triangle_count == 0
        assert gm.l_d == n + 1


def test_graph_metrics_product():
    gm = graph_metrics(build_iid_product("standard-normal", 7))
    assert gm.m_d == 1 and gm.triangle_count == 0 and gm.l_d == 0


def test_graph_metrics_realistic_counts_A_triangles():
    n = 5
    gm = graph_metrics(build_hier_gauss_realistic(synth_data(n, seed=1, hyper=Hyper())))
    # every (nu, A, mu_j) potential is one 3-clique
    assert gm.triangle_count == n
    assert gm.max_clique_card == 3


def test_graph_metrics_absent_without_factors():
    assert graph_metrics(build_dense_coupling(5)) is None


@pytest.mark.parametrize("n", [3, 4, 5])
def test_graph_matches_finite_difference_screen(n):
    t = build_hier_gauss_realistic(synth_data(n, seed=n, hyper=Hyper()))
    gm = graph_metrics(t)
    x = t.stationary_sample(make_rng(n), 1)
    edges = set()
    for i, j in itertools.combinations(range(t.dim), 2):
        if abs(float(fd_partial2(t.grad, x, i, j)[0])) > 1e-6:
            edges.add((i, j))
    assert edges == set(gm.edges)


def test_A1_product_passes():
    t = build_iid_product("logistic", 30)
    rec = audit_A1(t, t.stationary_sample(make_rng(0), 50))
    assert rec.status == PASS and rec.statistics["far_max"] == 0.0


def test_A1_hierarchy_near_ratio(hier20, hier20_points):
    rec = audit_A1(hier20, hier20_points[:100])
    assert rec.status == PASS
    assert rec.statistics["near_max"] == 1.0
    d, l_d = hier20.dim, 21
    assert rec.statistics["near_ratio"] == pytest.approx(1.0 / np.sqrt(d / l_d))


def test_A1_dense_coupling_flags():
    t = build_dense_coupling(40)
    rec = audit_A1(t, t.stationary_sample(make_rng(0), 20))
    assert rec.status == FLAG and rec.statistics["far_max"] == 1.0


def test_A3_gaussian_and_no_triangles(hier20, hier20_points):
    rec = audit_A3(hier20, hier20_points[:50])
    assert rec.status == PASS
    assert rec.statistics["triangle_count"] == 0 and rec.statistics["triangle_ratio"] == 0.0


def test_A3_not_applicable_without_partials_or_graph():
    base = build_dense_coupling(4)
    t = TargetModel(base.dim, base.log_density, base.grad, base.sampler, base.neighborhoods)
    assert audit_A3(t, np.zeros((3, 4))).status == NA


def test_A3_realistic_triangle_term_small_for_large_n():
    t = build_hier_gauss_realistic(synth_data(30, seed=0, hyper=Hyper()))
    rep = run_audit_suite(t, n_samples=1000, seed=0, n_pair_points=50)
    assert rep["A3"].statistics["triangle_ratio"] < 1.0
    assert rep["A5"].statistics["cv"] <= 0.2


def test_A4_A5_product_cv_threshold():
    t = build_iid_product("standard-normal", 100)
    rough = roughness_stats(t, 10_000, 0)
    a4, a5 = audit_A4_A5(rough, 5.0, 100)
    assert a5.status == PASS and a5.statistics["cv"] == pytest.approx(np.sqrt(0.02), rel=0.05)
    assert a4.status == PASS and "density" in a4.note


def test_A4_A5_constant_roughness():
    _, a5 = audit_A4_A5(RoughnessStats.from_samples(np.full(10, 1.0)), 1.0, 10)
    assert a5.status == PASS and a5.statistics["cv"] == 0.0


def test_A5_flags_joint_mixture():
    for d in (50, 200):
        t = build_scale_mixture(d)
        _, a5 = audit_A4_A5(roughness_stats(t, 2000, 1), 1.0, d)
        assert a5.status == FLAG and a5.statistics["cv"] > 0.3


def test_A4_flags_vanishing_roughness():
    a4, _ = audit_A4_A5(RoughnessStats.from_samples(np.array([0.0, 1.0])), 1.0, 10)
    assert a4.status == FLAG


def test_rs_product_matches_closed_form():
    t = build_iid_product("standard-normal", 50)
    X = t.stationary_sample(make_rng(2), 4000)
    rec = rs_diagnostic(t, X)
    expected = np.mean(np.sum(X[:, 1:] ** 2 - 1.0, axis=1) / 49)
    assert rec.statistics["mean"] == pytest.approx(expected, abs=1e-12)
    assert rec.status == PASS


def test_rs_hierarchy_and_coordinate_invariance(hier20, hier20_points):
    d = hier20.dim
    means = []
    for i in (0, d // 2, d - 1):
        rec = rs_diagnostic(hier20, hier20_points, i)
        assert rec.status == PASS
        means.append((rec.statistics["mean"], rec.statistics["se"]))
    for (m1, s1), (m2, s2) in itertools.combinations(means, 2):
        assert abs(m1 - m2) <= 3 * np.hypot(s1, s2)


def test_rs_flags_non_stationary_points(hier20):
    rec = rs_diagnostic(hier20, np.zeros((500, hier20.dim)) + np.random.default_rng(0).normal(0, 0.01,
                                                                                              (500, hier20.dim)))
    assert rec.status == FLAG


def test_A6_product_exact():
    t = build_iid_product("logistic", 10)
    rec = audit_A6(t, t.stationary_sample(make_rng(0), 200))
    assert rec.statistics["max_discrepancy"] == 0.0 and rec.statistics["score_source"] == "analytic"


def test_A6_block_product_exact():
    t = build_block_product("standard-normal", build_hier_gauss(synth_data(3, seed=1)))
    rec = audit_A6(t, t.stationary_sample(make_rng(0), 100))
    assert rec.status == PASS and rec.statistics["max_discrepancy"] == 0.0


def test_A6_hierarchy_flags(hier20, hier20_points):
    rec = audit_A6(hier20, hier20_points)
    assert rec.status == FLAG and rec.statistics["score_source"] == "gaussian-fit"


def test_suite_deterministic_and_serializable():
    t = build_hier_gauss(synth_data(5, seed=2))
    a = run_audit_suite(t, n_samples=300, seed=4)
    b = run_audit_suite(t, n_samples=300, seed=4)
    assert a.to_json() == b.to_json()
    parsed = json.loads(a.to_json())
    assert {r["check_id"] for r in parsed["records"]} == {"A1", "A3", "A4", "A5", "RS", "A6"}
    for r in parsed["records"]:
        assert r["n_samples"] > 0 and isinstance(r["thresholds"], dict)
    assert "A1" in a.table()
