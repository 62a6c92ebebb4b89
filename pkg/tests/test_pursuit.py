import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ppfactor.distributions import (
    GumbelDensity1D,
    gaussian,
    project_density_1d,
    sample,
    simulation2_density,
)
from ppfactor.optimizer import AnnealConfig
from ppfactor.pursuit import (
    Factor,
    PursuitConfig,
    TransformedDensity,
    mc_normalization,
    nominal_acceptance,
    run_pursuit,
    sample_transformed,
    stop_test_values,
    threshold_quantile,
    update_g,
)

FAST = AnnealConfig(n_steps=400, n_restarts=2, polish_steps=20)


def sim2_truth_g1():
    """g^(1) along e1 with the exact Gumbel and Gaussian projections."""
    f = simulation2_density()
    g = gaussian(f.mean(), f.covariance())
    e1 = np.eye(10)[0]
    g1 = update_g(TransformedDensity(g), e1, GumbelDensity1D(-5.0, 1.0), project_density_1d(g, e1))
    return f, g, g1


def test_identity_factor_is_noop():
    g = gaussian([0.5, -1.0, 2.0], np.diag([1.0, 2.0, 3.0]))
    a = np.array([1.0, 2.0, 2.0]) / 3
    ga = project_density_1d(g, a)
    g1 = update_g(TransformedDensity(g), a, ga, ga)
    x = sample(g, 500, 0)
    assert np.max(np.abs(g1.logpdf(x) - g.logpdf(x))) <= 1e-12


def test_two_updates_match_product_formula():
    g = gaussian(np.zeros(3), np.eye(3))
    a1, a2 = np.eye(3)[0], np.array([0.0, 0.6, 0.8])
    n1, d1 = GumbelDensity1D(0.0, 1.0), project_density_1d(g, a1)
    n2, d2 = gaussian([0.3], [[2.0]]), gaussian([0.0], [[1.0]])
    gk = update_g(update_g(TransformedDensity(g), a1, n1, d1), a2, n2, d2)
    x = sample(g, 200, 1)
    explicit = g.pdf(x) * n1.pdf(x @ a1) / d1.pdf(x @ a1).ravel() * n2.pdf(x @ a2).ravel() / d2.pdf(x @ a2).ravel()
    assert np.allclose(gk.pdf(x), explicit, rtol=1e-12)
    assert gk.k == 2 and np.allclose(gk.directions, [a1, a2])


def test_sim2_true_update_normalised_and_marginals():
    f, g, g1 = sim2_truth_g1()
    mean, se = mc_normalization(g1, 100_000, 0)
    assert abs(mean - 1.0) <= 0.05
    drawn = sample_transformed(g1, 2000, 1)
    ref = sample(f, 2000, 2)
    assert stats.ks_2samp(drawn.sample[:, 0], ref[:, 0]).pvalue > 0.01
    gref = sample(g, 2000, 3)
    for j in (1, 5, 9):
        assert stats.ks_2samp(drawn.sample[:, j], gref[:, j]).pvalue > 0.01


def test_estimated_update_normalised():
    x = sample(simulation2_density(), 50, 0)
    rep = run_pursuit(x, cfg=PursuitConfig(k_max=1, initial_test=False, anneal=FAST), seed=0)
    mean, se = mc_normalization(rep.final_density, 100_000, 1)
    assert abs(mean - 1.0) <= 0.05


def test_k0_sampling_is_exact():
    g = gaussian(np.zeros(2), np.eye(2))
    out = sample_transformed(TransformedDensity(g), 100, 0)
    assert out.acceptance_rate == 1.0 and out.sample.shape == (100, 2)


def test_threshold_conventions():
    assert threshold_quantile(0.9, "paper") == pytest.approx(0.2533, abs=1e-4)
    res = stop_test_values(np.random.default_rng(0).normal(size=50), 0.9, "paper")
    assert res.threshold == pytest.approx(0.03582203, abs=1e-5)
    assert threshold_quantile(0.9, "corrected") == pytest.approx(1.2816, abs=1e-4)
    assert nominal_acceptance(0.9, "paper") == pytest.approx(0.6)
    assert nominal_acceptance(0.9, "corrected") == pytest.approx(0.9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-1, 1))
def test_stop_test_modes_consistent(seed, shift):
    v = np.random.default_rng(seed).normal(shift, 1.0, size=80)
    r = stop_test_values(v, 0.9, "corrected")
    assert r.in_ellipsoid == (r.z <= threshold_quantile(0.9, "corrected"))
    assert r.p_value == pytest.approx(stats.norm.sf(r.z))
    p = stop_test_values(v, 0.9, "paper")
    assert p.in_ellipsoid == (p.statistic <= 0.2533471 / math.sqrt(80) + 1e-12)


def test_degenerate_statistic_continues():
    r = stop_test_values(np.full(20, 0.3))
    assert r.degenerate and r.decision == "continue"


def test_run_is_deterministic():
    x = sample(simulation2_density(), 50, 3)
    cfg = PursuitConfig(k_max=1, anneal=FAST)
    r1 = run_pursuit(x, cfg=cfg, seed=5)
    r2 = run_pursuit(x, cfg=cfg, seed=5)
    assert np.array_equal(r1.directions, r2.directions)
    assert r1.kl_trace == r2.kl_trace


def test_report_fields():
    x = sample(gaussian(np.zeros(3), np.eye(3)), 60, 0)
    rep = run_pursuit(x, cfg=PursuitConfig(k_max=2, anneal=FAST, method="huber"), seed=1)
    assert rep.initial_test is not None
    assert len(rep.kl_trace) == len(rep.iterations) + 1
    assert rep.n_kept + rep.n_dropped == 60
    for it in rep.iterations:
        assert abs(np.linalg.norm(it.direction) - 1) < 1e-12
        assert np.max(np.abs(it.paper_style_direction)) == pytest.approx(1.0)


def test_orthogonalize_option():
    x = sample(gaussian(np.zeros(3), np.diag([1.0, 2.0, 3.0])), 80, 0)
    rep = run_pursuit(x, cfg=PursuitConfig(k_max=2, anneal=FAST, initial_test=False, orthogonalize=True), seed=0)
    if rep.k == 2:
        assert rep.orthogonality() < 1e-8


def test_config_validation():
    with pytest.raises(ValueError):
        PursuitConfig(method="other")
    with pytest.raises(ValueError):
        PursuitConfig(alpha=1.2)
    with pytest.raises(ValueError):
        run_pursuit(np.zeros((3, 3)))
    x = sample(gaussian(np.zeros(3), np.eye(3)), 50, 0)
    with pytest.raises(ValueError, match="1/\\(4\\+d\\)"):
        run_pursuit(x, cfg=PursuitConfig(nu=0.5))


def test_factor_floor_applies():
    f = Factor(np.ones(1), gaussian([0.0], [[1.0]]), gaussian([0.0], [[1.0]]), log_floor=0.0)
    t = np.array([[0.0], [5.0]])
    lr = f.log_ratio(t)
    assert lr[1] == pytest.approx(gaussian([0.0], [[1.0]]).logpdf([5.0]).item())
