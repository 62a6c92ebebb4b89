import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from ppfactor.distributions import (
    DensityError,
    EllipticalDensity,
    GumbelDensity1D,
    angle_between,
    canonical_direction,
    elliptical_conditional,
    elliptical_marginal,
    gaussian,
    moment_match_instrumental,
    paper_style,
    principal_angle,
    project_density_1d,
    sample,
    simulation1_density,
    simulation2_density,
    simulation3_sample,
)


def test_standard_normal_at_zero():
    assert gaussian([0.0], [[1.0]]).pdf([0.0]) == pytest.approx(0.3989423, abs=1e-7)


def test_2d_standard_normal_at_ones():
    g = gaussian(np.zeros(2), np.eye(2))
    assert g.pdf([1.0, 1.0]) == pytest.approx(math.exp(-1) / (2 * math.pi), rel=1e-12)
    total, _ = integrate.dblquad(lambda y, x: g.pdf([x, y]), -9, 9, -9, 9)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_density_at_mean_is_normaliser():
    sig = np.array([[2.0, 0.3], [0.3, 1.0]])
    g = gaussian([1.0, -2.0], sig)
    expect = 1 / (2 * math.pi) / math.sqrt(np.linalg.det(sig))
    assert g.pdf([1.0, -2.0]) == pytest.approx(expect, rel=1e-12)


def test_logistic_generator_integrates_to_one():
    e = EllipticalDensity([0.0], [[1.0]], "logistic")
    total, _ = integrate.quad(lambda x: e.pdf([x]).item(), -40, 40)
    assert total == pytest.approx(1.0, abs=1e-6)


def test_marginal_examples():
    g3 = gaussian(np.zeros(3), np.eye(3))
    m = elliptical_marginal(g3, [1])
    assert m.dim == 1 and m.mu[0] == 0 and m.sigma[0, 0] == 1
    g = gaussian([1.0, 2.0], [[4.0, 1.0], [1.0, 9.0]])
    m = elliptical_marginal(g, [1])
    assert m.mu[0] == 2.0 and m.sigma[0, 0] == 9.0
    x = sample(g, 200_000, 1)[:, 1]
    assert x.mean() == pytest.approx(2.0, abs=0.03)
    assert x.var() == pytest.approx(9.0, rel=0.02)
    assert elliptical_marginal(g3, [0, 1, 2]) is g3


def test_conditional_examples():
    ind = gaussian(np.zeros(2), np.eye(2))
    c = elliptical_conditional(ind, [1], [5.0])
    assert c.mu[0] == pytest.approx(0.0) and c.sigma[0, 0] == pytest.approx(1.0)
    g = gaussian(np.zeros(2), [[2.0, 1.0], [1.0, 2.0]])
    c = elliptical_conditional(g, [1], [2.0])
    assert c.mu[0] == pytest.approx(1.0) and c.sigma[0, 0] == pytest.approx(1.5)
    # regression oracle on simulated pairs near x2 = 2
    xy = sample(g, 400_000, 3)
    near = xy[np.abs(xy[:, 1] - 2.0) < 0.05, 0]
    assert near.mean() == pytest.approx(1.0, abs=0.05)
    assert near.var() == pytest.approx(1.5, rel=0.08)
    total, _ = integrate.quad(lambda t: c.pdf([t]).item(), -20, 20)
    assert total == pytest.approx(1.0, abs=1e-8)


def test_bad_index_sets():
    g = gaussian(np.zeros(2), np.eye(2))
    with pytest.raises(DensityError):
        elliptical_marginal(g, [2])
    with pytest.raises(DensityError):
        elliptical_conditional(g, [0, 1], [0.0, 0.0])


def test_projection_of_standard_gaussian():
    g = gaussian(np.zeros(3), np.eye(3))
    a = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    p = project_density_1d(g, a)
    assert p.exact
    assert p.mu[0] == pytest.approx(0) and p.sigma[0, 0] == pytest.approx(1.0)
    t = sample(g, 50_000, 0) @ a
    assert stats.kstest(t, "norm").pvalue > 0.01


def test_projection_e1_of_sim2_is_gumbel():
    f = simulation2_density()
    p = project_density_1d(f, np.eye(10)[0])
    assert p.exact
    t = np.linspace(-8, 2, 11)
    assert np.allclose(p.pdf(t), stats.gumbel_r(loc=-5, scale=1).pdf(t), rtol=1e-10)


def test_projection_of_1d_density_is_itself():
    gum = GumbelDensity1D(-5.0, 1.0)
    assert project_density_1d(gum, [1.0]) is gum


def test_sampling_deterministic_and_clt():
    g = gaussian(np.zeros(3), np.eye(3))
    assert np.array_equal(sample(g, 100, 7), sample(g, 100, 7))
    big = sample(g, 100_000, 11)
    assert np.all(np.abs(big.mean(axis=0)) < 0.02)


def test_gumbel_sampler_matches_cdf():
    gum = GumbelDensity1D(-5.0, 1.0)
    x = gum.sample(20_000, np.random.default_rng(0))
    assert stats.kstest(x, gum.cdf).pvalue > 0.01
    assert x.mean() == pytest.approx(gum.mean(), abs=0.05)


def test_simulation3_layout():
    x = simulation3_sample(0)
    assert x.shape == (100, 20)
    out = np.zeros(20)
    out[0] = 2.0
    assert np.all(x[96:] == out)
    assert not np.any(np.all(x[:96] == out, axis=1))


def test_moment_match_recovers_mean():
    mu0 = np.array([1.0, -2.0, 0.5])
    sig0 = np.diag([1.0, 4.0, 0.25])
    x = sample(gaussian(mu0, sig0), 10_000, 5)
    g = moment_match_instrumental(x)
    assert np.all(np.abs(g.mu - mu0) <= 3 * np.sqrt(np.diag(sig0)) / 100)


def test_moment_match_constant_column():
    x = np.column_stack([np.random.default_rng(0).normal(size=50), np.ones(50)])
    with pytest.raises(DensityError, match="singular"):
        moment_match_instrumental(x)


def test_simulation1_instrumental_matches_moments():
    f = simulation1_density()
    x = sample(f, 200_000, 2)
    assert np.allclose(x.mean(axis=0), f.mean(), atol=0.05)
    assert np.allclose(np.cov(x, rowvar=False), f.covariance(), atol=0.1)


def test_paper_style_and_canonical():
    a = canonical_direction([-1.0, -1.0, 0.0])
    assert a[0] > 0
    assert np.allclose(paper_style([0.5, 1.0, 0.0]), [0.5, 1.0, 0.0])
    with pytest.raises(ValueError):
        canonical_direction([0.0, 0.0])


def test_principal_angle_same_span():
    span = np.array([[1, 0, 1], [1, 1, 0]], dtype=float)
    other = np.array([span[0] + span[1], span[0] - span[1]])
    assert principal_angle(span, other) < 1e-6
    # (1,-1,-1) is normal to the span
    assert principal_angle(span, [[0, 1, -1], [1, -1, -1]]) == pytest.approx(90.0)


unit3 = st.lists(st.floats(-1, 1, allow_nan=False), min_size=3, max_size=3).filter(
    lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=60, deadline=None)
@given(unit3, unit3)
def test_angle_is_symmetric_and_sign_free(a, b):
    a, b = np.array(a), np.array(b)
    assert angle_between(a, b) == pytest.approx(angle_between(b, -a), abs=1e-9)
    assert 0.0 <= angle_between(a, b) <= 90.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(0.2, 3))
def test_gumbel_logpdf_consistent(loc, scale):
    gum = GumbelDensity1D(loc, scale)
    t = np.linspace(loc - 3 * scale, loc + 6 * scale, 7)
    assert np.allclose(gum.pdf(t), stats.gumbel_r(loc=loc, scale=scale).pdf(t), rtol=1e-9)
