import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from ppfactor.distributions import gaussian, sample, simulation2_density
from ppfactor.kde import (
    GriddedDensity1D,
    KernelEstimate,
    ProjectedKernelEstimate,
    bandwidth_factor,
    bandwidth_rule,
    check_nu,
    kde_eval,
    kde_project_eval,
    theta_sequence,
    truncate,
)


def test_bandwidth_factor_values():
    # quoted as 0.5720; the exact value 0.57186 rounds to 0.5719
    assert bandwidth_factor(50, 3) == pytest.approx(0.5720, abs=5e-4)
    assert bandwidth_factor(100, 20) == pytest.approx(0.8254, abs=1e-4)
    assert bandwidth_factor(400, 4) / bandwidth_factor(100, 4) == pytest.approx(4 ** (-1 / 8))


def test_bandwidth_rule_scales_with_sd():
    x = sample(gaussian(np.zeros(3), np.diag([1.0, 4.0, 9.0])), 50, 0)
    h = bandwidth_rule(x)
    assert np.allclose(h, x.std(axis=0, ddof=1) * 50 ** (-1 / 7))
    with pytest.raises(ValueError, match="zero variance"):
        bandwidth_rule(np.ones((10, 2)))


def test_single_point_kernel():
    est = KernelEstimate(np.zeros((1, 1)), [1.0])
    assert kde_eval(est, [0.0]) == pytest.approx(0.3989423, abs=1e-7)
    p = ProjectedKernelEstimate(np.ones(1), [2.5], 0.4)
    assert kde_project_eval(p, 2.5) == pytest.approx(1 / math.sqrt(2 * math.pi) / 0.4)


def test_kde_consistency_at_zero():
    x = sample(gaussian([0.0], [[1.0]]), 10_000, 1)
    assert kde_eval(KernelEstimate.fit(x), [0.0]) == pytest.approx(0.3989, abs=0.02)


def test_two_point_symmetry():
    est = KernelEstimate(np.array([[-1.0], [1.0]]), [1.0])
    assert kde_eval(est, [0.0]) == pytest.approx(stats.norm.pdf(1.0))
    assert kde_eval(est, [0.3]) == pytest.approx(kde_eval(est, [-0.3]))


def test_projected_kde_of_gaussian():
    x = sample(gaussian(np.zeros(3), np.eye(3)), 10_000, 2)
    a = np.array([1.0, 2.0, -1.0]) / math.sqrt(6)
    p = KernelEstimate.fit(x).project(a)
    assert kde_project_eval(p, 0.0) == pytest.approx(0.3989, abs=0.02)


def test_projected_kde_near_gumbel_mode():
    x = sample(simulation2_density(), 10_000, 3)
    p = KernelEstimate.fit(x).project(np.eye(10)[0])
    truth = stats.gumbel_r(loc=-5, scale=1).pdf(-5.0)
    assert kde_project_eval(p, -5.0) == pytest.approx(truth, rel=0.15)


def test_marginal_projection_bandwidth():
    x = sample(gaussian(np.zeros(2), np.eye(2)), 200, 4)
    est = KernelEstimate.fit(x)
    a = np.array([0.6, 0.8])
    assert est.project(a, marginal=True).bandwidth == pytest.approx(float(np.linalg.norm(a * est.bandwidths)))
    assert est.project(a).bandwidth == pytest.approx(bandwidth_rule(x @ a)[0])


def test_loo_matches_refit():
    x = sample(gaussian(np.zeros(2), np.eye(2)), 30, 5)
    est = KernelEstimate.fit(x)
    loo = est.loo_logpdf()
    other = KernelEstimate(np.delete(x, 7, axis=0), est.bandwidths)
    assert loo[7] == pytest.approx(other.logpdf(x[7]), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(1, 4), st.integers(0, 10_000))
def test_kde_integrates_to_one_along_line(m, d, seed):
    x = np.random.default_rng(seed).normal(size=(m, d))
    if np.any(x.std(axis=0, ddof=1) == 0):
        return
    est = KernelEstimate.fit(x)
    p = est.project(np.eye(d)[0], marginal=True)
    t = np.linspace(x[:, 0].min() - 10 * p.bandwidth, x[:, 0].max() + 10 * p.bandwidth, 4001)
    assert np.trapezoid(p.pdf(t), t) == pytest.approx(1.0, abs=1e-4)
    # the marginal-bandwidth projection is the exact marginal of the d-dim estimate
    if d == 1:
        assert np.allclose(p.pdf(t[::400]), est.pdf(t[::400].reshape(-1, 1)))


def test_truncation_inactive_floor():
    x = sample(gaussian(np.zeros(2), np.eye(2)), 200, 6)
    g = gaussian(np.zeros(2), np.eye(2))
    f_m = KernelEstimate.fit(x)
    tr = truncate(x, x, f_m, g, nu=0.1, scale_x=1e-12)
    assert tr.n == 200 and tr.dropped_x == 0


def test_truncation_excludes_tail_point():
    x = sample(gaussian(np.zeros(2), np.eye(2)), 200, 7)
    x[0] = [40.0, 40.0]
    f_m = KernelEstimate.fit(x)
    g = gaussian(np.zeros(2), np.eye(2))
    tr = truncate(x, x[1:], f_m, g, nu=0.1, scale_x=1e-3)
    assert not np.any(np.all(tr.kept_x == [40.0, 40.0], axis=1))
    assert tr.theta == pytest.approx(theta_sequence(200, 0.1))


def test_nu_range():
    check_nu(0.1, 3)
    with pytest.raises(ValueError, match="1/\\(4\\+d\\)"):
        check_nu(0.5, 3)
    with pytest.raises(ValueError):
        check_nu(0.0, 3)


def test_gridded_density_tracks_kernel_estimate():
    t = np.random.default_rng(4).gumbel(size=3000)
    est = ProjectedKernelEstimate(np.ones(1), t, 0.3)
    grid = GriddedDensity1D.from_kde(est)
    q = np.linspace(t.min(), t.max(), 500)
    assert np.max(np.abs(grid.logpdf(q) - est.logpdf(q))) < 1e-3
    far = np.array([t.min() - 20.0, t.max() + 20.0])
    assert np.all(np.isfinite(grid.logpdf(far))) and np.all(grid.logpdf(far) >= est.logpdf(far))
    xs = np.linspace(t.min() - 5, t.max() + 5, 20001)
    assert np.trapezoid(grid.pdf(xs), xs) == pytest.approx(1.0, abs=1e-3)
