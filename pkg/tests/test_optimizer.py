import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppfactor.distributions import angle_between
from ppfactor.optimizer import AnnealConfig, OptimizationError, anneal, polish, random_direction, tangent_basis

E1 = np.eye(3)[0]


def neg_sq(a):
    return -float(a @ E1) ** 2


def test_anneal_finds_axis():
    res = anneal(neg_sq, "min", AnnealConfig(n_steps=5000, n_restarts=2, rng_seed=3), 3)
    assert angle_between(res.best_direction, E1) < 2.0
    assert res.best_value == pytest.approx(neg_sq(res.best_direction))
    assert res.converged_flag


def test_anneal_max_sense():
    res = anneal(lambda a: float(a @ E1) ** 2, "max", AnnealConfig(n_steps=1000, n_restarts=2), 3)
    assert angle_between(res.best_direction, E1) < 2.0


def test_constant_objective_converges():
    res = anneal(lambda a: 1.0, "min", AnnealConfig(n_steps=50, n_restarts=3), 4)
    assert np.linalg.norm(res.best_direction) == pytest.approx(1.0)
    assert res.converged_flag


def test_running_best_monotone():
    res = anneal(neg_sq, "min", AnnealConfig(n_steps=300, n_restarts=1), 3)
    rb = res.running_best("min")
    assert np.all(np.diff(rb) <= 0)


def test_deterministic_and_thread_count_free(monkeypatch):
    cfg = AnnealConfig(n_steps=300, n_restarts=4, rng_seed=9)
    monkeypatch.setenv("PPFACTOR_THREADS", "1")
    r1 = anneal(neg_sq, "min", cfg, 3)
    monkeypatch.setenv("PPFACTOR_THREADS", "4")
    r4 = anneal(neg_sq, "min", cfg, 3)
    assert np.array_equal(r1.best_direction, r4.best_direction)
    assert r1.restart_values == r4.restart_values


def test_polish_from_ten_degrees():
    t = math.radians(10)
    start = np.array([math.cos(t), math.sin(t), 0.0])
    res = polish(neg_sq, start, "min")
    assert angle_between(res.best_direction, E1) < 1.0


def test_polish_keeps_optimum():
    res = polish(neg_sq, E1, "min")
    assert angle_between(res.best_direction, E1) < 1e-3


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_polish_never_worsens(seed):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(3, 3))

    def obj(a):
        return float(np.sin(a @ w @ a) + a[1])

    start = random_direction(3, rng)
    res = polish(obj, start, "min", steps=10)
    assert res.best_value <= obj(start) + 1e-12


def test_dimension_one():
    res = anneal(lambda a: 2.0, "min", AnnealConfig(), 1)
    assert res.best_direction.tolist() == [1.0]


def test_nonfinite_majority_aborts():
    with pytest.raises(OptimizationError):
        anneal(lambda a: math.nan, "min", AnnealConfig(n_steps=50, n_restarts=1), 3)


def test_tangent_basis_orthonormal():
    a = random_direction(5, np.random.default_rng(1))
    b = tangent_basis(a)
    assert b.shape == (4, 5)
    assert np.allclose(b @ a, 0, atol=1e-12)
    assert np.allclose(b @ b.T, np.eye(4), atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        AnnealConfig(cooling=1.5)
    with pytest.raises(ValueError):
        AnnealConfig(n_restarts=0)
