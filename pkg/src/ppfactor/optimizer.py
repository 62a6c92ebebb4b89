"""Simulated annealing on the unit sphere with a coordinate-search polish."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .distributions import canonical_direction

Objective = Callable[[np.ndarray], float]


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnnealConfig:
    """Annealing schedule.

    The starting temperature is ``initial_temp`` times the interquartile
    range of ``n_probes`` objective values at random directions. The proposal
    scale shrinks like sqrt(T / T0) and never drops below ``min_sigma``.
    """

    n_steps: int = 4000
    initial_temp: float = 1.0
    cooling: float = 0.995
    proposal_sigma: float = 0.3
    n_restarts: int = 4
    rng_seed: int = 0
    polish_steps: int = 60
    n_probes: int = 50
    min_sigma: float = 0.01
    converge_tol: float = 1e-2

    def __post_init__(self):
        if not 0.0 < self.cooling < 1.0:
            raise ValueError("cooling must lie in (0, 1)")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.proposal_sigma > 0:
            raise ValueError("proposal_sigma must be > 0")
        if not self.initial_temp > 0:
            raise ValueError("initial_temp must be > 0")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")


@dataclass
class OptResult:
    best_direction: np.ndarray
    best_value: float
    trace: list = field(default_factory=list, repr=False)
    n_evals: int = 0
    converged_flag: bool = False
    n_nonfinite: int = 0
    restart_values: list = field(default_factory=list)

    def running_best(self, sense: str = "min") -> np.ndarray:
        vals = np.array([v for _, _, v in self.trace], dtype=float)
        return np.minimum.accumulate(vals) if sense == "min" else np.maximum.accumulate(vals)


def _sign(sense: str) -> float:
    if sense not in ("min", "max"):
        raise ValueError("sense must be 'min' or 'max'")
    return 1.0 if sense == "min" else -1.0


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def random_direction(d: int, rng: np.random.Generator) -> np.ndarray:
    while True:
        v = rng.standard_normal(d)
        n = np.linalg.norm(v)
        if n > 1e-12:
            return v / n


def tangent_basis(a: np.ndarray) -> np.ndarray:
    """Orthonormal basis (rows) of the tangent space of the sphere at ``a``."""
    d = a.size
    q, _ = np.linalg.qr(np.column_stack([a, np.eye(d)]))
    return q[:, 1:d].T


class _Counter:
    """Wraps an objective: rejects nonfinite values and aborts when they dominate."""

    def __init__(self, objective: Objective, sign: float):
        self.objective = objective
        self.sign = sign
        self.evals = 0
        self.bad = 0

    def __call__(self, a: np.ndarray) -> float:
        self.evals += 1
        try:
            v = float(self.objective(a))
        except FloatingPointError:
            v = math.nan
        if not math.isfinite(v):
            self.bad += 1
            if self.evals >= 20 and self.bad > 0.5 * self.evals:
                raise OptimizationError(
                    f"objective nonfinite in {self.bad} of {self.evals} evaluations (last at {a.tolist()})"
                )
            return math.inf
        return self.sign * v


def polish(objective: Objective, start, sense: str = "min", steps: int = 60, *,
           step0: float = 0.05, tol: float = 1e-4) -> OptResult:
    """Coordinate search over tangent directions with a halving step.

    Moves are accepted only on strict improvement, so the returned value is
    never worse than the value at ``start``.
    """
    f = _Counter(objective, _sign(sense))
    a = _unit(np.asarray(start, dtype=float).ravel())
    best = f(a)
    trace = [(0, 0.0, f.sign * best)]
    step = step0
    for sweep in range(1, steps + 1):
        improved = False
        for e in tangent_basis(a):
            for s in (step, -step):
                cand = _unit(a + s * e)
                v = f(cand)
                if v < best:
                    a, best, improved = cand, v, True
                    break
        trace.append((sweep, step, f.sign * best))
        if not improved:
            step *= 0.5
            if step < tol:
                break
    out = canonical_direction(a)
    return OptResult(out, f.sign * best, trace, f.evals, True, f.bad)


def _initial_temperature(f: _Counter, cfg: AnnealConfig, d: int, rng: np.random.Generator) -> float:
    vals = np.array([f(random_direction(d, rng)) for _ in range(cfg.n_probes)])
    vals = vals[np.isfinite(vals)]
    spread = float(np.subtract(*np.percentile(vals, [75, 25]))) if vals.size >= 4 else 0.0
    return cfg.initial_temp * (spread if spread > 0 else 1.0)


def _anneal_once(objective: Objective, sign: float, cfg: AnnealConfig, d: int,
                 seed: np.random.SeedSequence, start: np.ndarray | None):
    rng = np.random.default_rng(seed)
    f = _Counter(objective, sign)
    t0 = _initial_temperature(f, cfg, d, rng)
    a = _unit(np.asarray(start, dtype=float)) if start is not None else random_direction(d, rng)
    cur = f(a)
    best_a, best = a, cur
    temp = t0
    trace = [(0, temp, sign * cur)]
    for step in range(1, cfg.n_steps + 1):
        sigma = max(cfg.min_sigma, cfg.proposal_sigma * math.sqrt(temp / t0))
        z = rng.standard_normal(d) * sigma
        z -= (z @ a) * a
        cand = _unit(a + z)
        v = f(cand)
        u = rng.random()
        if v <= cur or (math.isfinite(v) and u < math.exp(-(v - cur) / temp)):
            a, cur = cand, v
            if cur < best:
                best_a, best = a, cur
        temp *= cfg.cooling
        trace.append((step, temp, sign * cur))
    if cfg.polish_steps > 0:
        pol = polish(objective, best_a, "min" if sign > 0 else "max", cfg.polish_steps)
        f.evals += pol.n_evals
        f.bad += pol.n_nonfinite
        if sign * pol.best_value <= best:
            best_a, best = pol.best_direction, sign * pol.best_value
    return best_a, best, trace, f.evals, f.bad


def _thread_count(n: int) -> int:
    try:
        cap = int(os.environ.get("PPFACTOR_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(n, cap))


def anneal(objective: Objective, sense: str, cfg: AnnealConfig, d: int,
           starts: Sequence | None = None) -> OptResult:
    """Best direction over ``cfg.n_restarts`` independent annealing runs.

    Each restart owns a child of ``SeedSequence(cfg.rng_seed)``. Restarts run
    on up to ``PPFACTOR_THREADS`` threads; the objective must be safe for
    concurrent calls. Ties between restarts go to the lowest restart index.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    sign = _sign(sense)
    if d == 1:
        a = np.ones(1)
        v = float(objective(a))
        return OptResult(a, v, [(0, 0.0, v)], 1, True, 0, [v])
    seeds = np.random.SeedSequence(cfg.rng_seed).spawn(cfg.n_restarts)
    starts = list(starts) if starts is not None else []
    jobs = [(seeds[i], starts[i] if i < len(starts) else None) for i in range(cfg.n_restarts)]
    with ThreadPoolExecutor(max_workers=_thread_count(cfg.n_restarts)) as pool:
        runs = list(pool.map(lambda job: _anneal_once(objective, sign, cfg, d, *job), jobs))
    values = [r[1] for r in runs]
    k = int(np.argmin(values))
    best_a = canonical_direction(runs[k][0])
    best = float(objective(best_a))
    finite = [v for v in values if math.isfinite(v)]
    spread = max(finite) - min(finite) if finite else math.inf
    converged = spread <= cfg.converge_tol * max(1.0, abs(values[k]))
    return OptResult(
        best_direction=best_a,
        best_value=best,
        trace=runs[k][2],
        n_evals=sum(r[3] for r in runs) + 1,
        converged_flag=bool(converged),
        n_nonfinite=sum(r[4] for r in runs),
        restart_values=[sign * v for v in values],
    )
