"""Iterative projection pursuit: the g^(k) ledger, rejection sampling, stop test, driver."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import stats

from .distributions import (
    EllipticalDensity,
    as_rng,
    canonical_direction,
    moment_match_instrumental,
    paper_style,
)
from .divergence import (
    CriterionContext,
    CriterionSettings,
    CriterionValue,
    KLEstimate,
    K0_values,
    build_context,
    criterion_value,
    huber_objective,
    kl_analytic,
    m_values,
    M_values,
    ours_objective,
    plugin_kl,
    projection_handles,
)
from .kde import GriddedDensity1D, KernelEstimate, ProjectedKernelEstimate, check_nu, default_nu, reference_density_level, theta_sequence
from .optimizer import AnnealConfig, OptResult, anneal

log = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Transformed density


@dataclass(frozen=True)
class Factor:
    """One ratio f_a / g^(j-1)_a; the denominator is floored at ``log_floor``."""

    direction: np.ndarray
    numerator: object
    denominator: object
    log_floor: float = -math.inf

    def log_ratio(self, x: np.ndarray) -> np.ndarray:
        t = x @ self.direction
        num = np.asarray(self.numerator.logpdf(t), dtype=float).reshape(t.shape)
        den = np.asarray(self.denominator.logpdf(t), dtype=float).reshape(t.shape)
        return num - np.maximum(den, self.log_floor)


@dataclass(frozen=True)
class TransformedDensity:
    """g^(k)(x) = g(x) prod_j num_j(a_j'x) / den_j(a_j'x)."""

    base: EllipticalDensity
    factors: tuple = ()

    @property
    def k(self) -> int:
        return len(self.factors)

    @property
    def dim(self) -> int:
        return self.base.dim

    @property
    def directions(self) -> np.ndarray:
        return np.array([f.direction for f in self.factors]).reshape(-1, self.dim)

    def log_ratio(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros(x.shape[0])
        for f in self.factors:
            out += f.log_ratio(x)
        return out

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.base.logpdf(x), dtype=float).reshape(-1) + self.log_ratio(x)

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))

    def sample(self, m: int, rng=None) -> np.ndarray:
        return sample_transformed(self, m, rng).sample


def update_g(g_prev: TransformedDensity, a, f_proj, g_proj, log_floor: float = -math.inf) -> TransformedDensity:
    """Append the factor f_proj / g_proj along ``a``."""
    factor = Factor(np.asarray(a, dtype=float).ravel(), f_proj, g_proj, log_floor)
    return TransformedDensity(g_prev.base, g_prev.factors + (factor,))


def mc_normalization(gk: TransformedDensity, n_mc: int = 100_000, rng_seed=None) -> tuple[float, float]:
    """Importance estimate of the integral of g^(k) under its base: (mean, se)."""
    y = gk.base.sample(n_mc, as_rng(rng_seed))
    w = np.exp(gk.log_ratio(y))
    return float(w.mean()), float(w.std(ddof=1) / math.sqrt(n_mc))


@dataclass(frozen=True)
class RejectionSample:
    sample: np.ndarray = field(repr=False)
    acceptance_rate: float
    envelope: float
    n_proposed: int
    n_violations: int


def sample_transformed(gk: TransformedDensity, m: int, rng_seed=None, *, n_pilot: int = 10_000,
                       min_rate: float = 1e-3, max_restarts: int = 20) -> RejectionSample:
    """Rejection sampling from g^(k) with proposal g.

    The envelope starts at 1.2 times the largest ratio seen on a pilot
    draw. A proposal above the envelope enlarges it and restarts sampling.
    """
    rng = as_rng(rng_seed)
    if gk.k == 0:
        return RejectionSample(gk.base.sample(m, rng), 1.0, 1.0, m, 0)
    pilot = gk.base.sample(n_pilot, rng)
    log_env = math.log(1.2) + float(np.max(gk.log_ratio(pilot)))
    violations = 0
    proposed_total = 0
    while True:
        kept: list[np.ndarray] = []
        n_kept = proposed = 0
        restart = False
        while n_kept < m:
            batch = max(1000, int(2 * (m - n_kept) * math.exp(log_env)))
            batch = min(batch, 200_000)
            y = gk.base.sample(batch, rng)
            lr = gk.log_ratio(y)
            proposed += batch
            top = float(np.max(lr))
            if top > log_env:
                violations += 1
                log_env = math.log(1.2) + top
                restart = True
                break
            acc = np.log(rng.random(batch)) < lr - log_env
            kept.append(y[acc])
            n_kept += int(acc.sum())
            if proposed >= 20_000 and n_kept / proposed < min_rate:
                raise SamplingError(
                    f"acceptance rate {n_kept / proposed:.2e} below {min_rate:g}; "
                    "the envelope is too loose or g is a poor proposal for g^(k)"
                )
        proposed_total += proposed
        if not restart:
            out = np.concatenate(kept)[:m]
            return RejectionSample(out, n_kept / proposed, math.exp(log_env), proposed_total, violations)
        if violations > max_restarts:
            raise SamplingError(f"envelope violated {violations} times")


# ---------------------------------------------------------------------------
# Stop test


def threshold_quantile(alpha: float, mode: str) -> float:
    """Normal quantile used by the stop test.

    ``paper``: Phi^-1(1.5 - alpha), which is 0.2533 at alpha = 0.9 and is
    compared with the studentised mean s. ``corrected``: Phi^-1(alpha),
    compared with sqrt(n) s.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if mode == "paper":
        if alpha <= 0.5:
            raise ValueError("paper threshold needs alpha > 0.5")
        return float(stats.norm.ppf(1.5 - alpha))
    if mode == "corrected":
        return float(stats.norm.ppf(alpha))
    raise ValueError(f"unknown threshold mode {mode!r}")


def nominal_acceptance(alpha: float, mode: str) -> float:
    """Asymptotic H0 acceptance probability of the stop test."""
    q = threshold_quantile(alpha, mode)
    return float(stats.norm.cdf(q))


@dataclass(frozen=True)
class StopTestResult:
    statistic: float
    p_value: float
    alpha: float
    threshold: float
    in_ellipsoid: bool
    decision: str
    mode: str = "paper"
    n: int = 0
    degenerate: bool = False
    in_ellipsoid_paper: bool = False
    in_ellipsoid_corrected: bool = False

    @property
    def z(self) -> float:
        return math.sqrt(self.n) * self.statistic


def stop_test_values(values: np.ndarray, alpha: float = 0.9, mode: str = "paper") -> StopTestResult:
    """Test K = 0 from per-point criterion values.

    s = mean / sd. In paper mode H0 is accepted iff s <= q / sqrt(n); in
    corrected mode iff sqrt(n) s <= q. The p-value is 1 - Phi(sqrt(n) s).
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    q = threshold_quantile(alpha, mode)
    cv = CriterionValue(float(values.mean()), float(values.var(ddof=1)) if n > 1 else 0.0, n)
    degenerate = not cv.variance_hat > (1e-12 * max(1.0, float(np.abs(values).max()))) ** 2
    if degenerate:
        log.warning("degenerate statistic: criterion variance is zero")
        return StopTestResult(math.nan, math.nan, alpha, q / math.sqrt(n), False, "continue", mode, n, True)
    s = cv.value / math.sqrt(cv.variance_hat)
    z = math.sqrt(n) * s
    paper_ok = s <= threshold_quantile(alpha, "paper") / math.sqrt(n) if alpha > 0.5 else False
    corr_ok = z <= threshold_quantile(alpha, "corrected")
    inside = paper_ok if mode == "paper" else corr_ok
    return StopTestResult(
        statistic=s,
        p_value=float(stats.norm.sf(z)),
        alpha=alpha,
        threshold=q / math.sqrt(n),
        in_ellipsoid=bool(inside),
        decision="stop" if inside else "continue",
        mode=mode,
        n=n,
        in_ellipsoid_paper=bool(paper_ok),
        in_ellipsoid_corrected=bool(corr_ok),
    )


def stop_test(ctx: CriterionContext, b, alpha: float = 0.9, mode: str = "paper",
              method: str = "ours") -> StopTestResult:
    values = M_values(ctx, b) if method == "ours" else m_values(ctx, b)
    return stop_test_values(values, alpha, mode)


# ---------------------------------------------------------------------------
# Steps


def _objective(ctx: CriterionContext, method: str, basis: np.ndarray | None):
    base = ours_objective if method == "ours" else huber_objective

    def obj(a: np.ndarray) -> float:
        if basis is not None and basis.size:
            a = a - basis.T @ (basis @ a)
            nrm = np.linalg.norm(a)
            if nrm < 1e-8:
                return math.nan
            a = a / nrm
        return base(ctx, a)

    return obj


def _step(ctx: CriterionContext, cfg: AnnealConfig, method: str, sense: str,
          avoid: np.ndarray | None = None) -> tuple[np.ndarray, CriterionValue, OptResult]:
    res = anneal(_objective(ctx, method, avoid), sense, cfg, ctx.dim)
    a = res.best_direction
    if avoid is not None and avoid.size:
        a = canonical_direction(a - avoid.T @ (avoid @ a))
    return a, criterion_value(ctx, a, method), res


def pursuit_step_ours(ctx: CriterionContext, cfg: AnnealConfig, avoid=None):
    """Minimiser of the empirical K(g f_a / g_a, f) and its criterion value."""
    a, value, _ = _step(ctx, cfg, "ours", "min", avoid)
    return a, value


def pursuit_step_huber(ctx: CriterionContext, cfg: AnnealConfig, avoid=None):
    """Maximiser of the empirical K(g_a, f_a) and its criterion value."""
    a, value, _ = _step(ctx, cfg, "huber", "max", avoid)
    return a, value


# ---------------------------------------------------------------------------
# Driver


@dataclass(frozen=True)
class PursuitConfig:
    """Settings of one pursuit run.

    y_factor: Y-sample size as a multiple of the X-sample size.
    nu: truncation exponent; defaults to 0.8 / (4 + d).
    orthogonalize: search each new direction in the orthogonal complement
        of the previous ones.
    """

    method: str = "ours"
    alpha: float = 0.9
    threshold_mode: str = "paper"
    nu: float | None = None
    k_max: int | None = None
    y_factor: int = 4
    leave_one_out: bool = False
    marginal_bandwidth: bool = False
    matched_g_bandwidth: bool = True
    smooth_g: bool = True
    initial_test: bool = True
    orthogonalize: bool = False
    tail: float = 1e-3
    n_pilot: int = 10_000
    denominator_draws: int = 10_000
    anneal: AnnealConfig = AnnealConfig()

    def __post_init__(self):
        if self.method not in ("ours", "huber"):
            raise ValueError("method must be 'ours' or 'huber'")
        if self.threshold_mode not in ("paper", "corrected"):
            raise ValueError("threshold_mode must be 'paper' or 'corrected'")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.y_factor < 1:
            raise ValueError("y_factor must be >= 1")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    direction: np.ndarray
    criterion: CriterionValue
    test: StopTestResult
    paper_style_direction: np.ndarray
    n_evals: int
    converged: bool
    trace: list = field(repr=False, default_factory=list)


@dataclass
class PursuitReport:
    method: str
    iterations: list
    final_density: TransformedDensity
    kl_trace: list
    kl_se: list
    config_echo: dict
    seed: int
    initial_test: StopTestResult | None = None
    stopped: bool = False
    n_kept: int = 0
    n_dropped: int = 0
    theta: float = 0.0
    clamp_count: int = 0
    sampling: list = field(default_factory=list)
    failure: str | None = None

    @property
    def k(self) -> int:
        return self.final_density.k

    @property
    def directions(self) -> np.ndarray:
        return self.final_density.directions

    @property
    def conclusion(self) -> str:
        if self.failure:
            return f"aborted: {self.failure}"
        return f"f=g^({self.k})" if self.stopped else f"no stop within {self.k} iterations"

    def orthogonality(self) -> float:
        """Largest |a_i . a_j| over distinct recovered directions."""
        dirs = self.directions
        if len(dirs) < 2:
            return 0.0
        gram = np.abs(dirs @ dirs.T)
        np.fill_diagonal(gram, 0.0)
        return float(gram.max())


def _denominator(gk, a, h, n, seed, n_pilot):
    """Kernel estimate of the projection of g^(k) from a large untruncated draw."""
    ty = sample_transformed(gk, n, np.random.default_rng(seed), n_pilot=n_pilot).sample @ a
    return GriddedDensity1D.from_kde(ProjectedKernelEstimate(a, ty, h))


def _truncate_y(y: np.ndarray, g, theta: float, level: float) -> np.ndarray:
    keep = np.asarray(g.logpdf(y)) >= math.log(theta * level)
    return y[keep]


@dataclass(frozen=True)
class PursuitSetup:
    """Truncated data and the first criterion context of a run."""

    context: CriterionContext
    g: EllipticalDensity
    settings: CriterionSettings
    theta: float
    level: float
    m: int
    n_y: int
    nu: float
    k_max: int
    iter_seeds: list

    def rebuild(self, dens, ys) -> CriterionContext:
        ctx = self.context
        return build_context(ctx.x, ys, dens, f_est=ctx.f_est, g_base=self.g, theta=self.theta,
                             m_original=self.m, settings=self.settings)


def prepare_context(f_sample, g: EllipticalDensity | None = None, cfg: PursuitConfig = PursuitConfig(),
                    seed: int = 0) -> PursuitSetup:
    """Truncate X, draw and truncate Y from ``g``, and build the iteration-1 context."""
    x = np.atleast_2d(np.asarray(f_sample, dtype=float))
    m, d = x.shape
    if m <= d:
        raise ValueError(f"need more observations than dimensions (m={m}, d={d})")
    nu = default_nu(d) if cfg.nu is None else cfg.nu
    check_nu(nu, d)
    k_max = d if cfg.k_max is None else cfg.k_max
    if g is None:
        g = moment_match_instrumental(x)
    s_y, s_iter = np.random.SeedSequence(seed).spawn(2)

    theta = theta_sequence(m, nu)
    level = reference_density_level(g.covariance(), cfg.tail)
    f_m = KernelEstimate.fit(x)
    xk = x[f_m.pdf(x) >= theta * level]
    if len(xk) < d + 2:
        raise ValueError(f"truncation too aggressive: kept {len(xk)} of {m} rows")
    f_est = KernelEstimate.fit(xk)
    n_y = cfg.y_factor * m
    y = _truncate_y(g.sample(n_y, np.random.default_rng(s_y)), g, theta, level)
    settings = CriterionSettings(leave_one_out=cfg.leave_one_out, marginal_bandwidth=cfg.marginal_bandwidth,
                                 matched_g_bandwidth=cfg.matched_g_bandwidth, smooth_g=cfg.smooth_g,
                                 tail=cfg.tail)
    ctx = build_context(xk, y, TransformedDensity(g), f_est=f_est, g_base=g, theta=theta, m_original=m,
                        settings=settings)
    return PursuitSetup(ctx, g, settings, theta, level, m, n_y, nu, k_max, s_iter.spawn(k_max + 1))


def run_pursuit(f_sample, g: EllipticalDensity | None = None, method: str | None = None,
                cfg: PursuitConfig = PursuitConfig(), seed: int = 0) -> PursuitReport:
    """Run the pursuit on an i.i.d. sample of f until the stop test fires or k_max is reached."""
    if method is not None:
        cfg = replace(cfg, method=method)
    setup = prepare_context(f_sample, g, cfg, seed)
    ctx, g, theta, level = setup.context, setup.g, setup.theta, setup.level
    n_y, k_max, iter_seeds = setup.n_y, setup.k_max, setup.iter_seeds
    n = ctx.x.shape[0]
    gk = ctx.g
    report = PursuitReport(
        method=cfg.method, iterations=[], final_density=gk, kl_trace=[], kl_se=[],
        config_echo=_echo(cfg, setup.nu, k_max), seed=seed, theta=theta, n_kept=n, n_dropped=setup.m - n,
    )
    context = setup.rebuild
    first = plugin_kl(ctx)
    report.kl_trace.append(first.value)
    report.kl_se.append(first.se)
    if cfg.initial_test:
        t0 = stop_test_values(K0_values(ctx), cfg.alpha, cfg.threshold_mode)
        report.initial_test = t0
        if t0.in_ellipsoid:
            report.stopped = True
            report.clamp_count = ctx.clamps.count
            return report

    sense = "min" if cfg.method == "ours" else "max"
    clamps = 0
    for k in range(1, k_max + 1):
        s_anneal, s_sample, s_denom = iter_seeds[k - 1].spawn(3)
        acfg = replace(cfg.anneal, rng_seed=int(s_anneal.generate_state(1)[0]))
        avoid = gk.directions if cfg.orthogonalize and gk.k else None
        try:
            a, value, opt = _step(ctx, acfg, cfg.method, sense, avoid)
            test = stop_test(ctx, a, cfg.alpha, cfg.threshold_mode, cfg.method)
        except (FloatingPointError, RuntimeError) as exc:
            report.failure = str(exc)
            report.clamp_count = clamps + ctx.clamps.count
            raise PursuitAborted(report) from exc
        report.iterations.append(IterationRecord(
            k=k, direction=a, criterion=value, test=test, paper_style_direction=paper_style(a),
            n_evals=opt.n_evals, converged=opt.converged_flag, trace=opt.trace,
        ))
        fa, ga = projection_handles(ctx, a)
        try:
            if not ctx.g_exact_projection and cfg.denominator_draws:
                ga = _denominator(gk, a, ga.bandwidth, cfg.denominator_draws, s_denom, cfg.n_pilot)
            gk = update_g(gk, a, fa, ga, ctx.log_floor_1d(a))
            report.final_density = gk
            clamps += ctx.clamps.count
            drawn = sample_transformed(gk, n_y, np.random.default_rng(s_sample), n_pilot=cfg.n_pilot)
        except SamplingError as exc:
            report.failure = str(exc)
            report.clamp_count = clamps
            raise PursuitAborted(report) from exc
        report.sampling.append({"k": k, "acceptance_rate": drawn.acceptance_rate,
                                "envelope": drawn.envelope, "violations": drawn.n_violations})
        y = _truncate_y(drawn.sample, gk, theta, level)
        ctx = context(gk, y)
        est = plugin_kl(ctx)
        report.kl_trace.append(est.value)
        report.kl_se.append(est.se)
        if test.in_ellipsoid:
            report.stopped = True
            break
    report.clamp_count = clamps + ctx.clamps.count
    return report


class PursuitAborted(RuntimeError):
    """Numerical failure inside a pursuit; carries the partial report."""

    def __init__(self, report: PursuitReport):
        super().__init__(report.failure)
        self.report = report


def _echo(cfg: PursuitConfig, nu: float, k_max: int) -> dict:
    out = asdict(cfg)
    out["nu"] = nu
    out["k_max"] = k_max
    return out


def kl_to_truth(report: PursuitReport, true_gk, n_mc: int = 20_000, rng_seed=0) -> KLEstimate:
    """Monte-Carlo K(estimated g^(k), true g^(k)) over draws of the estimate."""
    return kl_analytic(report.final_density, true_gk, n_mc=n_mc, rng_seed=rng_seed)

