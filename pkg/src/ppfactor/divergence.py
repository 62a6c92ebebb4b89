"""Relative entropy, the projection criteria M and m, and their empirical estimates.

Both criteria are evaluated on a :class:`CriterionContext`, which freezes the
truncated X sample (law f), a Monte-Carlo sample Y from the current
instrumental density g^(k-1), and every direction-independent quantity.

Conventions, with r_b(x) = g(x) f_b(b'x) / (f(x) g_b(b'x)):

* ours:  M(b, a, x) = E_q[ln r_b] - (r_b(x) - 1),  q = g f_a / g_a,
  so P_n M(a, a) estimates K(g f_a / g_a, f);
* Huber: m(b, a, x) = E_{g}[ln(g_b / f_b)] - (g_b(b'x) / f_b(b'x) - 1),
  so P_n m(a, a) estimates K(g_a, f_a).

Expectations against q are importance-weighted averages over Y with weight
f_a / g_a. Denominators are clamped at the truncation floor.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .distributions import EllipticalDensity, as_rng
from .kde import (
    LOG_SQRT_2PI,
    KernelEstimate,
    ProjectedKernelEstimate,
    bandwidth_factor,
    bandwidth_rule,
    reference_density_level,
)


class CriterionError(FloatingPointError):
    """Nonfinite or unsupported criterion evaluation."""


def phi(x):
    """phi(x) = x ln x - x + 1 for x > 0."""
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0)):
        raise ValueError("phi is defined for x > 0 only")
    out = x * np.log(x) - x + 1.0
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Analytic KL


@dataclass(frozen=True)
class KLEstimate:
    value: float
    se: float
    method: str

    def __float__(self):
        return self.value


def gaussian_kl(mu_p, cov_p, mu_q, cov_q) -> float:
    """Closed form K(p, q) = int p ln(p/q) for two Gaussians."""
    mu_p, mu_q = np.atleast_1d(mu_p).astype(float), np.atleast_1d(mu_q).astype(float)
    cov_p, cov_q = np.atleast_2d(cov_p).astype(float), np.atleast_2d(cov_q).astype(float)
    d = mu_p.size
    diff = mu_q - mu_p
    sol = np.linalg.solve(cov_q, np.column_stack([cov_p, diff]))
    logdet_p = np.linalg.slogdet(cov_p)[1]
    logdet_q = np.linalg.slogdet(cov_q)[1]
    return 0.5 * (np.trace(sol[:, :d]) + diff @ sol[:, d] - d + logdet_q - logdet_p)


def _is_gaussian(dist) -> bool:
    return isinstance(dist, EllipticalDensity) and dist.is_gaussian


def _logpdf(dist, pts) -> np.ndarray:
    return np.asarray(dist.logpdf(pts), dtype=float).reshape(-1)


def kl_analytic(p, q, n_mc: int = 100_000, rng_seed=None) -> KLEstimate:
    """K(p, q) = int phi(p/q) q = int p ln(p/q).

    Closed form for two Gaussians; otherwise Monte Carlo over draws of ``p``
    (or over draws of ``q`` with the phi form when ``p`` cannot be sampled).
    """
    if _is_gaussian(p) and _is_gaussian(q):
        return KLEstimate(float(gaussian_kl(p.mu, p.sigma, q.mu, q.sigma)), 0.0, "closed-form")
    rng = as_rng(rng_seed)
    if hasattr(p, "sample"):
        pts = np.asarray(p.sample(n_mc, rng), dtype=float)
        vals = _logpdf(p, pts) - _logpdf(q, pts)
        method = "mc-p"
    else:
        pts = np.asarray(q.sample(n_mc, rng), dtype=float)
        lr = _logpdf(p, pts) - _logpdf(q, pts)
        ratio = np.exp(lr)
        vals = special.xlogy(ratio, ratio) - ratio + 1.0
        method = "mc-q"
    bad = ~np.isfinite(vals)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise CriterionError(f"nonfinite log-ratio at point {pts[i].tolist()}")
    return KLEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size)), method)


# ---------------------------------------------------------------------------
# Criterion context


@dataclass(frozen=True)
class CriterionValue:
    value: float
    variance_hat: float
    n_used: int
    degenerate: bool = False

    @property
    def statistic(self) -> float:
        """Studentised value (Var^)^(-1/2) P_n."""
        if self.degenerate:
            return math.nan
        return self.value / math.sqrt(self.variance_hat)


@dataclass(frozen=True)
class CriterionSettings:
    """Numerical choices shared by both criteria.

    leave_one_out: evaluate kernel estimates at their own sample points
        without the self term.
    marginal_bandwidth: project f_n with bandwidth sqrt(a' H a) instead of
        the 1-D rule on the projected scalars.
    matched_g_bandwidth: for k >= 2, smooth the Y projections with the
        bandwidth of f's projection instead of their own 1-D rule.
    smooth_g: in the d-dimensional ratio g / f_n, replace g by its
        convolution with f_n's kernel (exact for a Gaussian base, a kernel
        estimate of the Y sample otherwise) so both sides carry the same
        smoothing bias.
    tail: tail probability defining the density unit of the floors.
    """

    leave_one_out: bool = False
    marginal_bandwidth: bool = False
    matched_g_bandwidth: bool = True
    smooth_g: bool = False
    tail: float = 1e-3


@dataclass
class ClampCounter:
    count: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def add(self, k: int) -> None:
        with self._lock:
            self.count += int(k)


@dataclass(frozen=True)
class CriterionContext:
    """Frozen inputs of one pursuit iteration.

    ``g`` is the current instrumental density g^(k-1) (anything with
    ``logpdf``); ``g_base`` its elliptical base; ``g_ratio`` the version of
    g used in the d-dimensional ratio g / f_n (``g`` unless smoothed). When ``g`` has no ratio
    factors its projections are exact, otherwise they are kernel estimates
    of the Y projections.
    """

    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    f_est: KernelEstimate = field(repr=False)
    g: object = field(repr=False)
    g_base: EllipticalDensity = field(repr=False)
    g_ratio: object = field(repr=False)
    g_exact_projection: bool
    theta: float
    y_rate: float
    settings: CriterionSettings
    log_f_x: np.ndarray = field(repr=False)
    log_f_y: np.ndarray = field(repr=False)
    log_g_x: np.ndarray = field(repr=False)
    log_g_y: np.ndarray = field(repr=False)
    log_floor_d: float
    log_gap: float
    log_unit_1d: float
    clamps: ClampCounter = field(default_factory=ClampCounter, repr=False, compare=False)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def log_level_1d(self, a: np.ndarray) -> float:
        """Log density unit along ``a``, scaled by the spread of a'Y under the base."""
        var = float(a @ self.g_base.sigma @ a) * self.g_base.generator.second_moment_factor(self.dim)
        return self.log_unit_1d - 0.5 * math.log(var)

    def log_floor_1d(self, a: np.ndarray) -> float:
        return self.log_gap + self.log_level_1d(a)


def build_context(x, y, g, *, f_est: KernelEstimate | None = None, g_base: EllipticalDensity | None = None,
                  theta: float = 1.0, m_original: int | None = None,
                  settings: CriterionSettings = CriterionSettings()) -> CriterionContext:
    """Precompute the direction-independent pieces of both criteria."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n, d = x.shape
    if f_est is None:
        f_est = KernelEstimate.fit(x)
    if g_base is None:
        g_base = getattr(g, "base", g)
    factors = getattr(g, "factors", ())
    exact = len(factors) == 0 and isinstance(g_base, EllipticalDensity)
    m = n if m_original is None else m_original
    y_rate = bandwidth_factor(m, d) ** 2
    log_gap = math.log(max(theta - y_rate, 1e-3 * theta))
    log_floor_d = log_gap + math.log(reference_density_level(g_base.covariance(), settings.tail))
    loo = settings.leave_one_out
    log_f_x = f_est.loo_logpdf() if loo and f_est.n == n else f_est.logpdf(x)
    if not settings.smooth_g:
        g_ratio = g
    elif exact and g_base.is_gaussian:
        g_ratio = EllipticalDensity(g_base.mu, g_base.sigma + np.diag(f_est.bandwidths ** 2))
    else:
        g_ratio = KernelEstimate(y, f_est.bandwidths)
    log_g_x = g_ratio.logpdf(x)
    if isinstance(g_ratio, KernelEstimate) and loo:
        log_g_y = g_ratio.loo_logpdf()
    else:
        log_g_y = g_ratio.logpdf(y)
    return CriterionContext(
        x=x, y=y, f_est=f_est, g=g, g_base=g_base, g_ratio=g_ratio, g_exact_projection=exact,
        theta=theta, y_rate=y_rate, settings=settings,
        log_f_x=np.asarray(log_f_x), log_f_y=np.asarray(f_est.logpdf(y)),
        log_g_x=np.asarray(log_g_x, dtype=float), log_g_y=np.asarray(log_g_y, dtype=float),
        log_floor_d=log_floor_d, log_gap=log_gap,
        log_unit_1d=math.log(reference_density_level([[1.0]], settings.tail)),
    )


# ---------------------------------------------------------------------------
# Projection pieces


@dataclass(frozen=True)
class _Projection:
    log_fa_x: np.ndarray
    log_fa_y: np.ndarray
    log_ga_x: np.ndarray
    log_ga_y: np.ndarray
    y_keep: np.ndarray
    floor: float


def projection_handles(ctx: CriterionContext, a):
    """(f_{a,n}, g_a) one-dimensional density handles at direction ``a``.

    g_a is exact when g has no ratio factors, otherwise a kernel estimate of
    the projected Y sample.
    """
    a = np.asarray(a, dtype=float).ravel()
    fa = ctx.f_est.project(a, marginal=ctx.settings.marginal_bandwidth)
    if ctx.g_exact_projection:
        base = ctx.g_base
        ga = EllipticalDensity([a @ base.mu], [[a @ base.sigma @ a]], base.generator.marginal(base.dim, 1))
    else:
        ty = ctx.y @ a
        h = fa.bandwidth if ctx.settings.matched_g_bandwidth else float(bandwidth_rule(ty)[0])
        ga = ProjectedKernelEstimate(a, ty, h)
    return fa, ga


def _gaussian_1d_logpdf(t, mean, var):
    return -0.5 * (t - mean) ** 2 / var - 0.5 * math.log(var) - LOG_SQRT_2PI


def _floored(ctx: CriterionContext, v: np.ndarray, floor: float) -> np.ndarray:
    low = v < floor
    if low.any():
        ctx.clamps.add(low.sum())
        v = np.maximum(v, floor)
    return v


def _project(ctx: CriterionContext, a: np.ndarray, *, filter_y: bool) -> _Projection:
    """Log f_{a,n} and log g_a at the projected X and Y samples.

    Values that serve as denominators (g_a for ours, f_{a,n} for Huber) are
    floored by the caller through ``floor``.
    """
    tx = ctx.x @ a
    ty = ctx.y @ a
    fa, ga = projection_handles(ctx, a)
    loo = ctx.settings.leave_one_out
    log_fa_x = fa.logpdf(tx, exclude_self=loo)
    log_fa_y = fa.logpdf(ty)
    if ctx.g_exact_projection and ctx.g_base.is_gaussian:
        mean, var = float(a @ ctx.g_base.mu), float(a @ ctx.g_base.sigma @ a)
        log_ga_x = _gaussian_1d_logpdf(tx, mean, var)
        log_ga_y = _gaussian_1d_logpdf(ty, mean, var)
    elif ctx.g_exact_projection:
        log_ga_x, log_ga_y = ga.logpdf(tx), ga.logpdf(ty)
    else:
        log_ga_x = ga.logpdf(tx)
        log_ga_y = ga.logpdf(ty, exclude_self=loo)
    level = ctx.log_level_1d(a)
    if filter_y:
        y_keep = log_ga_y >= math.log(ctx.theta) + level
        if not y_keep.any():
            y_keep = np.ones(ty.size, dtype=bool)
    else:
        y_keep = np.ones(ty.size, dtype=bool)
    return _Projection(log_fa_x, log_fa_y, log_ga_x, log_ga_y, y_keep, ctx.log_gap + level)


def _clamped(ctx: CriterionContext, v: np.ndarray) -> np.ndarray:
    return _floored(ctx, v, ctx.log_floor_d)


def _unit(a) -> np.ndarray:
    a = np.asarray(a, dtype=float).ravel()
    nrm = np.linalg.norm(a)
    if not nrm > 0:
        raise ValueError("direction must be nonzero")
    return a


# ---------------------------------------------------------------------------
# Our criterion


def _ours_pieces(ctx: CriterionContext, a: np.ndarray):
    p = _project(ctx, a, filter_y=True)
    log_f_x = _clamped(ctx, ctx.log_f_x)
    log_f_y = _clamped(ctx, ctx.log_f_y)
    log_ga_x = _floored(ctx, p.log_ga_x, p.floor)
    log_ga_y = _floored(ctx, p.log_ga_y[p.y_keep], p.floor)
    log_r_x = ctx.log_g_x + p.log_fa_x - log_f_x - log_ga_x
    log_w_y = p.log_fa_y[p.y_keep] - log_ga_y
    log_r_y = log_w_y + (ctx.log_g_y - log_f_y)[p.y_keep]
    return log_r_x, log_w_y, log_r_y


def _finite(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        raise CriterionError(f"nonfinite {what}")
    return values


def inner_ours(ctx: CriterionContext, b, a) -> float:
    """E_q[ln r_b] with q = g f_a / g_a, importance-weighted over Y."""
    a, b = _unit(a), _unit(b)
    pa = _project(ctx, a, filter_y=True)
    pb = pa if np.array_equal(a, b) else _project(ctx, b, filter_y=False)
    keep = pa.y_keep
    log_w = pa.log_fa_y[keep] - _floored(ctx, pa.log_ga_y[keep], pa.floor)
    log_r = (pb.log_fa_y[keep] - _floored(ctx, pb.log_ga_y[keep], pb.floor)
             + (ctx.log_g_y - _clamped(ctx, ctx.log_f_y))[keep])
    return float(np.mean(np.exp(log_w) * log_r))


def criterion_M(ctx: CriterionContext, b, a, x) -> float:
    """M(b, a, x) at an arbitrary point ``x``."""
    b = _unit(b)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    fb, gb = projection_handles(ctx, b)
    t = x @ b
    log_r = (float(np.asarray(ctx.g_ratio.logpdf(x)).ravel()[0]) + float(fb.logpdf(t)[0])
             - max(float(ctx.f_est.logpdf(x)[0]), ctx.log_floor_d)
             - max(float(np.asarray(gb.logpdf(t)).ravel()[0]), ctx.log_floor_1d(b)))
    return _finite(np.asarray(inner_ours(ctx, b, a) - math.expm1(log_r)), "criterion M").item()


def M_values(ctx: CriterionContext, a) -> np.ndarray:
    """M(a, a, X_i) for every retained X_i."""
    log_r_x, log_w_y, log_r_y = _ours_pieces(ctx, _unit(a))
    b0 = np.mean(np.exp(log_w_y) * log_r_y)
    return _finite(b0 - np.expm1(log_r_x), "criterion M")


def ours_objective(ctx: CriterionContext, a) -> float:
    """P_n M(a, a); the fast path used by the optimizer."""
    return float(np.mean(M_values(ctx, a)))


def B0(ctx: CriterionContext, a) -> float:
    """(1/n) sum_Y ln{ f_a g / (g_a f_n) } f_a / g_a."""
    _, log_w_y, log_r_y = _ours_pieces(ctx, _unit(a))
    return float(np.mean(np.exp(log_w_y) * log_r_y))


def B0_prime(ctx: CriterionContext, a) -> float:
    """(1/n) sum_X (r_a(X_i) - 1); P_n M(a, a) = B0 - B0'."""
    log_r_x, _, _ = _ours_pieces(ctx, _unit(a))
    return float(np.mean(np.expm1(log_r_x)))


# ---------------------------------------------------------------------------
# Huber's criterion


def _huber_pieces(ctx: CriterionContext, b: np.ndarray):
    """log(g_b / f_{b,n}) at the projected Y and X samples."""
    p = _project(ctx, b, filter_y=False)
    log_y = p.log_ga_y - _floored(ctx, p.log_fa_y, p.floor)
    log_x = p.log_ga_x - _floored(ctx, p.log_fa_x, p.floor)
    return log_y, log_x


def inner_huber(ctx: CriterionContext, b, a=None) -> float:
    """E_Y[ln(g_b / f_b)(b'Y)]; equals K(g_b, f_b) in the limit."""
    log_y, _ = _huber_pieces(ctx, _unit(b))
    return float(np.mean(log_y))


def criterion_m(ctx: CriterionContext, b, a, x) -> float:
    """m(b, a, x) at an arbitrary point ``x``.

    The inner integral is taken against the law of Y, so it does not depend
    on ``a``.
    """
    b = _unit(b)
    t = np.asarray(x, dtype=float).reshape(1, -1) @ b
    fb, gb = projection_handles(ctx, b)
    log_ratio = (float(np.asarray(gb.logpdf(t)).ravel()[0])
                 - max(float(fb.logpdf(t)[0]), ctx.log_floor_1d(b)))
    return _finite(np.asarray(inner_huber(ctx, b, a) - math.expm1(log_ratio)), "criterion m").item()


def m_values(ctx: CriterionContext, a) -> np.ndarray:
    """m(a, a, X_i) for every retained X_i."""
    log_y, log_x = _huber_pieces(ctx, _unit(a))
    return _finite(np.mean(log_y) - np.expm1(log_x), "criterion m")


def huber_objective(ctx: CriterionContext, a) -> float:
    """P_n m(a, a)."""
    return float(np.mean(m_values(ctx, a)))


def A0(ctx: CriterionContext, a) -> float:
    """(1/n) sum_Y ln{ g_a / f_a }(a'Y_i)."""
    return inner_huber(ctx, a)


def A0_prime(ctx: CriterionContext, a) -> float:
    """(1/n) sum_X (g_a / f_a - 1)(a'X_i); P_n m(a, a) = A0 - A0'."""
    _, log_x = _huber_pieces(ctx, _unit(a))
    return float(np.mean(np.expm1(log_x)))


# ---------------------------------------------------------------------------
# Empirical criteria with their variances


def _value(values: np.ndarray) -> CriterionValue:
    n = values.size
    var = float(np.var(values, ddof=1)) if n > 1 else 0.0
    scale = max(1.0, float(np.max(np.abs(values))))
    degenerate = not var > (1e-12 * scale) ** 2
    return CriterionValue(float(np.mean(values)), var, n, degenerate)


def empirical_K_ours(ctx: CriterionContext, a) -> CriterionValue:
    """Estimate of K(g f_a / g_a, f): mean of M(a, a, X_i)."""
    return _value(M_values(ctx, a))


def empirical_K_huber(ctx: CriterionContext, a) -> CriterionValue:
    """Estimate of K(g_a, f_a): mean of m(a, a, X_i)."""
    return _value(m_values(ctx, a))


def variance_of_criterion(ctx: CriterionContext, b, method: str = "ours") -> float:
    if ctx.n < 2:
        raise ValueError("variance needs n >= 2")
    vals = M_values(ctx, b) if method == "ours" else m_values(ctx, b)
    return float(np.var(vals, ddof=1))


def criterion_value(ctx: CriterionContext, a, method: str) -> CriterionValue:
    if method == "ours":
        return empirical_K_ours(ctx, a)
    if method == "huber":
        return empirical_K_huber(ctx, a)
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# Direction-free estimate of K(g, f)


def K0_values(ctx: CriterionContext) -> np.ndarray:
    """Per-point values E_Y[ln(g/f_n)] - (g/f_n(X_i) - 1); their mean estimates K(g, f)."""
    log_f_x = _clamped(ctx, ctx.log_f_x)
    log_f_y = _clamped(ctx, ctx.log_f_y)
    inner = np.mean(ctx.log_g_y - log_f_y)
    return _finite(inner - np.expm1(ctx.log_g_x - log_f_x), "K(g, f) integrand")


def plugin_kl(ctx: CriterionContext) -> KLEstimate:
    """Plug-in K(g, f) with a standard error combining the X and Y averages."""
    log_f_y = _clamped(ctx, ctx.log_f_y)
    log_f_x = _clamped(ctx, ctx.log_f_x)
    ypart = ctx.log_g_y - log_f_y
    xpart = np.expm1(ctx.log_g_x - log_f_x)
    value = float(np.mean(ypart) - np.mean(xpart))
    se = math.sqrt(np.var(ypart, ddof=1) / ypart.size + np.var(xpart, ddof=1) / xpart.size)
    return KLEstimate(_finite(np.asarray(value), "plug-in K").item(), se, "plug-in")
