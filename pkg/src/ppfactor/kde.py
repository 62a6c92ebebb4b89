"""Gaussian product-kernel density estimates and sample truncation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

LOG_SQRT_2PI = 0.5 * math.log(2 * math.pi)


def bandwidth_factor(m: int, d: int) -> float:
    """AMISE-rate factor m^(-1/(4+d))."""
    if m < 2:
        raise ValueError("bandwidth rule needs m >= 2")
    return float(m) ** (-1.0 / (4 + d))


def bandwidth_rule(sample) -> np.ndarray:
    """Per-coordinate bandwidths h_j = sd_j * m^(-1/(4+d))."""
    x = np.asarray(sample, dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    m, d = x.shape
    sd = x.std(axis=0, ddof=1) if m > 1 else np.zeros(d)
    if np.any(~(sd > 0)):
        bad = np.flatnonzero(~(sd > 0)).tolist()
        raise ValueError(f"zero variance in coordinate(s) {bad}; bandwidth undefined")
    return sd * bandwidth_factor(m, d)


def _log_kernel_sum(query: np.ndarray, points: np.ndarray, h: np.ndarray, exclude_self: bool) -> np.ndarray:
    z = (query[:, None, :] - points[None, :, :]) / h
    logk = -0.5 * np.sum(z * z, axis=2)
    if exclude_self:
        np.fill_diagonal(logk, -np.inf)
    return special.logsumexp(logk, axis=1)


@dataclass(frozen=True)
class KernelEstimate:
    """f_n(x) = (1/n) sum_i prod_l phi((x_l - X_il)/h_l) / h_l."""

    points: np.ndarray = field(repr=False)
    bandwidths: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        h = np.atleast_1d(np.asarray(self.bandwidths, dtype=float))
        if h.shape != (pts.shape[1],):
            raise ValueError("one bandwidth per coordinate required")
        if np.any(~(h > 0)):
            raise ValueError("bandwidths must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bandwidths", h)

    @classmethod
    def fit(cls, sample, bandwidths=None) -> "KernelEstimate":
        x = np.atleast_2d(np.asarray(sample, dtype=float))
        return cls(x, bandwidth_rule(x) if bandwidths is None else bandwidths)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def _norm(self, n: int) -> float:
        return math.log(n) + self.dim * LOG_SQRT_2PI + float(np.sum(np.log(self.bandwidths)))

    def logpdf(self, x, chunk: int = 2048) -> np.ndarray:
        q = np.asarray(x, dtype=float)
        single = q.ndim == 1
        q = q.reshape(-1, self.dim)
        out = np.concatenate(
            [_log_kernel_sum(q[i:i + chunk], self.points, self.bandwidths, False) for i in range(0, len(q), chunk)]
        ) if len(q) else np.empty(0)
        out = out - self._norm(self.n)
        return float(out[0]) if single else out

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def loo_logpdf(self) -> np.ndarray:
        """Leave-one-out log density at each retained point."""
        if self.n < 2:
            raise ValueError("leave-one-out needs at least two points")
        return _log_kernel_sum(self.points, self.points, self.bandwidths, True) - self._norm(self.n - 1)

    def project(self, a, marginal: bool = False) -> "ProjectedKernelEstimate":
        """1-D KDE of the scalars a'X_i.

        By default the bandwidth follows the 1-D rule on the scalars. With
        ``marginal=True`` it is sqrt(a' H a), which makes the result the exact
        marginal of this estimate but oversmooths it for large d.
        """
        a = np.asarray(a, dtype=float).ravel()
        t = self.points @ a
        if marginal:
            h = math.sqrt(float(np.sum((a * self.bandwidths) ** 2)))
        else:
            h = float(bandwidth_rule(t)[0])
        return ProjectedKernelEstimate(a, t, h)


@dataclass(frozen=True)
class ProjectedKernelEstimate:
    """One-dimensional Gaussian KDE of projected scalars a'X_i."""

    direction: np.ndarray = field(repr=False)
    scalars: np.ndarray = field(repr=False)
    bandwidth: float

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        object.__setattr__(self, "scalars", np.asarray(self.scalars, dtype=float).ravel())

    dim = 1
    exact = False

    @property
    def n(self) -> int:
        return self.scalars.size

    def logpdf(self, t, *, exclude_self: bool = False, chunk: int = 2048) -> np.ndarray:
        """Log density at ``t``; ``exclude_self`` requires ``t`` to be the scalars themselves."""
        t = np.asarray(t, dtype=float)
        flat = t.reshape(-1)
        n = self.n
        if exclude_self:
            if flat.size != n:
                raise ValueError("exclude_self needs one query per sample point")
            n -= 1
        out = np.empty(flat.size)
        for i in range(0, flat.size, chunk):
            z = (flat[i:i + chunk, None] - self.scalars[None, :]) / self.bandwidth
            logk = -0.5 * z * z
            if exclude_self:
                rows = np.arange(logk.shape[0])
                logk[rows, rows + i] = -np.inf
            out[i:i + chunk] = special.logsumexp(logk, axis=1)
        out -= math.log(n * self.bandwidth) + LOG_SQRT_2PI
        return out.reshape(t.shape)

    def pdf(self, t, *, exclude_self: bool = False):
        return np.exp(self.logpdf(t, exclude_self=exclude_self))


@dataclass(frozen=True)
class GriddedDensity1D:
    """A 1-D log density tabulated on a grid and linearly interpolated.

    Beyond the grid the log density is extended linearly from the end
    slopes, which overstates light tails rather than sending them to -inf.
    """

    grid: np.ndarray = field(repr=False)
    log_values: np.ndarray = field(repr=False)
    bandwidth: float

    dim = 1
    exact = False

    @classmethod
    def from_kde(cls, est: ProjectedKernelEstimate, n_grid: int = 4096, pad: float = 8.0) -> "GriddedDensity1D":
        lo = est.scalars.min() - pad * est.bandwidth
        hi = est.scalars.max() + pad * est.bandwidth
        grid = np.linspace(lo, hi, n_grid)
        return cls(grid, est.logpdf(grid), est.bandwidth)

    def logpdf(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        g, v = self.grid, self.log_values
        out = np.interp(t, g, v)
        left_slope = (v[1] - v[0]) / (g[1] - g[0])
        right_slope = (v[-1] - v[-2]) / (g[-1] - g[-2])
        out = np.where(t < g[0], v[0] + left_slope * (t - g[0]), out)
        return np.where(t > g[-1], v[-1] + right_slope * (t - g[-1]), out)

    def pdf(self, t):
        return np.exp(self.logpdf(t))


def kde_eval(est: KernelEstimate, x) -> float:
    return float(est.pdf(np.asarray(x, dtype=float).reshape(-1, est.dim))[0])


def kde_project_eval(est: ProjectedKernelEstimate, t) -> float:
    return float(est.pdf(np.asarray([t], dtype=float))[0])


# ---------------------------------------------------------------------------
# Truncation


def theta_sequence(m: int, nu: float) -> float:
    """theta_m = m^(-nu)."""
    return float(m) ** (-nu)


def default_nu(d: int) -> float:
    return 0.8 / (4 + d)


def check_nu(nu: float, d: int) -> None:
    if not 0.0 < nu < 1.0 / (4 + d):
        raise ValueError(f"nu={nu} violates 0 < nu < 1/(4+d) = {1.0 / (4 + d):.6g}")


def reference_density_level(cov, tail: float = 1e-3) -> float:
    """Gaussian density with covariance ``cov`` on its (1 - tail) Mahalanobis contour.

    Used as the unit in which the dimensionless floor theta_m is expressed.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    d = cov.shape[0]
    q = stats.chi2.ppf(1.0 - tail, d)
    logdet = np.linalg.slogdet(cov)[1]
    return math.exp(-0.5 * q - d * LOG_SQRT_2PI - 0.5 * logdet)


@dataclass(frozen=True)
class TruncatedSample:
    kept_x: np.ndarray = field(repr=False)
    kept_y: np.ndarray = field(repr=False)
    theta: float
    nu: float
    m_original: int
    floor_x: float
    floor_y: float
    dropped_x: int
    dropped_y: int

    @property
    def n(self) -> int:
        return self.kept_x.shape[0]


def truncate(x_sample, y_sample, f_m: KernelEstimate, g_floor, nu: float, *, scale_x: float = 1.0,
             scale_y: float | None = None, paired: bool = False, min_keep: int | None = None) -> TruncatedSample:
    """Keep X_i with f_m(X_i) >= theta_m * scale_x and Y_i with g(Y_i) >= theta_m * scale_y.

    With ``paired=True`` both kept sets are cut to the smaller count by
    dropping trailing rows; otherwise the two sizes may differ.
    """
    x = np.atleast_2d(np.asarray(x_sample, dtype=float))
    y = np.atleast_2d(np.asarray(y_sample, dtype=float))
    m, d = x.shape
    check_nu(nu, d)
    theta = theta_sequence(m, nu)
    scale_y = scale_x if scale_y is None else scale_y
    fx = np.exp(f_m.logpdf(x))
    gy = np.exp(np.asarray(g_floor.logpdf(y), dtype=float))
    keep_x = fx >= theta * scale_x
    keep_y = gy >= theta * scale_y
    kx, ky = x[keep_x], y[keep_y]
    if paired:
        n = min(len(kx), len(ky))
        kx, ky = kx[:n], ky[:n]
    need = d + 2 if min_keep is None else min_keep
    if len(kx) < need or len(ky) < need:
        raise ValueError(f"truncation too aggressive: kept {len(kx)} X and {len(ky)} Y rows, need {need}")
    return TruncatedSample(kx, ky, theta, nu, m, theta * scale_x, theta * scale_y,
                           int(m - keep_x.sum()), int(len(y) - keep_y.sum()))
