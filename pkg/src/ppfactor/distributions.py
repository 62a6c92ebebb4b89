"""Analytic densities: elliptical family, Gumbel, and product densities.

Every density exposes ``dim``, ``logpdf(x)``, ``pdf(x)`` and ``sample(m, rng)``.
Points are rows of an ``(n, dim)`` array; for one-dimensional densities any
array shape is accepted and treated elementwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, linalg, special


class DensityError(ValueError):
    """Invalid density parameters."""


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def _as_points(x, dim: int) -> tuple[np.ndarray, tuple]:
    """Return ``(points (n, dim), output_shape)``."""
    x = np.asarray(x, dtype=float)
    if dim == 1:
        return x.reshape(-1, 1), x.shape
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ValueError(f"expected a {dim}-vector, got shape {x.shape}")
        return x.reshape(1, dim), ()
    if x.shape[-1] != dim:
        raise ValueError(f"expected points with {dim} columns, got shape {x.shape}")
    return x.reshape(-1, dim), x.shape[:-1]


def _reshape_out(values: np.ndarray, shape: tuple):
    if shape == ():
        return float(values[0])
    return values.reshape(shape)


# ---------------------------------------------------------------------------
# Density generators


@dataclass(frozen=True)
class Generator:
    """Radial profile xi of an elliptical density in a given dimension.

    ``log_xi`` is evaluated on the half squared Mahalanobis distance. The
    ``source`` pair records the parent generator and dimension when this
    generator was obtained by marginalisation.
    """

    label: str
    log_xi: Callable[[np.ndarray], np.ndarray]
    source: tuple["Generator", int] | None = None

    def xi(self, t):
        return np.exp(self.log_xi(np.asarray(t, dtype=float)))

    def radial_integral(self, power: float) -> float:
        """Integral of t**power * xi(t) over (0, inf)."""
        if self.label == "gaussian":
            return math.gamma(power + 1.0)
        val, _ = integrate.quad(lambda t: t**power * float(self.xi(t)), 0.0, np.inf, limit=200)
        return val

    def norm_const(self, d: int) -> float:
        """c_d = Gamma(d/2) / (2 pi)^(d/2) / int_0^inf t^(d/2-1) xi(t) dt."""
        return math.gamma(d / 2) / (2 * math.pi) ** (d / 2) / self.radial_integral(d / 2 - 1)

    def second_moment_factor(self, d: int) -> float:
        """E[R^2] / d, so that Cov(X) = factor * Sigma."""
        return 2.0 * self.radial_integral(d / 2) / self.radial_integral(d / 2 - 1) / d

    def marginal(self, d_from: int, d_to: int) -> "Generator":
        """Generator of a ``d_to``-dimensional marginal of a ``d_from``-dimensional law."""
        if d_to == d_from or self.label == "gaussian":
            return self
        if not 1 <= d_to < d_from:
            raise DensityError("marginal dimension must be in [1, d)")
        parent, k = self, d_from - d_to

        def log_xi(t):
            t = np.atleast_1d(np.asarray(t, dtype=float))
            out = np.empty_like(t)
            for i, ti in enumerate(t.ravel()):
                v, _ = integrate.quad(
                    lambda s: s ** (k / 2 - 1) * float(parent.xi(ti + s)), 0.0, np.inf, limit=200
                )
                out.ravel()[i] = math.log(v) if v > 0 else -np.inf
            return out

        return Generator(f"{self.label}|marg{d_from}->{d_to}", log_xi, (self, d_from))


def _log_logistic_xi(t):
    t = np.asarray(t, dtype=float)
    return -t - 2.0 * np.log1p(np.exp(-t))


GENERATORS: dict[str, Generator] = {
    "gaussian": Generator("gaussian", lambda t: -np.asarray(t, dtype=float)),
    "logistic": Generator("logistic", _log_logistic_xi),
}


def register_generator(label: str, log_xi: Callable[[np.ndarray], np.ndarray]) -> Generator:
    """Add a generator family; its second radial moment must be finite."""
    gen = Generator(label, log_xi)
    if not np.isfinite(gen.radial_integral(1.5)):
        raise DensityError(f"generator {label!r} lacks finite second moments")
    GENERATORS[label] = gen
    return gen


def get_generator(label: str | Generator) -> Generator:
    if isinstance(label, Generator):
        return label
    try:
        return GENERATORS[label]
    except KeyError:
        raise DensityError(f"unknown generator {label!r}; known: {sorted(GENERATORS)}") from None


# ---------------------------------------------------------------------------
# Elliptical densities


class EllipticalDensity:
    """E_d(mu, Sigma, xi): c_d |Sigma|^(-1/2) xi((x-mu)' Sigma^-1 (x-mu) / 2)."""

    def __init__(self, mu, sigma, generator: str | Generator = "gaussian"):
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        d = mu.shape[0]
        if sigma.shape != (d, d):
            raise DensityError(f"sigma must be {d}x{d}, got {sigma.shape}")
        if not np.allclose(sigma, sigma.T, rtol=1e-10, atol=1e-12):
            raise DensityError("sigma must be symmetric")
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise DensityError("sigma must be positive definite") from None
        self.mu = mu
        self.sigma = sigma
        self.generator = get_generator(generator)
        self._chol = chol
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        self.norm_const = self.generator.norm_const(d)
        self._radial_cdf = None

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def is_gaussian(self) -> bool:
        return self.generator.label == "gaussian"

    def __repr__(self):
        return f"EllipticalDensity(dim={self.dim}, generator={self.generator.label!r})"

    def mahalanobis_half(self, pts: np.ndarray) -> np.ndarray:
        z = np.linalg.solve(self._chol, (pts - self.mu).T)
        return 0.5 * np.sum(z * z, axis=0)

    def logpdf(self, x):
        pts, shape = _as_points(x, self.dim)
        q = self.mahalanobis_half(pts)
        out = math.log(self.norm_const) - 0.5 * self._logdet + self.generator.log_xi(q)
        return _reshape_out(np.asarray(out, dtype=float), shape)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def covariance(self) -> np.ndarray:
        return self.generator.second_moment_factor(self.dim) * self.sigma

    def _sample_half_radius(self, m: int, rng: np.random.Generator) -> np.ndarray:
        # s = R^2/2 has density proportional to s^(d/2-1) xi(s); invert a tabulated CDF
        if self._radial_cdf is None:
            d = self.dim
            grid = np.concatenate([[0.0], np.geomspace(1e-8, 1e3, 4000)])
            dens = np.where(grid > 0, grid ** (d / 2 - 1), 0.0) * self.generator.xi(grid)
            cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
            self._radial_cdf = (grid, cdf / cdf[-1])
        grid, cdf = self._radial_cdf
        return np.interp(rng.random(m), cdf, grid)

    def sample(self, m: int, rng=None) -> np.ndarray:
        rng = as_rng(rng)
        if m < 1:
            raise ValueError("m must be >= 1")
        if self.is_gaussian:
            z = rng.standard_normal((m, self.dim))
        else:
            u = rng.standard_normal((m, self.dim))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            z = u * np.sqrt(2.0 * self._sample_half_radius(m, rng))[:, None]
        return self.mu + z @ self._chol.T


def gaussian(mu, sigma) -> EllipticalDensity:
    return EllipticalDensity(mu, sigma, "gaussian")


def normal_1d(mean: float, sd: float) -> EllipticalDensity:
    if sd <= 0:
        raise DensityError("sd must be positive")
    return EllipticalDensity([mean], [[sd * sd]], "gaussian")


def _check_index_set(idx, d: int) -> np.ndarray:
    idx = np.asarray(sorted(set(int(i) for i in idx)), dtype=int)
    if idx.size == 0:
        raise DensityError("index set must be nonempty")
    if idx.min() < 0 or idx.max() >= d:
        raise DensityError(f"indices must lie in [0, {d})")
    return idx


def elliptical_marginal(dist: EllipticalDensity, keep: Sequence[int]) -> EllipticalDensity:
    """Marginal law of the coordinates ``keep`` (0-based)."""
    keep = _check_index_set(keep, dist.dim)
    if keep.size == dist.dim:
        return dist
    gen = dist.generator.marginal(dist.dim, keep.size)
    return EllipticalDensity(dist.mu[keep], dist.sigma[np.ix_(keep, keep)], gen)


def elliptical_conditional(dist: EllipticalDensity, given: Sequence[int], values) -> EllipticalDensity:
    """Law of the remaining coordinates given ``x[given] = values``.

    Location and scale follow the Gaussian regression formulas. For
    non-Gaussian generators the conditional generator depends on the
    conditioning point; it is built as the shifted profile xi(q2 + t) where q2
    is the half Mahalanobis distance of ``values`` in the given block.
    """
    given = _check_index_set(given, dist.dim)
    if given.size >= dist.dim:
        raise DensityError("conditioning set must be a proper subset")
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if values.shape != (given.size,):
        raise DensityError(f"expected {given.size} conditioning values")
    rest = np.setdiff1d(np.arange(dist.dim), given)
    s11 = dist.sigma[np.ix_(rest, rest)]
    s12 = dist.sigma[np.ix_(rest, given)]
    s22 = dist.sigma[np.ix_(given, given)]
    try:
        sol = np.linalg.solve(s22, np.column_stack([values - dist.mu[given], s12.T]))
    except np.linalg.LinAlgError:
        raise DensityError("singular conditioning block") from None
    mu_c = dist.mu[rest] + s12 @ sol[:, 0]
    sig_c = s11 - s12 @ sol[:, 1:]
    sig_c = 0.5 * (sig_c + sig_c.T)
    if dist.is_gaussian:
        return EllipticalDensity(mu_c, sig_c, "gaussian")
    q2 = 0.5 * float((values - dist.mu[given]) @ sol[:, 0])
    parent = dist.generator
    gen = Generator(f"{parent.label}|cond", lambda t: parent.log_xi(np.asarray(t) + q2), (parent, dist.dim))
    return EllipticalDensity(mu_c, sig_c, gen)


def moment_match_instrumental(sample, family: str | Generator = "gaussian") -> EllipticalDensity:
    """Elliptical density with the sample mean and sample covariance."""
    x = np.asarray(sample, dtype=float)
    if x.ndim != 2:
        raise ValueError("sample must be an (m, d) matrix")
    m, d = x.shape
    if m <= d:
        raise DensityError(f"need more observations than dimensions (m={m}, d={d})")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    if np.linalg.matrix_rank(cov) < d or np.min(np.linalg.eigvalsh(cov)) <= 1e-12 * max(1.0, np.trace(cov)):
        raise DensityError("sample covariance is singular; regularise the data (drop constant or collinear columns)")
    gen = get_generator(family)
    return EllipticalDensity(x.mean(axis=0), cov / gen.second_moment_factor(d), gen)


# ---------------------------------------------------------------------------
# One-dimensional non-elliptical laws


@dataclass(frozen=True)
class GumbelDensity1D:
    """Gumbel (maximum) law: exp(-(z + exp(-z))) / scale, z = (x - loc) / scale."""

    loc: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise DensityError("Gumbel scale must be positive")

    dim = 1

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return -(z + np.exp(-z)) - math.log(self.scale)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        z = (np.asarray(x, dtype=float) - self.loc) / self.scale
        return np.exp(-np.exp(-z))

    def mean(self) -> float:
        return self.loc + np.euler_gamma * self.scale

    def var(self) -> float:
        return (math.pi * self.scale) ** 2 / 6.0

    def sample(self, m: int, rng=None) -> np.ndarray:
        u = as_rng(rng).random(m)
        return (self.loc - self.scale * np.log(-np.log(u))).reshape(m, 1)


@dataclass(frozen=True)
class AffineDensity1D:
    """Law of ``scale * Z + shift`` for a one-dimensional law of Z."""

    base: object
    scale: float
    shift: float = 0.0

    dim = 1

    def logpdf(self, t):
        t = np.asarray(t, dtype=float)
        return self.base.logpdf((t - self.shift) / self.scale) - math.log(abs(self.scale))

    def pdf(self, t):
        return np.exp(self.logpdf(t))

    def sample(self, m: int, rng=None) -> np.ndarray:
        return self.scale * self.base.sample(m, rng) + self.shift


# ---------------------------------------------------------------------------
# Product densities f(x) = |det A| n(a_{j+1}'x, ..) h_1(a_1'x) .. h_j(a_j'x)


class ProductDensity:
    """Density of X = A^-1 Y with independent blocks of Y.

    ``directions`` holds the rows a_1..a_d of A. The first ``j`` coordinates
    of Y follow the one-dimensional laws in ``nongaussian_part``; the last
    ``d - j`` follow ``elliptical_part`` (may be ``None`` when j = d).
    """

    def __init__(self, directions, nongaussian_part: Sequence, elliptical_part: EllipticalDensity | None = None):
        a = np.atleast_2d(np.asarray(directions, dtype=float))
        d = a.shape[1]
        if a.shape != (d, d):
            raise DensityError("directions must form a square d x d matrix")
        det = np.linalg.det(a)
        if abs(det) < 1e-12:
            raise DensityError("directions must be linearly independent")
        j = len(nongaussian_part)
        k = 0 if elliptical_part is None else elliptical_part.dim
        if j + k != d:
            raise DensityError(f"factor dimensions ({j} + {k}) do not add up to d={d}")
        self.directions = a
        self.nongaussian_part = tuple(nongaussian_part)
        self.elliptical_part = elliptical_part
        self.j = j
        self._inv = np.linalg.inv(a)
        self._log_abs_det = math.log(abs(det))

    @property
    def dim(self) -> int:
        return self.directions.shape[0]

    def __repr__(self):
        return f"ProductDensity(dim={self.dim}, j={self.j})"

    def logpdf(self, x):
        pts, shape = _as_points(x, self.dim)
        y = pts @ self.directions.T
        out = np.full(pts.shape[0], self._log_abs_det)
        for i, h in enumerate(self.nongaussian_part):
            out += h.logpdf(y[:, i])
        if self.elliptical_part is not None:
            out += np.asarray(self.elliptical_part.logpdf(y[:, self.j:]), dtype=float).reshape(-1)
        return _reshape_out(out, shape)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def sample(self, m: int, rng=None) -> np.ndarray:
        rng = as_rng(rng)
        cols = [h.sample(m, rng).reshape(m, 1) for h in self.nongaussian_part]
        if self.elliptical_part is not None:
            cols.append(self.elliptical_part.sample(m, rng).reshape(m, -1))
        y = np.hstack(cols)
        return y @ self._inv.T

    def mean(self) -> np.ndarray:
        my = [h.mean() if hasattr(h, "mean") else float(h.sample(200_000, 0).mean()) for h in self.nongaussian_part]
        if self.elliptical_part is not None:
            my.extend(self.elliptical_part.mu)
        return self._inv @ np.asarray(my)

    def covariance(self) -> np.ndarray:
        vy = [h.var() for h in self.nongaussian_part]
        blocks = np.zeros((self.dim, self.dim))
        blocks[: self.j, : self.j] = np.diag(vy)
        if self.elliptical_part is not None:
            blocks[self.j:, self.j:] = self.elliptical_part.covariance()
        return self._inv @ blocks @ self._inv.T


# ---------------------------------------------------------------------------
# Directions


def canonical_direction(a) -> np.ndarray:
    """Unit vector with its first nonzero coordinate positive."""
    a = np.asarray(a, dtype=float).ravel()
    norm = np.linalg.norm(a)
    if not norm > 0 or not np.isfinite(norm):
        raise ValueError("direction must be a finite nonzero vector")
    a = a / norm
    nz = np.flatnonzero(np.abs(a) > 1e-12)
    if a[nz[0]] < 0:
        a = -a
    return a


def paper_style(a) -> np.ndarray:
    """Rescale so the largest-magnitude coordinate equals +1."""
    a = canonical_direction(a)
    i = int(np.argmax(np.abs(a)))
    return a / a[i]


def angle_between(a, b) -> float:
    """Angle in degrees between the lines spanned by ``a`` and ``b``."""
    a = canonical_direction(a)
    b = canonical_direction(b)
    c = min(1.0, abs(float(a @ b)))
    return math.degrees(math.acos(c))


def principal_angle(span_a, span_b) -> float:
    """Largest principal angle (degrees) between two subspaces given by rows."""
    a = np.atleast_2d(np.asarray(span_a, dtype=float)).T
    b = np.atleast_2d(np.asarray(span_b, dtype=float)).T
    return math.degrees(float(np.max(linalg.subspace_angles(a, b))))


@dataclass(frozen=True)
class Direction:
    """Projection direction in canonical form, with its paper-style rescaling."""

    coords: np.ndarray = field(repr=False)

    @classmethod
    def of(cls, a) -> "Direction":
        return cls(canonical_direction(a))

    @property
    def canonical(self) -> bool:
        return bool(np.isclose(np.linalg.norm(self.coords), 1.0))

    @property
    def paper_style(self) -> np.ndarray:
        return paper_style(self.coords)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


# ---------------------------------------------------------------------------
# One-dimensional projections


@dataclass(frozen=True)
class SampledProjection1D:
    """Kernel-smoothed projection built from a large sample; approximate."""

    scalars: np.ndarray = field(repr=False)
    bandwidth: float
    exact: bool = False

    dim = 1

    def logpdf(self, t):
        t = np.asarray(t, dtype=float)
        z = (t.reshape(-1, 1) - self.scalars[None, :]) / self.bandwidth
        out = special.logsumexp(-0.5 * z * z, axis=1) - math.log(self.scalars.size * self.bandwidth * math.sqrt(2 * math.pi))
        return out.reshape(t.shape)

    def pdf(self, t):
        return np.exp(self.logpdf(t))


def project_density_1d(dist, a, *, n_mc: int = 20_000, rng_seed: int = 0):
    """Density of a'X. Exact for elliptical laws and single-factor directions.

    The returned handle carries ``exact`` (bool).
    """
    a = np.asarray(a, dtype=float).ravel()
    if not np.linalg.norm(a) > 0:
        raise ValueError("projection direction must be nonzero")
    if getattr(dist, "dim", None) == 1 and a.size == 1:
        out = AffineDensity1D(dist, float(a[0])) if a[0] != 1.0 else dist
        return _tag_exact(out, True)
    if isinstance(dist, EllipticalDensity):
        gen = dist.generator.marginal(dist.dim, 1)
        return _tag_exact(EllipticalDensity([a @ dist.mu], [[a @ dist.sigma @ a]], gen), True)
    if isinstance(dist, ProductDensity):
        c = np.linalg.solve(dist.directions.T, a)
        active = np.flatnonzero(np.abs(c) > 1e-12 * np.abs(c).max())
        if active.size == 1 and active[0] < dist.j:
            i = int(active[0])
            return _tag_exact(AffineDensity1D(dist.nongaussian_part[i], float(c[i])), True)
        if active.size and active.min() >= dist.j:
            ell = dist.elliptical_part
            cb = c[dist.j:]
            gen = ell.generator.marginal(ell.dim, 1)
            return _tag_exact(EllipticalDensity([cb @ ell.mu], [[cb @ ell.sigma @ cb]], gen), True)
    t = dist.sample(n_mc, rng_seed) @ a
    bw = 1.06 * float(np.std(t)) * n_mc ** (-0.2)
    return SampledProjection1D(np.sort(t), bw)


def _tag_exact(obj, exact: bool):
    try:
        object.__setattr__(obj, "exact", exact)
    except (AttributeError, TypeError):
        pass
    return obj


def sample(dist, m: int, rng_seed=None) -> np.ndarray:
    """I.i.d. draws as an ``(m, dim)`` matrix; deterministic given the seed."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return np.asarray(dist.sample(m, as_rng(rng_seed)), dtype=float).reshape(m, -1)


# ---------------------------------------------------------------------------
# Simulation designs


def simulation1_density() -> ProductDensity:
    """f(x) = Normal(x1+x2) Gumbel(x0+x2) Gumbel(x0+x1), normal (mean -5, sd 2)."""
    directions = [[1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]
    return ProductDensity(
        directions,
        [GumbelDensity1D(-3.0, 4.0), GumbelDensity1D(1.0, 1.0)],
        normal_1d(-5.0, 2.0),
    )


def gumbel_times_normal(d: int, loc: float = -5.0, scale: float = 1.0) -> ProductDensity:
    """Gumbel(loc, scale) on x0 times a standard normal on the other d-1 coordinates."""
    return ProductDensity(np.eye(d), [GumbelDensity1D(loc, scale)], gaussian(np.zeros(d - 1), np.eye(d - 1)))


def simulation2_density() -> ProductDensity:
    return gumbel_times_normal(10)


def simulation3_sample(rng_seed=None, m: int = 100, n_outliers: int = 4, d: int = 20) -> np.ndarray:
    """``m - n_outliers`` draws of Gumbel x N(0, I) plus copies of (2, 0, ..., 0)."""
    x = sample(gumbel_times_normal(d), m - n_outliers, rng_seed)
    out = np.zeros((n_outliers, d))
    out[:, 0] = 2.0
    return np.vstack([x, out])
