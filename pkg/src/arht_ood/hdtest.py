"""Closed-form high-dimensional two-sample mean statistics.

Pooled covariance, classical Hotelling T^2, the ridge-regularised variant
(RHT) and its standardised, adaptively tuned form (ARHT).  Every resolvent
quantity goes through one symmetric eigendecomposition of the pooled
covariance, held in a :class:`SpectralCache` and reused across the
regularisation grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    AllCandidatesDegenerateError,
    DegenerateCorrectionError,
    DimensionError,
    DimensionMismatchError,
    InsufficientSamplesError,
    NonPositiveLambdaError,
    SingularCovarianceError,
)

__all__ = [
    "DistributionSummary",
    "PooledCovariance",
    "SpectralCache",
    "ArhtResult",
    "pooled_covariance",
    "hotelling_t2",
    "rht",
    "stieltjes",
    "theta_corrections",
    "arht_statistic",
    "arht",
    "q_function",
    "lambda_grid",
    "select_lambda",
    "adaptive_arht",
]

DEFAULT_XI = (0.0, 1.0, 0.0)
_DENOM_EPS = 1e-12
_COND_EPS = 1e-12


@dataclass(frozen=True)
class DistributionSummary:
    """Sample mean, centred scatter matrix and count of one group."""

    mean: np.ndarray
    scatter: np.ndarray
    count: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        scatter = np.asarray(self.scatter, dtype=float)
        p = mean.shape[0]
        if scatter.shape != (p, p):
            raise DimensionMismatchError(
                f"scatter has shape {scatter.shape}, expected {(p, p)}"
            )
        if int(self.count) < 1:
            raise InsufficientSamplesError(f"count must be >= 1, got {self.count}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "scatter", scatter)
        object.__setattr__(self, "count", int(self.count))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_samples(cls, X) -> "DistributionSummary":
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] < 1:
            raise InsufficientSamplesError("cannot summarise an empty sample")
        mean = X.mean(axis=0)
        centered = X - mean
        scatter = centered.T @ centered
        # exact symmetry; the product is symmetric only up to round-off
        scatter = 0.5 * (scatter + scatter.T)
        return cls(mean=mean, scatter=scatter, count=X.shape[0])


@dataclass(frozen=True)
class PooledCovariance:
    matrix: np.ndarray
    n: int
    p: int

    @property
    def gamma(self) -> float:
        return self.p / self.n


def _check_pair(group1: DistributionSummary, group2: DistributionSummary) -> int:
    if group1.dim != group2.dim:
        raise DimensionMismatchError(
            f"group dimensions differ: {group1.dim} vs {group2.dim}"
        )
    return group1.dim


def pooled_covariance(
    group1: DistributionSummary, group2: DistributionSummary
) -> PooledCovariance:
    """Return ``(scatter1 + scatter2) / (n1 + n2 - 2)``."""
    p = _check_pair(group1, group2)
    n = group1.count + group2.count
    if n < 3:
        raise InsufficientSamplesError(f"pooled count must be >= 3, got {n}")
    matrix = (group1.scatter + group2.scatter) / (n - 2)
    return PooledCovariance(matrix=matrix, n=n, p=p)


@dataclass(frozen=True)
class SpectralCache:
    """Eigen-decomposition ``S = V diag(w) V^T`` with ``w`` nonincreasing.

    ``eigenvalues`` are clamped at zero; ``raw_eigenvalues`` keeps the
    unclamped values returned by the solver.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    source: PooledCovariance | None = None
    raw_eigenvalues: np.ndarray = field(default=None, repr=False)

    @classmethod
    def from_matrix(cls, matrix, source: PooledCovariance | None = None):
        matrix = np.asarray(matrix, dtype=float)
        w, V = np.linalg.eigh(0.5 * (matrix + matrix.T))
        w, V = w[::-1], V[:, ::-1]
        return cls(
            eigenvalues=np.clip(w, 0.0, None),
            eigenvectors=np.ascontiguousarray(V),
            source=source,
            raw_eigenvalues=w,
        )

    @classmethod
    def from_pooled(cls, pooled: PooledCovariance) -> "SpectralCache":
        return cls.from_matrix(pooled.matrix, source=pooled)

    @property
    def p(self) -> int:
        return self.eigenvalues.shape[0]

    def trace(self) -> float:
        return float(self.eigenvalues.sum())


@dataclass(frozen=True)
class ArhtResult:
    statistic: float
    rht: float
    lam: float
    q_value: float
    theta1: float
    theta2: float

    def as_dict(self) -> dict:
        return {
            "arht": self.statistic,
            "rht": self.rht,
            "lambda": self.lam,
            "q_value": self.q_value,
            "theta1": self.theta1,
            "theta2": self.theta2,
        }


def _check_lambda(lam) -> float:
    lam = float(lam)
    if not lam > 0.0 or not math.isfinite(lam):
        raise NonPositiveLambdaError(f"lambda must be a positive finite real, got {lam}")
    return lam


def hotelling_t2(group1: DistributionSummary, group2: DistributionSummary) -> float:
    """Classical two-sample Hotelling statistic on the F(p, n-p) scale."""
    pooled = pooled_covariance(group1, group2)
    n, p = pooled.n, pooled.p
    if n <= p:
        raise DimensionError(f"Hotelling T^2 requires n > p (n={n}, p={p})")
    cache = SpectralCache.from_pooled(pooled)
    w = cache.raw_eigenvalues
    top = float(np.max(np.abs(w)))
    if top == 0.0 or w.min() <= _COND_EPS * top:
        raise SingularCovarianceError(
            "pooled covariance is (numerically) singular; use rht() instead"
        )
    d = group1.mean - group2.mean
    proj = cache.eigenvectors.T @ d
    quad = float(np.sum(proj**2 / w))
    return n * (n - p) / (p * (n - 1)) * quad


def rht(
    group1: DistributionSummary,
    group2: DistributionSummary,
    lam: float,
    cache: SpectralCache,
) -> float:
    """``n1 n2 / n * d^T (S + lam I)^{-1} d`` evaluated in the eigenbasis."""
    lam = _check_lambda(lam)
    _check_pair(group1, group2)
    n1, n2 = group1.count, group2.count
    d = group1.mean - group2.mean
    proj = cache.eigenvectors.T @ d
    return n1 * n2 / (n1 + n2) * float(np.sum(proj**2 / (cache.eigenvalues + lam)))


def stieltjes(cache: SpectralCache, lam: float) -> tuple[float, float]:
    """Normalised traces of the resolvent and its square at ``z = -lam``."""
    lam = _check_lambda(lam)
    shifted = cache.eigenvalues + lam
    inv = 1.0 / shifted
    return float(inv.mean()), float((inv**2).mean())


def theta_corrections(
    m_f: float, m_f_prime: float, lam: float, gamma: float
) -> tuple[float, float]:
    """Asymptotic centring and scaling terms of the regularised statistic."""
    lam = _check_lambda(lam)
    num = 1.0 - lam * m_f
    base = 1.0 - gamma * num
    if not base > _DENOM_EPS:
        raise DegenerateCorrectionError(
            f"1 - gamma(1 - lambda m_F) = {base:.3e} is not positive "
            f"(lambda={lam}, gamma={gamma})"
        )
    theta1 = num / base
    theta2 = num / base**3 - lam * (m_f - lam * m_f_prime) / base**4
    if not theta2 > 0.0:
        raise DegenerateCorrectionError(
            f"theta2 = {theta2:.3e} is not positive (lambda={lam}, gamma={gamma})"
        )
    return theta1, theta2


def arht_statistic(rht_value: float, p: int, theta1: float, theta2: float) -> float:
    return math.sqrt(p) * (rht_value / p - theta1) / math.sqrt(2.0 * theta2)


def arht(
    group1: DistributionSummary,
    group2: DistributionSummary,
    lam: float,
    cache: SpectralCache,
    gamma: float | None = None,
) -> ArhtResult:
    """Standardised RHT at a fixed ``lam``.

    ``gamma`` defaults to ``p / (n1 + n2)``.  The returned ``q_value`` is the
    default-weight Q criterion at ``lam``.
    """
    lam = _check_lambda(lam)
    p = _check_pair(group1, group2)
    if gamma is None:
        gamma = p / (group1.count + group2.count)
    r = rht(group1, group2, lam, cache)
    m, mp = stieltjes(cache, lam)
    t1, t2 = theta_corrections(m, mp, lam, gamma)
    return ArhtResult(
        statistic=arht_statistic(r, p, t1, t2),
        rht=r,
        lam=lam,
        q_value=t1 / math.sqrt(gamma * t2),
        theta1=t1,
        theta2=t2,
    )


def lambda_grid(lambda0: float) -> tuple[float, float, float]:
    lambda0 = _check_lambda(lambda0)
    return (lambda0, 5.0 * lambda0, 10.0 * lambda0)


def q_function(
    cache: SpectralCache, lam: float, gamma: float, xi=DEFAULT_XI
) -> float:
    """Power criterion ``sum_k xi_k rho_k / sqrt(gamma theta2)``."""
    m, mp = stieltjes(cache, lam)
    t1, t2 = theta_corrections(m, mp, lam, gamma)
    rho0 = m
    rho1 = t1
    rho2 = (1.0 + gamma * t1) * (cache.trace() / cache.p - lam * rho1)
    num = xi[0] * rho0 + xi[1] * rho1 + xi[2] * rho2
    return num / math.sqrt(gamma * t2)


def select_lambda(
    group1: DistributionSummary,
    group2: DistributionSummary,
    lambda0: float,
    cache: SpectralCache,
    xi=DEFAULT_XI,
    gamma: float | None = None,
) -> tuple[float, tuple[float, float, float]]:
    """Pick the grid point ``{lambda0, 5 lambda0, 10 lambda0}`` maximising Q.

    Degenerate candidates get ``q = nan``.  Ties go to the smaller lambda.
    """
    p = _check_pair(group1, group2)
    if gamma is None:
        gamma = p / (group1.count + group2.count)
    grid = lambda_grid(lambda0)
    q_values = []
    for lam in grid:
        try:
            q_values.append(q_function(cache, lam, gamma, xi))
        except DegenerateCorrectionError:
            q_values.append(math.nan)
    best = None
    for lam, q in zip(grid, q_values):
        if math.isnan(q):
            continue
        if best is None or q > best[1]:
            best = (lam, q)
    if best is None:
        raise AllCandidatesDegenerateError(
            f"no lambda in {grid} gives a valid correction (gamma={gamma})"
        )
    return best[0], tuple(q_values)


def adaptive_arht(
    group1: DistributionSummary,
    group2: DistributionSummary,
    lambda0: float = 0.01,
    cache: SpectralCache | None = None,
    xi=DEFAULT_XI,
) -> ArhtResult:
    """Pool, decompose, choose lambda on the grid and return ARHT there."""
    if cache is None:
        cache = SpectralCache.from_pooled(pooled_covariance(group1, group2))
    lam, q_values = select_lambda(group1, group2, lambda0, cache, xi=xi)
    res = arht(group1, group2, lam, cache)
    q = q_values[lambda_grid(lambda0).index(lam)]
    return ArhtResult(
        statistic=res.statistic,
        rht=res.rht,
        lam=res.lam,
        q_value=q,
        theta1=res.theta1,
        theta2=res.theta2,
    )
