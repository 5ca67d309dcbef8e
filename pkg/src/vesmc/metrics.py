"""Evaluation metrics: Mahalanobis anomaly score, exact EMD and R^2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.stats import chi2

from .errors import ConfigurationError, SingularMomentsError, UndefinedScoreError

REG_EPS = 1e-6
QUANTILE = 0.99


@dataclass(frozen=True, eq=False)
class EmpiricalMoments:
    mean: np.ndarray
    covariance: np.ndarray
    n: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (len(mean), len(mean)):
            raise ConfigurationError("covariance shape does not match the mean")
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise ConfigurationError("covariance must be symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return len(self.mean)

    @classmethod
    def from_samples(cls, samples, regularize: bool | None = None, eps: float = REG_EPS) -> "EmpiricalMoments":
        """Sample mean and (biased) covariance of ``(n, dim)`` samples.

        A ridge ``eps * trace / dim * I`` is added when ``regularize`` is True,
        or, by default, when there are fewer samples than dimensions.
        """
        X = np.asarray(samples, dtype=float)
        X = X.reshape(len(X), -1)
        n, dim = X.shape
        if n < 1:
            raise ConfigurationError("need at least one sample")
        mean = X.mean(axis=0)
        Xc = X - mean
        cov = Xc.T @ Xc / n
        cov = 0.5 * (cov + cov.T)
        if regularize is None:
            regularize = n < dim
        if regularize:
            cov = cov + eps * np.trace(cov) / dim * np.eye(dim)
        return cls(mean, cov, n)


def mahalanobis(x, moments: EmpiricalMoments) -> np.ndarray | float:
    """``sqrt((x - mu)^T Sigma^{-1} (x - mu))``; ``x`` may be ``(dim,)`` or ``(n, dim)``."""
    x = np.asarray(x, dtype=float)
    diff = x - moments.mean
    try:
        factor = cho_factor(moments.covariance, lower=True)
    except LinAlgError:
        raise SingularMomentsError("covariance is not positive definite") from None
    sol = cho_solve(factor, diff.T).T
    q = np.maximum((diff * sol).sum(axis=-1), 0.0)
    return np.sqrt(q) if q.ndim else float(np.sqrt(q))


def chi2_quantile(dof: int, level: float = QUANTILE) -> float:
    if dof < 1:
        raise ConfigurationError("degrees of freedom must be >= 1")
    return float(chi2.ppf(level, dof))


def rescaled_mahalanobis(d, dof: int, scale: str = "distance", level: float = QUANTILE):
    """Distance divided by the ``level`` quantile of ``chi2(dof)``.

    ``scale="distance"`` divides by the square root of the quantile so the
    result is comparable to 1 for Gaussian data; ``scale="squared"`` divides
    the distance by the quantile itself.
    """
    q = chi2_quantile(dof, level)
    if scale == "distance":
        return np.asarray(d) / np.sqrt(q) if np.ndim(d) else float(d) / np.sqrt(q)
    if scale == "squared":
        return np.asarray(d) / q if np.ndim(d) else float(d) / q
    raise ConfigurationError(f"unknown rescaling {scale!r}")


def per_lead_rescaled_mahalanobis(x, particles, scale: str = "distance", regularize: bool | None = None):
    """Per-channel rescaled distances of an ``(L, T)`` signal to a particle cloud.

    Moments are estimated per channel from ``(M, L, T)`` particles; the
    returned array has one score per channel (average it for a single score).
    """
    x = np.asarray(x, dtype=float)
    P = np.asarray(particles, dtype=float)
    if P.ndim != 3 or P.shape[1:] != x.shape:
        raise ConfigurationError("particles must have shape (M, L, T) matching x")
    T = x.shape[-1]
    out = np.empty(x.shape[0])
    for lead in range(x.shape[0]):
        mom = EmpiricalMoments.from_samples(P[:, lead, :], regularize=regularize)
        out[lead] = rescaled_mahalanobis(mahalanobis(x[lead], mom), T, scale)
    return out


def emd_exact(A, B, metric: str = "euclidean") -> float:
    """Exact earth mover's distance between two equal-size uniform point clouds.

    Points are flattened row-major; the cost of a matching is averaged over
    points. Solved as a linear assignment problem.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if len(A) != len(B):
        raise ConfigurationError(f"point clouds differ in size: {len(A)} vs {len(B)}")
    if len(A) == 0:
        raise ConfigurationError("point clouds are empty")
    A = A.reshape(len(A), -1)
    B = B.reshape(len(B), -1)
    if A.shape[1] != B.shape[1]:
        raise ConfigurationError("point dimensions differ")
    cost = cdist(A, B, metric=metric)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / len(A))


def r2_score(predicted, actual) -> float:
    """Coefficient of determination ``1 - SS_res / SS_tot``."""
    p = np.asarray(predicted, dtype=float).reshape(-1)
    a = np.asarray(actual, dtype=float).reshape(-1)
    if p.shape != a.shape:
        raise ConfigurationError("predicted and actual differ in length")
    if len(a) < 2:
        raise UndefinedScoreError("R^2 needs at least two samples")
    ss_tot = float(((a - a.mean()) ** 2).sum())
    if ss_tot == 0:
        raise UndefinedScoreError("R^2 undefined for constant target")
    return 1.0 - float(((a - p) ** 2).sum()) / ss_tot
