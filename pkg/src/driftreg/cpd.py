"""Classic iterative coherent-point-drift registration (the baseline).

The source set parameterizes Gaussian mixture centroids T = Y + G W, where
G is the Gaussian kernel over the source points (width beta) and W the
coefficients being estimated.  EM alternates posterior computation over the
target points (with a uniform outlier component of weight w) with a
regularized least-squares solve for W and a closed-form variance update.
No randomness anywhere: identical inputs give identical results.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimMismatch, NonFinite, SingularSolve
from .pointset import PointSet, sq_dist_matrix

_RIDGE = 1e-9
_TINY = np.finfo(np.float64).tiny


@dataclass(frozen=True)
class CpdConfig:
    beta: float = 2.0  # kernel width of the coherence prior
    lamb: float = 2.0  # coherence regularization weight
    w: float = 0.1  # uniform outlier weight
    max_iters: int = 150
    tol: float = 1e-8  # relative sigma^2 change at which to stop

    def validate(self) -> "CpdConfig":
        if self.beta <= 0 or self.lamb <= 0:
            raise ConfigError("beta and lambda must be positive")
        if not 0.0 <= self.w < 1.0:
            raise ConfigError(f"outlier weight must be in [0, 1), got {self.w}")
        if self.max_iters < 1:
            raise ConfigError("max_iters must be >= 1")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        return self


@dataclass(frozen=True)
class CpdResult:
    transformed: PointSet
    coeffs: np.ndarray  # (m, dim) kernel coefficients W
    drifts: np.ndarray  # (m, dim) displacement G @ W actually applied
    sigma2_trace: list[float]  # variance after each iteration
    nll_trace: list[float]  # negative log-likelihood entering each iteration
    iterations: int


def gaussian_kernel(points: np.ndarray, beta: float) -> np.ndarray:
    return np.exp(-sq_dist_matrix(points, points) / (2.0 * beta * beta))


def cpd_nll(sq_dists: np.ndarray, sigma2: float, w: float, dim: int) -> float:
    """Negative log-likelihood of the mixture, uniform outlier term included.

    sq_dists is the (m_centroids, n_targets) squared-distance matrix between
    the current centroids and the target points.
    """
    m, n = sq_dists.shape
    norm = (2.0 * math.pi * sigma2) ** (dim / 2.0)
    gauss = np.exp(-sq_dists / (2.0 * sigma2)).sum(axis=0)
    density = (1.0 - w) / (m * norm) * gauss + w / n
    if not np.all(density > 0):
        raise NonFinite("zero mixture density; cannot evaluate log-likelihood")
    value = -float(np.log(density).sum())
    if not math.isfinite(value):
        raise NonFinite("non-finite negative log-likelihood")
    return value


def cpd_register(source: PointSet, target: PointSet, cfg: CpdConfig = CpdConfig()) -> CpdResult:
    """Run EM to completion; returns the moved source and solver traces."""
    cfg = cfg.validate()
    if source.dim != target.dim:
        raise DimMismatch(f"source dim {source.dim} vs target dim {target.dim}")
    y = source.points  # centroids (m, d)
    x = target.points  # data (n, d)
    m, d = y.shape
    n = x.shape[0]

    g = gaussian_kernel(y, cfg.beta)
    coeffs = np.zeros((m, d))
    t = y.copy()
    sigma2 = float(sq_dist_matrix(t, x).sum() / (d * m * n))

    sigma2_trace: list[float] = []
    nll_trace: list[float] = []
    iterations = 0
    for _ in range(cfg.max_iters):
        iterations += 1
        d2 = sq_dist_matrix(t, x)
        nll_trace.append(cpd_nll(d2, sigma2, cfg.w, d))

        # E-step: posteriors over centroids, with the uniform outlier mass
        num = np.exp(-d2 / (2.0 * sigma2))
        outlier = (2.0 * math.pi * sigma2) ** (d / 2.0) * cfg.w / (1.0 - cfg.w) * m / n
        den = np.maximum(num.sum(axis=0) + outlier, _TINY)
        p = num / den

        # M-step: regularized solve for the kernel coefficients
        p1 = p.sum(axis=1)
        pt1 = p.sum(axis=0)
        np_mass = float(p1.sum())
        if np_mass <= 0:
            raise NonFinite("all target points explained by the outlier term")
        lhs = g * p1[:, None]
        diag = np.arange(m)
        lhs[diag, diag] += cfg.lamb * sigma2 + _RIDGE
        rhs = p @ x - p1[:, None] * y
        try:
            coeffs = np.linalg.solve(lhs, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSolve(f"coefficient solve failed: {exc}") from exc
        if not np.isfinite(coeffs).all():
            raise SingularSolve("coefficient solve produced non-finite values")

        t = y + g @ coeffs
        xpx = float(pt1 @ (x * x).sum(axis=1))
        trpxt = float(((p @ x) * t).sum())
        tpt = float(p1 @ (t * t).sum(axis=1))
        new_sigma2 = (xpx - 2.0 * trpxt + tpt) / (np_mass * d)
        if not math.isfinite(new_sigma2):
            raise NonFinite(f"variance diverged: {new_sigma2}")
        new_sigma2 = max(new_sigma2, 1e-12)
        sigma2_trace.append(new_sigma2)

        rel_change = abs(new_sigma2 - sigma2) / max(sigma2, _TINY)
        sigma2 = new_sigma2
        if rel_change < cfg.tol:
            break

    return CpdResult(
        transformed=PointSet(t),
        coeffs=coeffs,
        drifts=t - y,
        sigma2_trace=sigma2_trace,
        nll_trace=nll_trace,
        iterations=iterations,
    )
