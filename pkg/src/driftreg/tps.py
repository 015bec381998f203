"""Thin-plate-spline warps used to synthesize non-rigid deformations.

The warp interpolates control-point displacements with the classic radial
kernels U(r) = r^2 log r in 2D and U(r) = -r in 3D, plus an affine part.
Fitting solves the bordered linear system

    [ K + ridge*I   P ] [ w ]   [ control_dst ]
    [ P^T           0 ] [ a ] = [ 0           ]

with P = [1 | control_src]; the side conditions P^T w = 0 kill the kernel
contribution to affine motions, so affine maps are reproduced exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularSystem
from .pointset import sq_dist_matrix

# small ridge keeps near-degenerate 3D control grids solvable
RIDGE_3D = 1e-8


def _kernel(sq_dists: np.ndarray, dim: int) -> np.ndarray:
    if dim == 2:
        # r^2 log r = 0.5 * r^2 log r^2, finite (0) at r = 0
        with np.errstate(divide="ignore", invalid="ignore"):
            k = 0.5 * sq_dists * np.log(sq_dists)
        return np.where(sq_dists > 0.0, k, 0.0)
    return -np.sqrt(sq_dists)


@dataclass(frozen=True)
class TpsWarp:
    """A fitted spline: x -> affine(x) + sum_k w_k U(||x - c_k||)."""

    control_src: np.ndarray  # (m, dim)
    control_dst: np.ndarray  # (m, dim)
    kernel_coeffs: np.ndarray  # (m, dim)
    affine_coeffs: np.ndarray  # (dim+1, dim), row 0 is the translation

    @property
    def dim(self) -> int:
        return self.control_src.shape[1]

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        u = _kernel(sq_dist_matrix(pts, self.control_src), self.dim)
        return (
            self.affine_coeffs[0]
            + pts @ self.affine_coeffs[1:]
            + u @ self.kernel_coeffs
        )


def control_grid(dim: int, per_axis: int = 3) -> np.ndarray:
    """Regular per_axis^dim grid over [-1, 1]^dim, row-major order."""
    axes = [np.linspace(-1.0, 1.0, per_axis)] * dim
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def fit_tps(control_src: np.ndarray, control_dst: np.ndarray, dim: int) -> TpsWarp:
    """Fit the spline mapping control_src onto control_dst exactly."""
    src = np.asarray(control_src, dtype=np.float64)
    dst = np.asarray(control_dst, dtype=np.float64)
    if src.ndim != 2 or src.shape[1] != dim or src.shape != dst.shape:
        raise SingularSystem(
            f"control arrays must both be (m, {dim}); got {src.shape} and {dst.shape}"
        )
    m = src.shape[0]
    if m < dim + 1:
        raise SingularSystem(f"need at least {dim + 1} control points, got {m}")

    k = _kernel(sq_dist_matrix(src, src), dim)
    if dim == 3:
        k = k + RIDGE_3D * np.eye(m)
    p = np.hstack([np.ones((m, 1)), src])
    lhs = np.zeros((m + dim + 1, m + dim + 1))
    lhs[:m, :m] = k
    lhs[:m, m:] = p
    lhs[m:, :m] = p.T
    rhs = np.zeros((m + dim + 1, dim))
    rhs[:m] = dst

    try:
        sol = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(f"degenerate control configuration: {exc}") from exc
    if not np.isfinite(sol).all():
        raise SingularSystem("spline solve produced non-finite coefficients")
    residual = np.abs(lhs @ sol - rhs).max()
    if residual > 1e-6 * max(1.0, float(np.abs(rhs).max())):
        raise SingularSystem(f"spline solve residual {residual:.3e} too large")

    return TpsWarp(
        control_src=src,
        control_dst=dst,
        kernel_coeffs=sol[:m],
        affine_coeffs=sol[m:],
    )
