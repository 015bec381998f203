"""Alignment objectives and diagnostics.

The Chamfer distance is the symmetric sum of squared nearest-neighbor
distances; it doubles as training loss and evaluation metric.  The clipped
variant bounds (cap mode) or floors (floor mode) each per-point term at a
threshold c; cap is the default because it is the form that actually
down-weights outliers and missing regions, while floor remains selectable.

The numeric path accumulates terms sequentially in float64, so it agrees
bit for bit with a naive double-loop computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, _node
from .errors import DimMismatch, EmptySet, KTooLarge, NonPositiveClip
from .network import DisplacementField
from .pointset import PointSet, sq_dist_matrix

CLIP_MODES = ("cap", "floor")


@dataclass(frozen=True)
class LossValue:
    total: float
    forward_term: float  # transformed source -> target
    backward_term: float  # target -> transformed source


def _points(x) -> np.ndarray:
    arr = x.points if isinstance(x, PointSet) else np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DimMismatch(f"expected (n, dim) points, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise EmptySet("loss over an empty point set")
    return arr


def _seq_sum(values) -> float:
    # left-to-right accumulation, matching a plain loop
    total = 0.0
    for v in values:
        total += float(v)
    return total


def _clip_terms(terms: np.ndarray, clip, mode: str) -> np.ndarray:
    if clip is None:
        return terms
    if clip <= 0:
        raise NonPositiveClip(f"clip threshold must be > 0, got {clip}")
    if mode == "cap":
        return np.minimum(terms, clip)
    if mode == "floor":
        return np.maximum(terms, clip)
    raise ValueError(f"clip mode must be one of {CLIP_MODES}, got {mode!r}")


def _directed_terms(a: np.ndarray, b: np.ndarray):
    d2 = sq_dist_matrix(a, b)
    idx = d2.argmin(axis=1)
    return d2[np.arange(len(a)), idx], idx


def chamfer(s_prime, g, clip=None, mode: str = "cap") -> LossValue:
    """Symmetric sum of squared nearest-neighbor distances (optionally clipped)."""
    a = _points(s_prime)
    b = _points(g)
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(f"dims differ: {a.shape[1]} vs {b.shape[1]}")
    fwd_terms, _ = _directed_terms(a, b)
    bwd_terms, _ = _directed_terms(b, a)
    fwd = _seq_sum(_clip_terms(fwd_terms, clip, mode))
    bwd = _seq_sum(_clip_terms(bwd_terms, clip, mode))
    return LossValue(total=fwd + bwd, forward_term=fwd, backward_term=bwd)


def clipped_chamfer(s_prime, g, c: float, mode: str = "cap") -> LossValue:
    if c is None or c <= 0:
        raise NonPositiveClip(f"clip threshold must be > 0, got {c}")
    return chamfer(s_prime, g, clip=c, mode=mode)


def chamfer_per_point(value: LossValue, n_s: int, n_g: int) -> float:
    """Loss normalized by the number of contributing terms."""
    return value.total / (n_s + n_g)


# -- differentiable loss --------------------------------------------------------

def chamfer_loss(s_prime: Tensor, target, clip=None, mode: str = "cap") -> Tensor:
    """Chamfer total as a scalar graph node; grads flow to argmin pairs only.

    Matching (argmin) indices are fixed during the forward pass; the loss is
    accumulated in float64 regardless of the activations' dtype.  With cap
    clipping a term propagates gradient iff its squared distance <= c; with
    floor clipping iff >= c.
    """
    sp64 = s_prime.values.astype(np.float64)
    tg64 = _points(target)
    if sp64.shape[0] == 0:
        raise EmptySet("loss over an empty point set")
    if sp64.shape[1] != tg64.shape[1]:
        raise DimMismatch(f"dims differ: {sp64.shape[1]} vs {tg64.shape[1]}")
    if clip is not None and clip <= 0:
        raise NonPositiveClip(f"clip threshold must be > 0, got {clip}")
    if clip is not None and mode not in CLIP_MODES:
        raise ValueError(f"clip mode must be one of {CLIP_MODES}, got {mode!r}")

    fwd_terms, idx_f = _directed_terms(sp64, tg64)
    bwd_terms, idx_b = _directed_terms(tg64, sp64)
    total = _clip_terms(fwd_terms, clip, mode).sum() + _clip_terms(bwd_terms, clip, mode).sum()

    if clip is None:
        pass_f = np.ones(len(fwd_terms), dtype=bool)
        pass_b = np.ones(len(bwd_terms), dtype=bool)
    elif mode == "cap":
        pass_f, pass_b = fwd_terms <= clip, bwd_terms <= clip
    else:
        pass_f, pass_b = fwd_terms >= clip, bwd_terms >= clip

    def backward_fn(g):
        s = float(g[0, 0])
        grad = np.zeros_like(sp64)
        diff_f = sp64 - tg64[idx_f]
        grad[pass_f] += (2.0 * s) * diff_f[pass_f]
        diff_b = sp64[idx_b] - tg64
        np.add.at(grad, idx_b[pass_b], (2.0 * s) * diff_b[pass_b])
        s_prime.accumulate(grad)

    return _node(np.array([[total]]), (s_prime,), backward_fn)


# -- smoothness diagnostic --------------------------------------------------------

def smoothness_diagnostic(field: DisplacementField, source: PointSet, k: int = 4) -> float:
    """Mean squared drift-difference over squared point-difference, k-NN pairs.

    A first-difference proxy for the integral of the squared drift-field
    derivative; 0 for a rigid translation, large for oscillatory fields.
    Near-coincident pairs (distance < 1e-12) are skipped.
    """
    src = source.points
    n = src.shape[0]
    if field.drifts.shape[0] != n:
        raise DimMismatch(f"{field.drifts.shape[0]} drifts for {n} points")
    if k < 1 or k >= n:
        raise KTooLarge(f"k must be in [1, {n - 1}], got {k}")
    d2 = sq_dist_matrix(src, src)
    np.fill_diagonal(d2, np.inf)
    neighbors = np.argsort(d2, axis=1, kind="stable")[:, :k]
    drifts = field.drifts
    per_point = []
    for i in range(n):
        js = neighbors[i]
        dd2 = d2[i, js]
        valid = dd2 >= 1e-24  # squared threshold for distance 1e-12
        if not valid.any():
            continue
        dv = drifts[i] - drifts[js[valid]]
        per_point.append(((dv * dv).sum(axis=1) / dd2[valid]).mean())
    return float(np.mean(per_point)) if per_point else 0.0
