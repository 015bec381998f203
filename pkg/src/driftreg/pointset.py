"""Point-set containers and the distance primitives everything else shares.

Geometry is always float64.  Squared distances are computed as the ordered
sum of per-coordinate squared differences so results agree bit for bit with
a naive double loop (and with the k-d tree path).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DegenerateShape,
    DimMismatch,
    EmptyReference,
    FormatError,
    IndexOutOfRange,
    KTooLarge,
    UnsupportedVersion,
)

# Brute force below this reference size, k-d tree above.  Both return the
# same argmins (ties break to the lower index) so gradients stay stable.
KDTREE_THRESHOLD = 512


@dataclass(frozen=True)
class PointSet:
    """An ordered set of n points in 2 or 3 dimensions."""

    points: np.ndarray  # (n, dim) float64

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2:
            raise DimMismatch(f"points must be 2-D, got shape {pts.shape}")
        if pts.shape[1] not in (2, 3):
            raise DimMismatch(f"dim must be 2 or 3, got {pts.shape[1]}")
        if pts.shape[0] < 1:
            raise DegenerateShape("point set must contain at least one point")
        if not np.isfinite(pts).all():
            raise FormatError("points must be finite")
        pts = np.ascontiguousarray(pts)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def translated(self, offset) -> "PointSet":
        return PointSet(self.points + np.asarray(offset, dtype=np.float64))


@dataclass(frozen=True)
class SynthesisMeta:
    """How a synthetic pair was generated; enough to regenerate it exactly."""

    base_shape: str
    deformation_level: float
    noise_kind: str  # none | gd | po | di
    noise_level: float
    seed: int

    def __post_init__(self):
        if (self.noise_level == 0) != (self.noise_kind == "none"):
            raise FormatError("noise_level is zero iff noise_kind is 'none'")


@dataclass(frozen=True)
class ShapePair:
    """Source/target pair; target_clean kept when the target was corrupted."""

    source: PointSet
    target: PointSet
    meta: Optional[SynthesisMeta] = None
    target_clean: Optional[PointSet] = field(default=None)

    def __post_init__(self):
        if self.source.dim != self.target.dim:
            raise DimMismatch(
                f"source dim {self.source.dim} != target dim {self.target.dim}"
            )

    @property
    def dim(self) -> int:
        return self.source.dim

    def clean_target(self) -> PointSet:
        return self.target_clean if self.target_clean is not None else self.target


def normalize(ps: PointSet) -> PointSet:
    """Center at the centroid and scale so the farthest point has norm 1.

    Raises DegenerateShape when all points coincide (zero scale).
    """
    centered = ps.points - ps.points.mean(axis=0)
    scale = float(np.sqrt((centered * centered).sum(axis=1)).max())
    if scale < 1e-12 * max(1.0, float(np.abs(ps.points).max())):
        raise DegenerateShape("all points coincide; cannot normalize")
    return PointSet(centered / scale)


def pairwise_sq_dists(a: PointSet, b: PointSet) -> np.ndarray:
    """(n_a, n_b) matrix of squared distances ||a_i - b_j||^2."""
    if a.dim != b.dim:
        raise DimMismatch(f"dims differ: {a.dim} vs {b.dim}")
    return sq_dist_matrix(a.points, b.points)


def sq_dist_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # diff**2 summed over the (<=3) coordinate axis matches loop order exactly
    diff = a[:, None, :] - b[None, :, :]
    return (diff * diff).sum(axis=2)


def nearest_sq_dist(query: PointSet, reference: PointSet):
    """Per query point, the squared distance to the nearest reference point.

    Returns (dists, argmins); ties break to the lower reference index.
    """
    if reference.n == 0:  # unreachable through PointSet, kept for raw arrays
        raise EmptyReference("reference set is empty")
    if query.dim != reference.dim:
        raise DimMismatch(f"dims differ: {query.dim} vs {reference.dim}")
    return nearest_sq_dist_arrays(query.points, reference.points)


def nearest_sq_dist_arrays(query: np.ndarray, reference: np.ndarray):
    if reference.shape[0] == 0:
        raise EmptyReference("reference set is empty")
    if reference.shape[0] <= KDTREE_THRESHOLD:
        d2 = sq_dist_matrix(query, reference)
        idx = d2.argmin(axis=1)  # argmin returns the first (lowest) index
        return d2[np.arange(len(query)), idx], idx
    tree = KdTree(reference)
    dists = np.empty(len(query), dtype=np.float64)
    idx = np.empty(len(query), dtype=np.int64)
    for i, q in enumerate(query):
        dists[i], idx[i] = tree.nearest(q)
    return dists, idx


def knn_indices(ps: PointSet, anchor_index: int, k: int) -> np.ndarray:
    """Indices of the k points nearest the anchor, anchor included.

    Ordered by (distance, index); ties break to the lower index.
    """
    if not 0 <= anchor_index < ps.n:
        raise IndexOutOfRange(f"anchor {anchor_index} outside [0, {ps.n})")
    if k < 1 or k > ps.n:
        raise KTooLarge(f"k must be in [1, {ps.n}], got {k}")
    diff = ps.points - ps.points[anchor_index]
    d2 = (diff * diff).sum(axis=1)
    order = np.argsort(d2, kind="stable")  # stable sort keeps index order on ties
    return order[:k]


class KdTree:
    """Static k-d tree over an (n, dim) array, exact nearest neighbor only.

    Built once with median splits; queries return the same (distance, index)
    a brute-force scan with lowest-index tie-breaking would.
    """

    __slots__ = ("points", "_axis", "_index", "_left", "_right")

    def __init__(self, points: np.ndarray, _indices=None):
        self.points = points
        indices = np.arange(len(points), dtype=np.int64) if _indices is None else _indices
        if len(indices) <= 16:
            self._axis = 0
            self._index = indices
            self._left = self._right = None
            return
        sub = points[indices]
        self._axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        order = np.argsort(sub[:, self._axis], kind="stable")
        indices = indices[order]
        mid = len(indices) // 2
        self._index = indices[mid : mid + 1]
        self._left = KdTree(points, indices[:mid])
        self._right = KdTree(points, indices[mid + 1 :])

    def nearest(self, q: np.ndarray):
        best = [np.inf, -1]
        self._search(q, best)
        return best[0], best[1]

    def _scan(self, q, best):
        for i in self._index:
            diff = q - self.points[i]
            d2 = float((diff * diff).sum())
            if d2 < best[0] or (d2 == best[0] and i < best[1]):
                best[0], best[1] = d2, int(i)

    def _search(self, q, best):
        self._scan(q, best)
        if self._left is None:
            return
        pivot = self.points[self._index[0], self._axis]
        delta = q[self._axis] - pivot
        near, far = (self._right, self._left) if delta > 0 else (self._left, self._right)
        near._search(q, best)
        if delta * delta <= best[0]:  # ties must cross to keep lowest index
            far._search(q, best)


# -- point-set text format ---------------------------------------------------
#
#   pointset 1 <dim> <n>
#   <x> <y> [<z>]          one line per point, '#' starts a comment line

def write_pointset(path: str | os.PathLike, ps: PointSet) -> None:
    lines = [f"pointset 1 {ps.dim} {ps.n}"]
    for row in ps.points:
        lines.append(" ".join(repr(float(v)) for v in row))
    data = ("\n".join(lines) + "\n").encode("utf-8")
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def read_pointset(path: str | os.PathLike) -> PointSet:
    with open(path, "rb") as fh:
        text = fh.read().decode("utf-8")
    lines = [ln for ln in text.split("\n") if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FormatError(f"{path}: empty point-set file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "pointset":
        raise FormatError(f"{path}: bad header {lines[0]!r}")
    if head[1] != "1":
        raise UnsupportedVersion(f"{path}: unsupported point-set format version {head[1]}")
    try:
        dim, n = int(head[2]), int(head[3])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header {lines[0]!r}") from exc
    if dim not in (2, 3):
        raise FormatError(f"{path}: dim must be 2 or 3, got {dim}")
    if len(lines) - 1 != n:
        raise FormatError(f"{path}: expected {n} points, found {len(lines) - 1}")
    pts = np.empty((n, dim), dtype=np.float64)
    for i, ln in enumerate(lines[1:]):
        cols = ln.split()
        if len(cols) != dim:
            raise FormatError(f"{path}: line {i + 2} has {len(cols)} columns, want {dim}")
        try:
            pts[i] = [float(c) for c in cols]
        except ValueError as exc:
            raise FormatError(f"{path}: line {i + 2}: {exc}") from exc
    return PointSet(pts)
