"""Synthetic pair generation: base shapes, spline deformation, noise.

A pair is two independent deformations of the same base shape; noise (when
requested) corrupts only the target.  Every draw comes from a splitmix64
stream derived from (global_seed, split, pair index), so generation is
deterministic, order-independent, and reproducible from the manifest.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    ConfigError,
    FormatError,
    LevelOutOfRange,
    TooFewPointsLeft,
    UnknownShape,
    UnsupportedVersion,
)
from .pointset import (
    PointSet,
    ShapePair,
    SynthesisMeta,
    knn_indices,
    normalize,
    read_pointset,
    write_pointset,
)
from .rng import RNG_ALGORITHM, Stream, derive_seed
from .tps import control_grid, fit_tps

NOISE_KINDS = ("none", "gd", "po", "di")

MANIFEST_NAME = "manifest.json"


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


# -- base shapes --------------------------------------------------------------

def _resample_closed(vertices: np.ndarray, n: int) -> np.ndarray:
    """n points spaced uniformly by arc length along a closed polyline."""
    loop = np.vstack([vertices, vertices[:1]])
    seg = np.sqrt(((loop[1:] - loop[:-1]) ** 2).sum(axis=1))
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    targets = np.arange(n) * (total / n)
    idx = np.searchsorted(cum, targets, side="right") - 1
    idx = np.clip(idx, 0, len(seg) - 1)
    frac = (targets - cum[idx]) / seg[idx]
    return loop[idx] + frac[:, None] * (loop[idx + 1] - loop[idx])


_FISH_OUTLINE = np.array([
    (1.00, 0.00), (0.80, 0.16), (0.55, 0.28), (0.20, 0.36), (-0.15, 0.32),
    (-0.45, 0.20), (-0.62, 0.06), (-1.00, 0.34), (-0.88, 0.00), (-1.00, -0.34),
    (-0.62, -0.06), (-0.45, -0.20), (-0.15, -0.32), (0.20, -0.36), (0.55, -0.28),
    (0.80, -0.16),
])

_STAR_POINTS = 5
_STAR_INNER = 0.42


def _shape_fish_like(n: int) -> np.ndarray:
    return _resample_closed(_FISH_OUTLINE, n)


def _shape_ellipse(n: int) -> np.ndarray:
    t = 2.0 * np.pi * np.arange(n) / n
    return np.stack([np.cos(t), 0.55 * np.sin(t)], axis=1)


def _shape_star(n: int) -> np.ndarray:
    k = 2 * _STAR_POINTS
    ang = 2.0 * np.pi * np.arange(k) / k + np.pi / 2
    rad = np.where(np.arange(k) % 2 == 0, 1.0, _STAR_INNER)
    verts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    return _resample_closed(verts, n)


def _shape_grid2d(n: int) -> np.ndarray:
    g = math.ceil(math.sqrt(n))
    ax = np.linspace(-1.0, 1.0, g)
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)[:n]


def _fibonacci_directions(n: int) -> np.ndarray:
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    i = np.arange(n)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * np.pi * i / golden
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _shape_sphere3d(n: int) -> np.ndarray:
    return _fibonacci_directions(n)


def _shape_face3d_like(n: int) -> np.ndarray:
    # front half of an ellipsoid with a nose ridge; crude but face-shaped
    dirs = _fibonacci_directions(2 * n + 8)
    front = dirs[dirs[:, 2] > 0.02][:n]
    pts = front * np.array([0.72, 1.0, 0.55])
    x, y = pts[:, 0], pts[:, 1]
    bump = 0.38 * np.exp(-((x / 0.16) ** 2 + ((y + 0.12) / 0.30) ** 2))
    pts = pts.copy()
    pts[:, 2] += bump
    return pts


_SHAPES = {
    "fish-like": (_shape_fish_like, 2),
    "ellipse": (_shape_ellipse, 2),
    "star": (_shape_star, 2),
    "grid2d": (_shape_grid2d, 2),
    "sphere3d": (_shape_sphere3d, 3),
    "face3d-like": (_shape_face3d_like, 3),
}


def shape_names() -> tuple:
    return tuple(_SHAPES)


def shape_dim(name: str) -> int:
    if name not in _SHAPES:
        raise UnknownShape(f"unknown base shape {name!r}; available: {', '.join(_SHAPES)}")
    return _SHAPES[name][1]


def base_shape(name: str, n: int, seed: int = 0) -> PointSet:
    """A normalized built-in shape of exactly n points.

    All built-ins are parametric, so the result depends only on (name, n);
    the seed is accepted for interface uniformity with stochastic sources.
    """
    if name not in _SHAPES:
        raise UnknownShape(f"unknown base shape {name!r}; available: {', '.join(_SHAPES)}")
    if n < 8:
        raise ConfigError(f"base shapes need n >= 8, got {n}")
    maker, _ = _SHAPES[name]
    return normalize(PointSet(maker(n)))


# -- deformation and noise ----------------------------------------------------

def deform(ps: PointSet, level: float, seed: int, grid_per_axis: int = 3) -> PointSet:
    """Warp by a spline whose control points get N(0, (2*level)^2) shifts."""
    if level < 0:
        raise LevelOutOfRange(f"deformation level must be >= 0, got {level}")
    controls = control_grid(ps.dim, grid_per_axis)
    stream = Stream(seed)
    shifts = 2.0 * level * stream.normals(controls.size).reshape(controls.shape)
    warp = fit_tps(controls, controls + shifts, ps.dim)
    return PointSet(warp(ps.points))


def add_gd_noise(ps: PointSet, level: float, seed: int) -> PointSet:
    """Displace every coordinate by independent N(0, level^2) noise."""
    if level < 0:
        raise LevelOutOfRange(f"gd noise level must be >= 0, got {level}")
    stream = Stream(seed)
    noise = level * stream.normals(ps.points.size).reshape(ps.points.shape)
    return PointSet(ps.points + noise)


def add_po_noise(ps: PointSet, level: float, seed: int) -> PointSet:
    """Append standard-normal outliers so they make up `level` of the result."""
    if not 0.0 <= level < 1.0:
        raise LevelOutOfRange(f"po noise level must be in [0, 1), got {level}")
    count = _round_half_up(level * ps.n / (1.0 - level))
    if count == 0:
        return ps
    stream = Stream(seed)
    outliers = stream.normals(count * ps.dim).reshape(count, ps.dim)
    return PointSet(np.vstack([ps.points, outliers]))


def add_di_noise(ps: PointSet, level: float, seed: int) -> PointSet:
    """Remove the round(level*n) points nearest a random anchor (anchor too)."""
    if not 0.0 <= level < 1.0:
        raise LevelOutOfRange(f"di noise level must be in [0, 1), got {level}")
    removed = _round_half_up(level * ps.n)
    if removed == 0:
        return ps
    if ps.n - removed < 4:
        raise TooFewPointsLeft(
            f"removing {removed} of {ps.n} points leaves fewer than 4"
        )
    stream = Stream(seed)
    anchor = int(stream.integers(1, ps.n)[0])
    drop = set(knn_indices(ps, anchor, removed).tolist())
    keep = [i for i in range(ps.n) if i not in drop]
    return PointSet(ps.points[keep])


def apply_noise(ps: PointSet, kind: str, level: float, seed: int) -> PointSet:
    if kind == "none":
        return ps
    if kind == "gd":
        return add_gd_noise(ps, level, seed)
    if kind == "po":
        return add_po_noise(ps, level, seed)
    if kind == "di":
        return add_di_noise(ps, level, seed)
    raise ConfigError(f"unknown noise kind {kind!r}; expected one of {NOISE_KINDS}")


# -- dataset ------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetConfig:
    base_shape: str = "fish-like"
    n_points: int = 128
    deformation_level: float = 0.5
    noise_kind: str = "none"
    noise_level: float = 0.0
    train_count: int = 2000
    test_count: int = 200
    global_seed: int = 7
    grid_per_axis: int = 3
    # per-pair seeds derive from (global_seed, start + i); disjoint ranges
    # keep the train and test streams disjoint
    train_seed_start: int = 0
    test_seed_start: int = 1_000_000

    def validate(self) -> "DatasetConfig":
        if self.base_shape not in _SHAPES:
            raise UnknownShape(f"unknown base shape {self.base_shape!r}")
        if self.n_points < 8:
            raise ConfigError("n_points must be >= 8")
        if self.deformation_level < 0:
            raise ConfigError("deformation_level must be >= 0")
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"noise_kind must be one of {NOISE_KINDS}")
        if (self.noise_level == 0) != (self.noise_kind == "none"):
            raise ConfigError("noise_level must be zero iff noise_kind is 'none'")
        if self.train_count < 1 or self.test_count < 1:
            raise ConfigError("train_count and test_count must be >= 1")
        if self.grid_per_axis < 2:
            raise ConfigError("grid_per_axis must be >= 2")
        tr = range(self.train_seed_start, self.train_seed_start + self.train_count)
        te = range(self.test_seed_start, self.test_seed_start + self.test_count)
        if max(tr.start, te.start) < min(tr.stop, te.stop):
            raise ConfigError(
                f"train seed range {tr} overlaps test seed range {te}"
            )
        return self

    @property
    def dim(self) -> int:
        return shape_dim(self.base_shape)


@dataclass
class Dataset:
    config: DatasetConfig
    train: list  # of ShapePair
    test: list  # of ShapePair


def generate_pair(cfg: DatasetConfig, base: PointSet, pair_seed: int) -> ShapePair:
    seed_src = derive_seed(pair_seed, 0)
    seed_tgt = derive_seed(pair_seed, 1)
    seed_noise = derive_seed(pair_seed, 2)
    source = deform(base, cfg.deformation_level, seed_src, cfg.grid_per_axis)
    clean = deform(base, cfg.deformation_level, seed_tgt, cfg.grid_per_axis)
    target = apply_noise(clean, cfg.noise_kind, cfg.noise_level, seed_noise)
    meta = SynthesisMeta(
        base_shape=cfg.base_shape,
        deformation_level=cfg.deformation_level,
        noise_kind=cfg.noise_kind,
        noise_level=cfg.noise_level,
        seed=pair_seed,
    )
    keep_clean = clean if cfg.noise_kind != "none" else None
    return ShapePair(source=source, target=target, meta=meta, target_clean=keep_clean)


def build_dataset(cfg: DatasetConfig) -> Dataset:
    cfg = cfg.validate()
    base = base_shape(cfg.base_shape, cfg.n_points, cfg.global_seed)
    train = [
        generate_pair(cfg, base, derive_seed(cfg.global_seed, cfg.train_seed_start + i))
        for i in range(cfg.train_count)
    ]
    test = [
        generate_pair(cfg, base, derive_seed(cfg.global_seed, cfg.test_seed_start + i))
        for i in range(cfg.test_count)
    ]
    return Dataset(config=cfg, train=train, test=test)


# -- manifest I/O -------------------------------------------------------------

def _pair_record(cfg: DatasetConfig, split: str, i: int, pair: ShapePair) -> dict:
    start = cfg.train_seed_start if split == "train" else cfg.test_seed_start
    rec = {
        "index": i,
        "seed": pair.meta.seed,
        "seed_source": derive_seed(pair.meta.seed, 0),
        "seed_target": derive_seed(pair.meta.seed, 1),
        "seed_noise": derive_seed(pair.meta.seed, 2),
        "seed_index": start + i,
        "source": f"{split}/pair{i:05d}_src.txt",
        "target": f"{split}/pair{i:05d}_tgt.txt",
    }
    if pair.target_clean is not None:
        rec["target_clean"] = f"{split}/pair{i:05d}_tgt_clean.txt"
    return rec


def write_dataset(dataset: Dataset, out_dir: str | os.PathLike) -> str:
    """Write point-set files and the manifest; returns the manifest path."""
    cfg = dataset.config
    manifest = {
        "format_version": 1,
        "dim": cfg.dim,
        "base_shape": cfg.base_shape,
        "n_points": cfg.n_points,
        "deformation_level": cfg.deformation_level,
        "noise": {"kind": cfg.noise_kind, "level": cfg.noise_level},
        "rng": {"algorithm": RNG_ALGORITHM, "global_seed": cfg.global_seed},
        "grid_per_axis": cfg.grid_per_axis,
        "seed_starts": {"train": cfg.train_seed_start, "test": cfg.test_seed_start},
        "splits": {"train": [], "test": []},
    }
    for split, pairs in (("train", dataset.train), ("test", dataset.test)):
        os.makedirs(os.path.join(out_dir, split), exist_ok=True)
        for i, pair in enumerate(pairs):
            rec = _pair_record(cfg, split, i, pair)
            manifest["splits"][split].append(rec)
            write_pointset(os.path.join(out_dir, rec["source"]), pair.source)
            write_pointset(os.path.join(out_dir, rec["target"]), pair.target)
            if pair.target_clean is not None:
                write_pointset(os.path.join(out_dir, rec["target_clean"]), pair.target_clean)
    path = os.path.join(out_dir, MANIFEST_NAME)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def load_dataset(manifest_path: str | os.PathLike) -> Dataset:
    """Load a dataset back from its manifest and point-set files."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != 1:
        raise UnsupportedVersion(
            f"{manifest_path}: unsupported manifest version {manifest.get('format_version')}"
        )
    root = os.path.dirname(os.path.abspath(manifest_path))
    noise = manifest.get("noise", {"kind": "none", "level": 0.0})
    seed_starts = manifest.get("seed_starts", {"train": 0, "test": 1_000_000})
    cfg = DatasetConfig(
        base_shape=manifest["base_shape"],
        n_points=manifest["n_points"],
        deformation_level=manifest["deformation_level"],
        noise_kind=noise["kind"],
        noise_level=noise["level"],
        train_count=max(1, len(manifest["splits"]["train"])),
        test_count=max(1, len(manifest["splits"]["test"])),
        global_seed=manifest["rng"]["global_seed"],
        grid_per_axis=manifest.get("grid_per_axis", 3),
        train_seed_start=seed_starts["train"],
        test_seed_start=seed_starts["test"],
    )
    splits = {"train": [], "test": []}
    for split in ("train", "test"):
        for rec in manifest["splits"][split]:
            source = read_pointset(os.path.join(root, rec["source"]))
            target = read_pointset(os.path.join(root, rec["target"]))
            clean = None
            if "target_clean" in rec:
                clean = read_pointset(os.path.join(root, rec["target_clean"]))
            meta = SynthesisMeta(
                base_shape=cfg.base_shape,
                deformation_level=cfg.deformation_level,
                noise_kind=cfg.noise_kind,
                noise_level=cfg.noise_level,
                seed=rec["seed"],
            )
            splits[split].append(
                ShapePair(source=source, target=target, meta=meta, target_clean=clean)
            )
    return Dataset(config=cfg, train=splits["train"], test=splits["test"])


def load_directory_as_pairs(src_dir: str, tgt_dir: str) -> list:
    """Pair up same-named point-set files from two directories (loader hook)."""
    names = sorted(f for f in os.listdir(src_dir) if f.endswith(".txt"))
    pairs = []
    for name in names:
        tgt = os.path.join(tgt_dir, name)
        if not os.path.exists(tgt):
            raise FormatError(f"no matching target file for {name}")
        pairs.append(
            ShapePair(
                source=read_pointset(os.path.join(src_dir, name)),
                target=read_pointset(tgt),
            )
        )
    return pairs
