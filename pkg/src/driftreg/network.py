"""The displacement-prediction network.

A shared-weight encoder turns each point set into a 512-d global descriptor
(per-point MLP features max-pooled over the set, so the descriptor is
order-invariant).  The morph head then maps every source coordinate,
concatenated with both descriptors, to a per-point drift vector; adding the
drifts to the source yields the registered set in one forward pass.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNorm, Tensor
from .errors import (
    ConfigError,
    CorruptCheckpoint,
    DimMismatch,
    FormatError,
    UnsupportedVersion,
)
from .pointset import PointSet, ShapePair
from .rng import Stream, derive_seed

ENCODER_WIDTHS = (16, 64, 128, 256, 512)
MORPH_HIDDEN = (256, 128)
DESCRIPTOR_DIM = ENCODER_WIDTHS[-1]

_ACTIVATIONS = {"relu": ad.relu, "softplus": ad.softplus}
_ACT_CODES = {"relu": 0, "softplus": 1}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}

CHECKPOINT_MAGIC = b"CPDN"
CHECKPOINT_VERSION = 1


@dataclass
class AffineLayer:
    w: Tensor
    b: Tensor

    @property
    def in_width(self) -> int:
        return self.w.shape[0]

    @property
    def out_width(self) -> int:
        return self.w.shape[1]


class NetworkParams:
    """All weights, biases, and batch-norm state of one model instance."""

    def __init__(self, dim: int, activation: str, encoder, encoder_bn, morph, morph_bn):
        self.dim = dim
        self.activation = activation
        self.encoder = encoder  # list[AffineLayer], len 5
        self.encoder_bn = encoder_bn  # list[BatchNorm], one per encoder layer
        self.morph = morph  # list[AffineLayer], len 3; last layer has no bn
        self.morph_bn = morph_bn  # list[BatchNorm], len 2

    @property
    def dtype(self):
        return self.encoder[0].w.values.dtype

    def parameters(self) -> list:
        out = []
        for layer, bn in zip(self.encoder, self.encoder_bn):
            out += [layer.w, layer.b, bn.gamma, bn.beta]
        for i, layer in enumerate(self.morph):
            out += [layer.w, layer.b]
            if i < len(self.morph_bn):
                out += [self.morph_bn[i].gamma, self.morph_bn[i].beta]
        return out

    def astype(self, dtype) -> "NetworkParams":
        """Deep copy with every weight and running statistic cast to dtype."""
        enc, enc_bn, mor, mor_bn = [], [], [], []
        for layer in self.encoder:
            enc.append(_copy_layer(layer, dtype))
        for bn in self.encoder_bn:
            enc_bn.append(_copy_bn(bn, dtype))
        for layer in self.morph:
            mor.append(_copy_layer(layer, dtype))
        for bn in self.morph_bn:
            mor_bn.append(_copy_bn(bn, dtype))
        return NetworkParams(self.dim, self.activation, enc, enc_bn, mor, mor_bn)


def _copy_layer(layer: AffineLayer, dtype) -> AffineLayer:
    return AffineLayer(
        w=Tensor(layer.w.values.astype(dtype), requires_grad=True),
        b=Tensor(layer.b.values.astype(dtype), requires_grad=True),
    )


def _copy_bn(bn: BatchNorm, dtype) -> BatchNorm:
    out = BatchNorm(bn.width, dtype=dtype)
    out.gamma.values[:] = bn.gamma.values.astype(dtype)
    out.beta.values[:] = bn.beta.values.astype(dtype)
    out.running_mean = bn.running_mean.astype(dtype)
    out.running_var = bn.running_var.astype(dtype)
    return out


@dataclass(frozen=True)
class DisplacementField:
    """Per-source-point drifts and the transformed set they produce."""

    drifts: np.ndarray  # (n, dim) float64
    transformed: PointSet

    @property
    def n(self) -> int:
        return self.drifts.shape[0]


def _glorot(stream: Stream, rows: int, cols: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    u = stream.uniforms(rows * cols).reshape(rows, cols)
    return ((2.0 * u - 1.0) * limit).astype(dtype)


def init_params(dim: int, seed: int, activation: str = "relu", dtype=np.float32) -> NetworkParams:
    """Fresh Glorot-uniform weights, zero biases, unit batch-norm state."""
    if dim not in (2, 3):
        raise ConfigError(f"dim must be 2 or 3, got {dim}")
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"activation must be one of {tuple(_ACTIVATIONS)}")
    stream = Stream(derive_seed(seed, 0xD1F7))
    encoder, encoder_bn = [], []
    prev = dim
    for width in ENCODER_WIDTHS:
        w = Tensor(_glorot(stream, prev, width, dtype), requires_grad=True)
        b = Tensor(np.zeros((1, width), dtype=dtype), requires_grad=True)
        encoder.append(AffineLayer(w, b))
        encoder_bn.append(BatchNorm(width, dtype=dtype))
        prev = width
    morph, morph_bn = [], []
    prev = dim + 2 * DESCRIPTOR_DIM
    for width in MORPH_HIDDEN + (dim,):
        w = Tensor(_glorot(stream, prev, width, dtype), requires_grad=True)
        b = Tensor(np.zeros((1, width), dtype=dtype), requires_grad=True)
        morph.append(AffineLayer(w, b))
        prev = width
    for width in MORPH_HIDDEN:
        morph_bn.append(BatchNorm(width, dtype=dtype))
    return NetworkParams(dim, activation, encoder, encoder_bn, morph, morph_bn)


# -- forward passes -----------------------------------------------------------

def _as_input(points, params: NetworkParams) -> Tensor:
    arr = points.points if isinstance(points, PointSet) else np.asarray(points)
    if arr.ndim != 2 or arr.shape[1] != params.dim:
        raise DimMismatch(f"expected (n, {params.dim}) input, got {arr.shape}")
    return Tensor(arr.astype(params.dtype))


def encode(points, params: NetworkParams, mode: str = "eval") -> Tensor:
    """Order-invariant (1, 512) descriptor of a point set."""
    act = _ACTIVATIONS[params.activation]
    h = points if isinstance(points, Tensor) else _as_input(points, params)
    for layer, bn in zip(params.encoder, params.encoder_bn):
        h = act(bn(ad.affine(h, layer.w, layer.b), mode))
    return ad.maxpool_rows(h)


def morph_drifts(source: Tensor, l_s: Tensor, l_g: Tensor, params: NetworkParams,
                 mode: str = "eval") -> Tensor:
    """Per-point drifts for every row of source given the two descriptors."""
    n = source.shape[0]
    act = _ACTIVATIONS[params.activation]
    h = ad.concat_cols(source, ad.tile_row(l_s, n), ad.tile_row(l_g, n))
    for i, layer in enumerate(params.morph[:-1]):
        h = act(params.morph_bn[i](ad.affine(h, layer.w, layer.b), mode))
    last = params.morph[-1]
    return ad.affine(h, last.w, last.b)


def forward_pair(source, target, params: NetworkParams, mode: str) -> tuple:
    """(source_tensor, drifts_tensor, transformed_tensor) for one pair."""
    src = _as_input(source, params)
    tgt = _as_input(target, params)
    l_s = encode(src, params, mode)
    l_g = encode(tgt, params, mode)
    drifts = morph_drifts(src, l_s, l_g, params, mode)
    return src, drifts, ad.add(src, drifts)


def morph(source: PointSet, l_s: Tensor, l_g: Tensor, params: NetworkParams,
          mode: str = "eval") -> DisplacementField:
    with ad.no_grad():
        drifts = morph_drifts(_as_input(source, params), l_s, l_g, params, mode)
    return field_from_drifts(source, drifts.values)


def field_from_drifts(source: PointSet, drifts: np.ndarray) -> DisplacementField:
    d = drifts.astype(np.float64)
    return DisplacementField(drifts=d, transformed=PointSet(source.points + d))


def register_pair(pair: ShapePair, params: NetworkParams) -> DisplacementField:
    """Single eval-mode forward pass; no iteration, no parameter mutation."""
    if pair.dim != params.dim:
        raise DimMismatch(f"pair dim {pair.dim} vs model dim {params.dim}")
    with ad.no_grad():
        _, drifts, _ = forward_pair(pair.source, pair.target, params, "eval")
    return field_from_drifts(pair.source, drifts.values)


# -- continuity bound ----------------------------------------------------------

def spectral_norm(m: np.ndarray, iters: int = 50, tol: float = 1e-9) -> float:
    """Largest singular value by power iteration on m^T m."""
    m = m.astype(np.float64)
    v = np.ones(m.shape[1]) / np.sqrt(m.shape[1])
    sigma = 0.0
    for _ in range(iters):
        u = m @ v
        prev = sigma
        sigma = float(np.linalg.norm(u))
        if sigma == 0.0:
            return 0.0
        v = m.T @ u
        v /= np.linalg.norm(v)
        if abs(sigma - prev) < tol:
            break
    return float(np.linalg.norm(m @ v))


def lipschitz_bound(params: NetworkParams) -> float:
    """Upper bound on how fast the drift map can vary over source points.

    Product over morph layers of the spectral norm of the weight block the
    coordinates actually pass through, times each eval-mode batch-norm's
    largest per-channel scale.  relu and softplus are 1-Lipschitz, so they
    contribute factor 1.
    """
    first = params.morph[0].w.values[: params.dim, :]
    bound = spectral_norm(first)
    for i, layer in enumerate(params.morph[1:], start=1):
        bn = params.morph_bn[i - 1]
        bound *= float(bn.eval_scale().max())
        bound *= spectral_norm(layer.w.values)
    return bound


def empirical_drift_ratio(pair: ShapePair, params: NetworkParams,
                          n_probes: int = 1000, seed: int = 0) -> float:
    """Max ||v(x_i)-v(x_j)|| / ||x_i-x_j|| over random probe pairs.

    The drift map v is evaluated in eval mode with the descriptors of the
    given pair held fixed; computed in float64 so the ratio reflects the
    map itself rather than rounding.  Half the probe pairs are nearly
    coincident to stress the small-separation regime.
    """
    p64 = params.astype(np.float64)
    stream = Stream(derive_seed(seed, 0x11B5))
    a = 2.0 * stream.uniforms(n_probes * p64.dim).reshape(n_probes, p64.dim) - 1.0
    step = stream.normals(n_probes * p64.dim).reshape(n_probes, p64.dim)
    half = n_probes // 2
    b = a + step
    b[half:] = a[half:] + 1e-3 * step[half:]
    with ad.no_grad():
        l_s = encode(pair.source, p64, "eval")
        l_g = encode(pair.target, p64, "eval")
        va = morph_drifts(Tensor(a), l_s, l_g, p64, "eval").values
        vb = morph_drifts(Tensor(b), l_s, l_g, p64, "eval").values
    dx = np.linalg.norm(a - b, axis=1)
    dv = np.linalg.norm(va - vb, axis=1)
    ok = dx > 1e-12
    return float((dv[ok] / dx[ok]).max())


# -- checkpoint format ----------------------------------------------------------
#
# little-endian: magic 'CPDN', version u32, dim u8, activation u8,
# encoder layer count u8, morph layer count u8; per layer: rows u32, cols u32,
# weights f32[rows*cols] row-major, bias f32[cols]; batch-norm layers (all
# encoder layers and all but the last morph layer) then carry gamma, beta,
# running_mean, running_var f32[cols]; trailing crc32 u32 of all prior bytes.

def _pack_f32(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def save_checkpoint(path: str, params: NetworkParams) -> None:
    chunks = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<BBBB", params.dim, _ACT_CODES[params.activation],
                    len(params.encoder), len(params.morph)),
    ]
    for layer, bn in zip(params.encoder, params.encoder_bn):
        chunks.append(_layer_bytes(layer, bn))
    for i, layer in enumerate(params.morph):
        bn = params.morph_bn[i] if i < len(params.morph_bn) else None
        chunks.append(_layer_bytes(layer, bn))
    blob = b"".join(chunks)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)
    import os

    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


def _layer_bytes(layer: AffineLayer, bn) -> bytes:
    rows, cols = layer.w.shape
    parts = [struct.pack("<II", rows, cols), _pack_f32(layer.w.values),
             _pack_f32(layer.b.values)]
    if bn is not None:
        parts += [_pack_f32(bn.gamma.values), _pack_f32(bn.beta.values),
                  _pack_f32(bn.running_mean), _pack_f32(bn.running_var)]
    return b"".join(parts)


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.pos = 0
        self.path = path

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.blob):
            raise CorruptCheckpoint(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + count]
        self.pos += count
        return out

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").copy()


def load_checkpoint(path: str) -> NetworkParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise CorruptCheckpoint(f"{path}: file too short")
    body, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != (zlib.crc32(body) & 0xFFFFFFFF):
        raise CorruptCheckpoint(f"{path}: crc mismatch")
    r = _Reader(body, path)
    if r.take(4) != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    version = struct.unpack("<I", r.take(4))[0]
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"{path}: unsupported checkpoint version {version}")
    dim, act_code, n_enc, n_morph = struct.unpack("<BBBB", r.take(4))
    if dim not in (2, 3) or act_code not in _ACT_NAMES:
        raise FormatError(f"{path}: bad header fields")
    encoder, encoder_bn, morph, morph_bn = [], [], [], []
    for i in range(n_enc + n_morph):
        rows, cols = struct.unpack("<II", r.take(8))
        w = Tensor(r.f32(rows * cols).reshape(rows, cols), requires_grad=True)
        b = Tensor(r.f32(cols).reshape(1, cols), requires_grad=True)
        layer = AffineLayer(w, b)
        has_bn = i < n_enc or i < n_enc + n_morph - 1
        bn = None
        if has_bn:
            bn = BatchNorm(cols, dtype=np.float32)
            bn.gamma.values[:] = r.f32(cols).reshape(1, cols)
            bn.beta.values[:] = r.f32(cols).reshape(1, cols)
            bn.running_mean = r.f32(cols).reshape(1, cols)
            bn.running_var = r.f32(cols).reshape(1, cols)
        if i < n_enc:
            encoder.append(layer)
            encoder_bn.append(bn)
        else:
            morph.append(layer)
            if bn is not None:
                morph_bn.append(bn)
    if r.pos != len(body):
        raise CorruptCheckpoint(f"{path}: {len(body) - r.pos} trailing bytes")
    return NetworkParams(dim, _ACT_NAMES[act_code], encoder, encoder_bn, morph, morph_bn)
