"""Counter-based pseudo-random streams for reproducible synthesis.

Every random draw in dataset synthesis and weight initialization comes from
a splitmix64 stream so that the byte-exact data can be regenerated from the
manifest alone, in any language.  The algorithm name recorded in manifests
is ``splitmix64-boxmuller``:

* state_i = seed + (i+1) * 0x9E3779B97F4A7C15   (mod 2^64)
* output_i = mix(state_i) with the standard splitmix64 finalizer
* uniforms take the top 53 bits: (output >> 11) * 2^-53, in [0, 1)
* normals use one Box-Muller cosine branch per value (two uniforms each):
  z = sqrt(-2 ln(1 - u1)) * cos(2 pi u2), so u1 = 0 is safe.

Because output_i depends only on (seed, i), a stream is random-access and
draws vectorize; serial and parallel generation agree bit for bit.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *indices: int) -> int:
    """Derive a child seed from a parent seed and an index path.

    Defined as repeated s = mix(s ^ mix(index + 1)); documented so other
    implementations can reproduce the per-pair streams in a manifest.
    """
    with np.errstate(over="ignore"):
        s = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        for ix in indices:
            s = _mix(s ^ _mix(np.uint64((ix + 1) & 0xFFFFFFFFFFFFFFFF)))
    return int(s)


class Stream:
    """Sequential view over a splitmix64 output sequence."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.counter = 0

    def _raw(self, count: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + count + 1, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * _GOLDEN)

    def uniforms(self, count: int) -> np.ndarray:
        """``count`` doubles uniform on [0, 1)."""
        return (self._raw(count) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def normals(self, count: int) -> np.ndarray:
        """``count`` standard normal doubles (Box-Muller cosine branch)."""
        u = self.uniforms(2 * count)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        return r * np.cos(2.0 * np.pi * u[1::2])

    def integers(self, count: int, upper: int) -> np.ndarray:
        """``count`` ints uniform on [0, upper) via floor(u * upper)."""
        if upper <= 0:
            raise ValueError("upper must be positive")
        return np.minimum((self.uniforms(count) * upper).astype(np.int64), upper - 1)

    def shuffle(self, n: int) -> np.ndarray:
        """A permutation of range(n) by Fisher-Yates over stream draws."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = int(self.integers(1, i + 1)[0])
            perm[i], perm[j] = perm[j], perm[i]
        return perm


RNG_ALGORITHM = "splitmix64-boxmuller"
