"""Deterministic pseudo-randomness with a fully pinned algorithm.

The generator is SplitMix64 in counter form: draw i of a stream seeded with
``s`` is ``mix64(s + i * 0x9E3779B97F4A7C15)`` for i = 1, 2, ..., where
``mix64`` is the standard SplitMix64 finalizer

    z ^= z >> 30; z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27; z *= 0x94D049BB133111EB
    z ^= z >> 31

with all arithmetic mod 2^64.  The counter form produces the same stream as
the sequential definition and vectorizes over numpy uint64 arrays.  The
uint64 stream is bit-identical on every platform.

Derived values:

- uniforms in [0, 1): ``(u >> 11) * 2**-53``;
- standard normals: Box-Muller on consecutive pairs (a, b) of raw draws,
  u1 = ((a >> 11) + 1) * 2**-53 in (0, 1], u2 = (b >> 11) * 2**-53,
  z0 = sqrt(-2 ln u1) cos(2 pi u2), z1 = sqrt(-2 ln u1) sin(2 pi u2);
- permutations: argsort of a fresh uniform draw.

Uniforms inherit the cross-platform bit guarantee.  Normals additionally
depend on libm's log/cos/sin rounding; they are bit-stable across runs on a
given platform, which is what the reproducibility tests pin.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .tensor import Matrix

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_DERIVE = np.uint64(0xD6E8FEB86659FD93)
_U53 = 2.0**-53


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream with uniform/normal transforms.

    Same seed gives the same stream on every platform and run; the stream
    position advances only through the drawing methods.
    """

    def __init__(self, seed: int):
        self._seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._count = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    def next_u64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ParameterError(f"next_u64: n must be >= 0, got {n}")
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        return _mix64(self._seed + idx * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1)."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * _U53

    def standard_normal(self, n: int) -> np.ndarray:
        """n doubles from N(0, 1) via Box-Muller; draws ceil(n/2)*2 raws."""
        pairs = (n + 1) // 2
        raw = self.next_u64(2 * pairs)
        a, b = raw[0::2], raw[1::2]
        u1 = ((a >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (b >> np.uint64(11)).astype(np.float64) * _U53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:n]

    def normal(self, shape, sigma: float = 1.0) -> np.ndarray:
        if sigma < 0:
            raise ParameterError(f"normal: sigma must be >= 0, got {sigma}")
        size = int(np.prod(shape))
        return (self.standard_normal(size) * sigma).reshape(shape)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n ints uniform on [0, bound) via floor(u * bound)."""
        if bound < 1:
            raise ParameterError(f"integers: bound must be >= 1, got {bound}")
        return np.minimum((self.uniform(n) * bound).astype(np.int64), bound - 1)

    def derive(self, tag: int) -> "Rng":
        """Independent child stream; deterministic function of (seed, tag)."""
        base = np.array([self._seed ^ _DERIVE], dtype=np.uint64)
        z = _mix64(base + np.uint64(int(tag) & 0xFFFFFFFFFFFFFFFF))
        return Rng(int(z[0]))


def gaussian_fill(rng: Rng, rows: int, cols: int, sigma: float) -> Matrix:
    """Matrix of i.i.d. N(0, sigma^2) samples drawn row-major from the stream."""
    if sigma < 0:
        raise ParameterError(f"gaussian_fill: sigma must be >= 0, got {sigma}")
    if rows < 1 or cols < 1:
        raise ParameterError(f"gaussian_fill: dims must be positive, got {rows}x{cols}")
    return Matrix(rng.normal((rows, cols), sigma))
