"""Counter-based pseudo-random generation with reproducible streams.

The generator applies the SplitMix64 finalizer to a keyed 64-bit counter:

    out[i] = mix64((counter_i * GAMMA + K1) ^ K2)

where ``K1 = mix64(seed + GAMMA)``, ``K2 = mix64(stream + SQRT2_64)`` and
``counter_i`` runs from the current draw position.  Identical
``(seed, stream)`` pairs therefore produce bitwise-identical sequences on
every platform: all arithmetic is unsigned 64-bit modulo 2**64 and the
float conversions below are exact.

Reference vectors (first raw outputs):
  seed=0, stream=0: 1729195395326304284, 1529794087811473921, 12080470990150299344
  seed=1, stream=0: 16186778211281085592, 13101914932138964144, 16638102052434655281
  seed=0, stream=1: 10604396679691009134, 7575750295158447098, 1458682126689294836
More vectors, cross-checked against a pure-Python reimplementation, live
in tests/test_rng.py.

Derived quantities:
  uniform   (raw >> 11) * 2**-53, in [0, 1)
  normal    Box-Muller on uniform pairs
  poisson   Knuth's product-of-uniforms method
"""

from __future__ import annotations

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
SQRT2_64 = np.uint64(0x6A09E667F3BCC909)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)

_INV_2_53 = float(2.0**-53)


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z ^ (z >> _S30)
        z = z * _M1
        z = z ^ (z >> _S27)
        z = z * _M2
        z = z ^ (z >> _S31)
    return z


class SeededRng:
    """Deterministic random stream identified by (seed, stream).

    The only mutable state is the draw counter, so the full generator
    state is the triple ``(seed, stream, counter)`` and can be stored in
    a checkpoint and restored exactly.
    """

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter)
        with np.errstate(over="ignore"):
            self._k1 = mix64(np.uint64(self.seed) + GAMMA)
            self._k2 = mix64(np.uint64(self.stream) + SQRT2_64)

    def derive(self, stream: int) -> "SeededRng":
        """Fresh generator on a different stream of the same seed."""
        return SeededRng(self.seed, stream)

    @property
    def state(self) -> tuple[int, int, int]:
        return (self.seed, self.stream, int(self.counter))

    def raw(self, n: int) -> np.ndarray:
        """Next n raw uint64 outputs; advances the counter by n."""
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return mix64((idx * GAMMA + self._k1) ^ self._k2)

    def uniform(self, shape=None):
        """Doubles in [0, 1). Scalar when shape is None."""
        if shape is None:
            return float(self.raw(1)[0] >> _S11) * _INV_2_53
        n = int(np.prod(shape)) if shape != () else 1
        out = (self.raw(n) >> _S11).astype(np.float64) * _INV_2_53
        return out.reshape(shape)

    def normal(self, shape=None):
        """Standard normals via Box-Muller. Scalar when shape is None."""
        scalar = shape is None
        n = 1 if scalar else (int(np.prod(shape)) if shape != () else 1)
        pairs = (n + 1) // 2
        u = (self.raw(2 * pairs) >> _S11).astype(np.float64) * _INV_2_53
        u1 = np.maximum(u[:pairs], _INV_2_53)  # keep log() finite
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = (2.0 * np.pi) * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        if scalar:
            return float(z[0])
        return z.reshape(shape)

    def poisson(self, lam) -> np.ndarray:
        """Poisson draws for an array of rates (Knuth's method)."""
        lam = np.asarray(lam, dtype=np.float64)
        flat = lam.ravel()
        limit = np.exp(-flat)
        prod = np.ones_like(flat)
        counts = np.zeros(flat.shape, dtype=np.int64)
        active = flat > 0
        while np.any(active):
            u = self.uniform((int(active.sum()),))
            prod[active] = prod[active] * u
            active = active & (prod > limit)
            counts[active] += 1
        return counts.reshape(lam.shape)

    def index_below(self, bound: int) -> int:
        """Unbiased-to-2**-64 integer in [0, bound)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        x = int(self.raw(1)[0])
        return (x * bound) >> 64

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        order = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.index_below(i + 1)
            order[i], order[j] = order[j], order[i]
        return order
