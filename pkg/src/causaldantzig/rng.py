"""Counter-based deterministic random number generation.

All randomness in the package flows through a 64-bit counter-based generator
so that every draw is a pure function of (key, counter). The i-th raw output
of a stream with key ``k`` is::

    splitmix64_finalizer(k + (i + 1) * 0x9E3779B97F4A7C15)   (mod 2**64)

where the finalizer is the standard splitmix64 xor-multiply chain
(Steele, Lea & Flood 2014):

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

Uniform variates map the top 53 bits to the open interval (0, 1) via
``u = ((x >> 11) + 0.5) * 2**-53`` so the Gaussian inverse transform never
sees 0 or 1. Gaussians are obtained by inverse transform with the rational
quantile approximation in :mod:`causaldantzig.normal`; no rejection step ever
consumes a data-dependent number of raw outputs, which keeps parallel streams
bit-reproducible.

Independent streams are derived by hashing an ordered tuple of parts
(integers or strings) into a new key; strings are hashed with 64-bit FNV-1a.
Per-(environment, replicate) streams therefore never overlap and replicates
can run in any order or in parallel without changing results.
"""

from __future__ import annotations

import math

import numpy as np

from .normal import ndtri

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3

_U_GOLDEN = np.uint64(_GOLDEN)
_U_MIX1 = np.uint64(_MIX1)
_U_MIX2 = np.uint64(_MIX2)


def _mix_scalar(z: int) -> int:
    z &= _MASK
    z ^= z >> 30
    z = (z * _MIX1) & _MASK
    z ^= z >> 27
    z = (z * _MIX2) & _MASK
    z ^= z >> 31
    return z


def _mix_array(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = z ^ (z >> np.uint64(30))
        z = z * _U_MIX1
        z = z ^ (z >> np.uint64(27))
        z = z * _U_MIX2
        z = z ^ (z >> np.uint64(31))
    return z


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK
    return h


def derive_key(*parts: int | str) -> int:
    """Hash an ordered tuple of ints/strings into a 64-bit stream key."""
    key = _mix_scalar(_FNV_OFFSET)
    for part in parts:
        if isinstance(part, bool):
            raise TypeError("bool is not a valid key part")
        if isinstance(part, int):
            h = part & _MASK
        elif isinstance(part, str):
            h = _fnv1a(part)
        else:
            raise TypeError(f"key parts must be int or str, got {type(part)!r}")
        key = _mix_scalar(key ^ h)
    return key


class Stream:
    """A deterministic stream of variates addressed by an advancing counter.

    The stream is stateful only through the counter offset: the n-th variate
    ever drawn from a given key is always the same value, regardless of how
    draws were batched.
    """

    def __init__(self, key: int):
        self.key = key & _MASK
        self._offset = 0

    @classmethod
    def from_parts(cls, *parts: int | str) -> "Stream":
        return cls(derive_key(*parts))

    def substream(self, *parts: int | str) -> "Stream":
        """Derive an independent stream keyed by (this key, *parts)."""
        return Stream(derive_key(self.key, *parts))

    def raw(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs."""
        idx = np.arange(self._offset + 1, self._offset + n + 1, dtype=np.uint64)
        self._offset += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.key) + idx * _U_GOLDEN
        return _mix_array(z)

    def uniforms(self, shape) -> np.ndarray:
        """Uniform variates in the open interval (0, 1)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        x = self.raw(n)
        u = ((x >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
        return u.reshape(shape)

    def normals(self, shape) -> np.ndarray:
        """Standard Gaussian variates by inverse transform."""
        return ndtri(self.uniforms(shape))

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniforms(n - 1)
        for i in range(n - 1, 0, -1):
            j = int(math.floor(u[n - 1 - i] * (i + 1)))
            if j > i:  # guards u == 1 - eps rounding
                j = i
            perm[i], perm[j] = perm[j], perm[i]
        return perm
