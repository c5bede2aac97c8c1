"""Keyed counter-based hashing for quenched edge randomness.

Every coin is a pure function of ``(seed, domain, key...)``: the key fields
are folded through the SplitMix64 finalizer and the top 53 bits of the
result become a uniform in ``[0, 1)``.  Nothing is stored, so both endpoints
of an edge read the same coin and any realisation can be replayed.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# domain tags keep unrelated coin families apart
HORIZONTAL = 1
VERTICAL = 2
BLOCK = 3
STREAM = 4


def _as_u64(a) -> np.ndarray:
    arr = np.asarray(a)
    if arr.dtype == np.uint64:
        return arr
    if arr.dtype.kind in "iub":
        return arr.astype(np.int64).view(np.uint64)
    raise TypeError(f"integer key expected, got dtype {arr.dtype}")


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, applied elementwise to a uint64 array."""
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def hash_keys(seed: int, domain: int, *fields) -> np.ndarray:
    """Fold integer key fields (broadcast together) into one uint64 hash."""
    if isinstance(seed, (int, np.integer)):
        s = np.full((), int(seed) % (1 << 64), dtype=np.uint64)
    else:
        s = np.asarray(seed).astype(np.uint64)
    with np.errstate(over="ignore"):
        h = mix64(s + _GOLDEN)
        h = mix64(h ^ (np.uint64(domain) * _GOLDEN))
        for f in fields:
            h = mix64((h + _GOLDEN) ^ mix64(_as_u64(f) + _GOLDEN))
    return h


def uniform(seed: int, domain: int, *fields) -> np.ndarray:
    """Uniform in [0, 1) keyed by ``(seed, domain, fields)``."""
    h = hash_keys(seed, domain, *fields)
    return (h >> _S11).astype(np.float64) * _INV53


def derive_seed(seed: int, *labels: int) -> int:
    """Child seed for a replica, cell or block; deterministic in the labels."""
    return int(hash_keys(seed, STREAM, *[np.int64(v) for v in labels]))


def generator(seed: int, *labels: int) -> np.random.Generator:
    """A numpy Generator whose stream is fixed by ``(seed, labels)``."""
    return np.random.default_rng(np.random.SeedSequence([seed % (1 << 64), *[v % (1 << 64) for v in labels]]))


_MASK = (1 << 64) - 1


def _mix_int(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def uniform_scalar(seed: int, domain: int, *fields: int) -> float:
    """Pure-Python twin of :func:`uniform` for one key; much faster in scalar loops."""
    g = 0x9E3779B97F4A7C15
    h = _mix_int((seed + g) & _MASK)
    h = _mix_int(h ^ ((domain * g) & _MASK))
    for f in fields:
        h = _mix_int(((h + g) & _MASK) ^ _mix_int((f + g) & _MASK))
    return (h >> 11) * _INV53
