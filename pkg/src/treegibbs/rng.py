"""Counter-based uniforms keyed by (seed, vertex address, stream).

Each draw is a pure function of its key, so any vertex of an exponentially
large configuration can be re-derived without storing the rest.  The mixer is
the splitmix64 finalizer applied twice over the combined words.
"""
from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
# 1-element arrays: numpy wraps array arithmetic silently but warns on scalars
_GOLDEN = np.array([0x9E3779B97F4A7C15], dtype=np.uint64)
_M1 = np.array([0xBF58476D1CE4E5B9], dtype=np.uint64)
_M2 = np.array([0x94D049BB133111EB], dtype=np.uint64)

# stream tags
BROADCAST = 1
INTERIOR = 2
REPLICA = 3
PRIME = 4  # independent boundary for mismatched overlaps


def mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _u64(x):
    return np.array([int(x) & _MASK], dtype=np.uint64)


def replica_keys(master_seed, replicas, stream=REPLICA):
    """One 64-bit key per replica index, derived from the master seed."""
    base = mix64(_u64(master_seed) + _GOLDEN * _u64(stream))
    idx = np.asarray(replicas, dtype=np.uint64)
    return mix64(base ^ mix64(idx + _GOLDEN))


def uniforms(keys, addresses, stream):
    """Uniform [0, 1) array of shape (len(keys), len(addresses))."""
    keys = np.atleast_1d(np.asarray(keys, dtype=np.uint64))
    addr = np.atleast_1d(np.asarray(addresses)).astype(np.uint64)
    salt = mix64(addr * _GOLDEN + _u64(stream) * _M1)
    z = mix64(keys[:, None] ^ salt[None, :])
    z = mix64(z + salt[None, :])
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
