"""Counter-based random streams.

Every draw is a pure function of (seed, stream salt, path index, counter),
so simulations are reproducible bit for bit regardless of chunking, worker
count, or evaluation order.  The generator is a SplitMix64-style stateless
hash: a 64-bit counter sequence pushed through an avalanche finalizer.

Streams with different salts are disjoint by construction; in particular the
rating-chain uniforms never share draws with the factor-noise uniforms, which
is what makes exact common jumps of the chain and the driving noise a
null event.
"""

from __future__ import annotations

import numpy as np

U64 = np.uint64

GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)

# Stream salts.  A curve stream uses SALT_LEVY + curve index.
SALT_LEVY = 0x101
SALT_CHAIN = 0x202
SALT_COX = 0x303
SALT_INCREMENTS = 0x404

_INV_2POW53 = 2.0 ** -53


def mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wraparound arithmetic)."""
    x = np.asarray(x, dtype=U64)
    x = (x ^ (x >> U64(30))) * _MIX1
    x = (x ^ (x >> U64(27))) * _MIX2
    return x ^ (x >> U64(31))


def stream_keys(seed: int, salt: int, path_ids) -> np.ndarray:
    """Per-path stream keys for a given (seed, salt)."""
    with np.errstate(over="ignore"):
        root = mix64(np.asarray(U64(seed) ^ (U64(salt) * GOLDEN)))
        ids = np.asarray(path_ids, dtype=U64)
        return mix64(root + (ids + U64(1)) * GOLDEN)


def raw_u64(keys, counters) -> np.ndarray:
    """The counter-th 64-bit word of each stream (broadcasting)."""
    k = np.asarray(keys, dtype=U64)
    c = np.asarray(counters, dtype=U64)
    with np.errstate(over="ignore"):
        return mix64(k + (c + U64(1)) * GOLDEN)


def uniform(keys, counters) -> np.ndarray:
    """Uniform draws in the open interval (0, 1)."""
    bits = raw_u64(keys, counters)
    return ((bits >> U64(11)).astype(np.float64) + 0.5) * _INV_2POW53


def normal_pair(u1: np.ndarray, u2: np.ndarray):
    """Box-Muller transform of two uniform arrays."""
    r = np.sqrt(-2.0 * np.log(u1))
    a = 2.0 * np.pi * u2
    return r * np.cos(a), r * np.sin(a)


def standard_normals(keys, ctr_base, n: int) -> np.ndarray:
    """n standard normals per stream, consuming 2*ceil(n/2) counters.

    Returns an array of shape keys.shape + (n,).  The counter layout is
    fixed (pairs of uniforms per Box-Muller pair) so that every backend
    consumes the same slots.
    """
    keys = np.asarray(keys, dtype=U64)
    n_pairs = (n + 1) // 2
    out = np.empty(keys.shape + (2 * n_pairs,), dtype=np.float64)
    for p in range(n_pairs):
        u1 = uniform(keys, np.asarray(ctr_base + 2 * p, dtype=U64))
        u2 = uniform(keys, np.asarray(ctr_base + 2 * p + 1, dtype=U64))
        z0, z1 = normal_pair(u1, u2)
        out[..., 2 * p] = z0
        out[..., 2 * p + 1] = z1
    return out[..., :n]


def poisson_counts(mu, u: np.ndarray, cap: int) -> np.ndarray:
    """Poisson counts by CDF inversion from one uniform per entry.

    `mu` may be a scalar or an array broadcastable to u's shape (rates of
    zero yield zero counts since uniforms are strictly below one).  Exact
    for the given uniform; raises if any count would exceed `cap` (the
    caller sizes `cap` so this has negligible probability).
    """
    u = np.asarray(u, dtype=np.float64)
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), u.shape)
    if np.any(mu < 0.0):
        raise ValueError("poisson rate must be >= 0")
    counts = np.zeros(u.shape, dtype=np.int64)
    p = np.exp(-mu)
    cdf = p.copy()
    active = u > cdf
    k = 0
    while np.any(active):
        k += 1
        if k > cap:
            raise RuntimeError(f"poisson count exceeded cap={cap}")
        p = p * (mu / k)
        cdf = cdf + p
        counts[active] = k
        active = active & (u > cdf)
    return counts


def poisson_cap(mu: float) -> int:
    """Slot budget per Poisson draw; exceeding it has probability < 1e-15."""
    return int(np.ceil(mu + 10.0 * np.sqrt(max(mu, 1.0)) + 20.0))
