"""Seeded random streams.

Every sample draws from its own Philox (counter-based, 64-bit) stream keyed by
``(master_seed, index)``, so datasets can be generated in any order or in
parallel and still come out identical. Gaussian noise uses the Box-Muller
transform on the stream's uniforms.
"""

import numpy as np

__all__ = ["make_stream", "sub_stream", "gaussian"]


def make_stream(seed):
    """Return a Philox-backed generator for ``seed`` (int or SeedSequence)."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def sub_stream(master_seed, index):
    """Stream for item ``index`` of a collection seeded with ``master_seed``."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return make_stream(seq)


def gaussian(rng, n):
    """Draw ``n`` standard normal variates by Box-Muller.

    Pairs of uniforms ``(u1, u2)`` give ``sqrt(-2 ln u1) * (cos 2πu2, sin 2πu2)``;
    ``u1`` is taken on (0, 1] so the log is always finite.
    """
    m = (n + 1) // 2
    u1 = 1.0 - rng.random(m)
    u2 = rng.random(m)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * m)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:n]
