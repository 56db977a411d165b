"""Keyed, reproducible RNG stream derivation.

Every stochastic component in this package draws from a PCG64 generator
derived from one root seed through integer key paths (numpy SeedSequence
spawn keys). Two call sites that derive the same key path read the same
variate stream, which is what makes the seed-sharing identities between
independently written samplers testable bit for bit.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "PCG64/SeedSequence"


class SeedTree:
    """A node in a keyed tree of reproducible random streams."""

    __slots__ = ("entropy", "key")

    def __init__(self, entropy, key: tuple[int, ...] = ()):
        if isinstance(entropy, (tuple, list)):
            self.entropy = tuple(int(e) for e in entropy)
            if any(e < 0 for e in self.entropy):
                raise ValueError("entropy entries must be nonnegative integers")
        else:
            if entropy < 0:
                raise ValueError("entropy must be a nonnegative integer")
            self.entropy = int(entropy)
        self.key = tuple(int(k) for k in key)

    def child(self, *key: int) -> "SeedTree":
        """Subtree at the given key path."""
        return SeedTree(self.entropy, self.key + key)

    def rng(self, *key: int) -> np.random.Generator:
        """Fresh generator for the stream at this node extended by `key`."""
        seq = np.random.SeedSequence(self.entropy, spawn_key=self.key + key)
        return np.random.default_rng(seq)

    def __repr__(self) -> str:
        return f"SeedTree(entropy={self.entropy}, key={self.key})"


def rand_indices(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    """Uniform indices in [0, n) consuming exactly `size` uniform variates.

    floor(u * n) instead of Generator.integers so that every draw costs one
    variate regardless of n (integers() uses rejection sampling with a
    variable draw count). The modulo bias is O(n / 2^53), irrelevant here.
    """
    return np.minimum((rng.random(size) * n).astype(np.int64), n - 1)
