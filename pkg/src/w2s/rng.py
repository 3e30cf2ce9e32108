"""Seeded, splittable random streams for reproducible experiments."""

from __future__ import annotations

import numpy as np


class Rng:
    """Counter-based random stream that can spawn independent children.

    Wraps numpy's Philox generator keyed by ``(seed, path)``: equal keys give
    bit-identical streams, distinct paths give statistically independent ones.
    Every unit of work (a task, a training stage) takes its own child, so
    results do not depend on execution order or worker count.
    """

    __slots__ = ("seed", "path", "generator")

    def __init__(self, seed: int, path: tuple[int, ...] = ()) -> None:
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        path = tuple(int(p) for p in path)
        for p in path:
            if not 0 <= p < 2**32:
                raise ValueError("stream path entries must be unsigned 32-bit integers")
        self.seed = seed
        self.path = path
        seq = np.random.SeedSequence(seed, spawn_key=path)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def child(self, *ids: int) -> "Rng":
        """Fresh independent stream keyed by this stream's path extended with ids."""
        return Rng(self.seed, self.path + ids)

    def normal(self, mean: float = 0.0, std: float = 1.0, size=None):
        return self.generator.normal(mean, std, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"
