"""Deterministic RNG stream derivation.

Every random draw in the package comes from a generator derived from
(seed, path) where path is a tuple of stage names and indices. The
derivation is a hash of the canonical path string, so results never
depend on call order, batch size or parallel scheduling: a rollout keyed
(seed, "train", 3, 17) produces the same draws no matter what ran before.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "StreamTree"]


def substream(seed: int, *path) -> np.random.Generator:
    """Return an independent Generator for (seed, path).

    Path components may be strings or integers. The same (seed, path)
    always yields the same stream on every platform.
    """
    key = "/".join(_component(p) for p in path)
    digest = hashlib.sha256(f"{int(seed)}:{key}".encode("utf-8")).digest()
    entropy = int.from_bytes(digest[:16], "big")
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _component(p) -> str:
    if isinstance(p, str):
        return "s" + p
    if isinstance(p, (int, np.integer)):
        return "i" + str(int(p))
    raise TypeError(f"stream path components must be str or int, got {type(p)!r}")


class StreamTree:
    """Seed plus a path prefix; hands out child trees and generators.

    Passing a StreamTree around is how stages hand namespaced randomness
    to sub-stages without ever sharing generator state.
    """

    __slots__ = ("seed", "path")

    def __init__(self, seed: int, path: tuple = ()):
        self.seed = int(seed)
        self.path = tuple(path)

    def child(self, *path) -> "StreamTree":
        return StreamTree(self.seed, self.path + path)

    def rng(self, *path) -> np.random.Generator:
        return substream(self.seed, *self.path, *path)

    def rngs(self, n: int, *path) -> list[np.random.Generator]:
        """n sibling generators, one per index 0..n-1."""
        return [substream(self.seed, *self.path, *path, i) for i in range(n)]

    def __repr__(self):
        return f"StreamTree(seed={self.seed}, path={self.path!r})"
