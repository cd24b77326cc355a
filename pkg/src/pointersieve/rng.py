"""Reproducible per-trajectory random streams.

Trajectory ``i`` of an ensemble seeded with ``master_seed`` draws from
``numpy.random.default_rng(derive_seed(master_seed, i))``.  ``derive_seed`` is
the splitmix64 output for the state ``master_seed + (i + 1) * 0x9E3779B97F4A7C15``
(mod 2**64), i.e. the ``i``-th value of a splitmix64 sequence started at the
master seed.  No RNG state is shared between trajectories, so results do not
depend on batching or scheduling.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    z = x & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master_seed: int, index: int) -> int:
    if index < 0:
        raise ValueError("trajectory index must be non-negative")
    return splitmix64((int(master_seed) + (index + 1) * _GAMMA) & _MASK)


def trajectory_rngs(master_seed: int, n: int, start: int = 0) -> list[np.random.Generator]:
    return [np.random.default_rng(derive_seed(master_seed, i)) for i in range(start, start + n)]


class NoiseBlocks:
    """Hands out per-step noise for a batch of independent streams.

    Each stream draws ``block`` steps at a time, so a trajectory consumes its
    generator in the same pattern whether it runs alone or inside a batch.
    """

    def __init__(self, rngs, kind: str, block: int = 1024, lam: float | None = None):
        if kind not in ("uniform", "normal", "poisson"):
            raise ValueError(f"unknown noise kind {kind!r}")
        if kind == "poisson" and lam is None:
            raise ValueError("poisson noise needs a rate")
        self.rngs = list(rngs)
        self.kind = kind
        self.block = block
        self.lam = lam
        self._buf = None
        self._pos = block

    def _refill(self):
        if self.kind == "uniform":
            cols = [g.random(self.block) for g in self.rngs]
        elif self.kind == "normal":
            cols = [g.standard_normal(self.block) for g in self.rngs]
        else:
            cols = [g.poisson(self.lam, self.block) for g in self.rngs]
        self._buf = np.stack(cols, axis=1)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos >= self.block:
            self._refill()
        row = self._buf[self._pos]
        self._pos += 1
        return row
