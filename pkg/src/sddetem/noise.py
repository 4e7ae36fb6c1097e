"""Reproducible Brownian increments on a fine master grid.

All step sizes in a coupled experiment are driven by the same underlying
Brownian path: the master lattice holds increments at the finest resolution
and ``coarsen`` adds them up into the increments of any coarser grid.  Within
each coarse bin the summation order is fixed left-to-right, so a coarse
increment is exactly the same float no matter where it is computed.

Increments are a pure function of ``(seed, path_id, index)``: they are
generated chunk by chunk, each chunk from its own generator keyed by
``SeedSequence(seed, spawn_key=(path_id, chunk))``.  Regeneration therefore
yields bitwise-identical values, chunks are randomly accessible, and distinct
paths are statistically independent streams that may be produced concurrently
in any order.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = ["BrownianLattice", "master_increments", "coarsen"]

CHUNK = 4096

_MAX_SEED = 2**64 - 1


@dataclass(frozen=True)
class BrownianLattice:
    """Seeded multi-resolution Brownian increments for one trajectory."""

    master_dt: float
    n_steps: int
    noise_dim: int
    seed: int
    path_id: int = 0

    def __post_init__(self):
        if not self.master_dt > 0:
            raise ValueError(f"master_dt must be positive, got {self.master_dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.noise_dim < 1:
            raise ValueError(f"noise_dim must be >= 1, got {self.noise_dim}")
        if not 0 <= self.seed <= _MAX_SEED:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.path_id < 0:
            raise ValueError(f"path_id must be nonnegative, got {self.path_id}")

    def with_path(self, path_id: int) -> "BrownianLattice":
        """The same lattice family, switched to another trajectory index."""
        return replace(self, path_id=path_id)

    def _chunk(self, index: int) -> np.ndarray:
        lo = index * CHUNK
        hi = min(lo + CHUNK, self.n_steps)
        rng = np.random.default_rng(
            np.random.SeedSequence(self.seed, spawn_key=(self.path_id, index))
        )
        out = rng.standard_normal((hi - lo, self.noise_dim))
        out *= np.sqrt(self.master_dt)
        return out

    def increments(self, start: int = 0, count: int | None = None) -> np.ndarray:
        """Master increments ``[start, start + count)`` as a ``(count, m)`` array."""
        if count is None:
            count = self.n_steps - start
        if not 0 <= start <= self.n_steps:
            raise ValueError(f"start={start} outside [0, {self.n_steps}]")
        if count < 0 or start + count > self.n_steps:
            raise ValueError(
                f"range [{start}, {start + count}) outside [0, {self.n_steps})"
            )
        if count == 0:
            return np.empty((0, self.noise_dim))
        first, last = start // CHUNK, (start + count - 1) // CHUNK
        parts = [self._chunk(c) for c in range(first, last + 1)]
        block = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
        lo = start - first * CHUNK
        return block[lo : lo + count]


def master_increments(lattice: BrownianLattice) -> np.ndarray:
    """All master increments of the lattice, shape ``(n_steps, m)``."""
    return lattice.increments()


def _sum_bins(block: np.ndarray, factor: int) -> np.ndarray:
    """Left-to-right sums of consecutive groups of ``factor`` rows.

    Vectorized across bins but strictly sequential within a bin, so a bin sum
    equals the running accumulation a streaming consumer would compute.
    """
    bins = block.reshape(block.shape[0] // factor, factor, *block.shape[1:])
    acc = bins[:, 0].copy()
    for j in range(1, factor):
        acc += bins[:, j]
    return acc


def coarsen(lattice: BrownianLattice, factor: int) -> np.ndarray:
    """Increments of the grid ``factor`` times coarser than the master grid.

    Coarse increment ``j`` is the left-to-right sum of master increments
    ``[j * factor, (j + 1) * factor)``, so every resolution of a convergence
    study is driven by the identical underlying path.
    """
    if factor < 1 or factor != int(factor):
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if lattice.n_steps % factor != 0:
        raise ValueError(
            f"factor {factor} does not divide n_steps {lattice.n_steps}"
        )
    master = lattice.increments()
    if factor == 1:
        return master
    return _sum_bins(master, factor)
