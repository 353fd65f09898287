"""Search-direction sets: the pixel basis and the low-frequency DCT basis.

Directions are materialized one at a time as ``(h, w, c)`` arrays; the full
basis matrix is never built.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels

PIXEL = "pixel"
DCT = "dct"

DEFAULT_FD = 28 / 299


class DirectionError(ValueError):
    pass


@dataclass(frozen=True)
class DirectionSet:
    """An indexable set of orthonormal search directions.

    For ``kind == "dct"`` only the ``k x k`` lowest-frequency block is kept in
    each channel, with ``k = floor(freq_fraction * min(height, width))``.
    Index layout is ``(channel, u, v)`` in row-major order; each DCT
    direction is nonzero in a single channel.
    """

    kind: str
    height: int
    width: int
    channels: int
    freq_fraction: float = 1.0

    def __post_init__(self):
        if self.kind not in (PIXEL, DCT):
            raise DirectionError(f"unknown direction kind {self.kind!r}")
        if min(self.height, self.width, self.channels) < 1:
            raise DirectionError("direction set needs a positive shape")
        if self.kind == DCT:
            if not 0 < self.freq_fraction <= 1:
                raise DirectionError("freq_fraction must lie in (0, 1]")
            if self.k < 1:
                raise DirectionError(
                    f"freq_fraction {self.freq_fraction} keeps no frequencies "
                    f"for a {self.height}x{self.width} image"
                )

    @property
    def shape(self):
        return (self.height, self.width, self.channels)

    @property
    def k(self):
        # small epsilon guards fractions like 28/299 * 299 = 27.999999...
        return int(math.floor(self.freq_fraction * min(self.height, self.width) + 1e-9))

    @property
    def size(self):
        if self.kind == PIXEL:
            return self.height * self.width * self.channels
        return self.k * self.k * self.channels

    def __len__(self):
        return self.size

    def decode(self, index):
        """Return the coordinates an index addresses.

        ``(row, col, channel)`` for the pixel basis, ``(channel, u, v)`` for DCT.
        """
        index = int(index)
        if not 0 <= index < self.size:
            raise DirectionError("direction index out of range")
        if self.kind == PIXEL:
            return np.unravel_index(index, self.shape)
        k = self.k
        return index // (k * k), (index // k) % k, index % k

    def materialize(self, index):
        out = np.zeros(self.shape)
        if self.kind == PIXEL:
            out[self.decode(index)] = 1.0
            return out
        channel, u, v = self.decode(index)
        out[:, :, channel] = kernels.dct_plane(self.height, self.width, u, v)
        return out


def materialize_direction(ds, index):
    return ds.materialize(index)


class DirectionSampler:
    """Seeded stream of direction indices.

    With replacement (the default) every draw is uniform over the set.
    Without replacement the sampler walks a seeded permutation and reshuffles
    once it is exhausted.
    """

    def __init__(self, ds, seed=None, without_replacement=False):
        if ds.size < 1:
            raise DirectionError("empty direction set")
        self.ds = ds
        self.rng = np.random.default_rng(seed)
        self.without_replacement = without_replacement
        self._perm = None
        self._pos = 0

    def next_index(self):
        if not self.without_replacement:
            return int(self.rng.integers(self.ds.size))
        if self._perm is None or self._pos >= self._perm.size:
            self._perm = self.rng.permutation(self.ds.size)
            self._pos = 0
        idx = int(self._perm[self._pos])
        self._pos += 1
        return idx

    def sample(self):
        idx = self.next_index()
        return idx, self.ds.materialize(idx)


def sample_direction(ds, rng):
    """One uniform draw ``(index, direction)`` from a ``numpy.random.Generator``."""
    idx = int(rng.integers(ds.size))
    return idx, ds.materialize(idx)
