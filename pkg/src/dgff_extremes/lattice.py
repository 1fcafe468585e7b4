"""Lattice boxes, site indexing and the bulk of a box.

Sites of a box ``[0, n-1]^d`` are stored flat in lexicographic (C) order, so
site ``(i_1, ..., i_d)`` has flat index ``np.ravel_multi_index(..., (n,)*d)``.
Every factorization and every random draw in the package uses this order.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

LatticePoint = Tuple[int, ...]


def as_point(coords: Iterable[int], d: int | None = None) -> LatticePoint:
    """Coerce ``coords`` to a tuple of ints, checking the dimension."""
    point = tuple(int(c) for c in coords)
    if d is not None and len(point) != d:
        raise ValueError(f"point {point} has dimension {len(point)}, expected {d}")
    return point


def check_dimension(d: int) -> int:
    d = int(d)
    if d < 3:
        raise ValueError(f"dimension d={d} < 3: simple random walk is recurrent")
    return d


def canonical_offset(offset: Sequence[int]) -> LatticePoint:
    """Representative of ``offset`` under sign flips and coordinate permutations.

    Absolute values sorted in decreasing order; the infinite-volume Green's
    function is constant on these classes.
    """
    return tuple(sorted((abs(int(c)) for c in offset), reverse=True))


@dataclass(frozen=True)
class LatticeBox:
    """The box ``V_N = [0, n-1]^d`` with ``N = n^d`` sites.

    ``delta`` is the default bulk parameter used by :meth:`bulk_mask` when no
    explicit value is given.
    """

    n: int
    d: int = 3
    delta: float = 0.25

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError(f"side length n={self.n} must be positive")
        check_dimension(self.d)
        if not 0.0 < self.delta < 0.5:
            raise ValueError(f"bulk parameter delta={self.delta} not in (0, 1/2)")

    @property
    def N(self) -> int:
        return self.n ** self.d

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.n,) * self.d

    def contains(self, point: Sequence[int]) -> bool:
        return len(point) == self.d and all(0 <= int(c) < self.n for c in point)

    def index(self, point: Sequence[int]) -> int:
        point = as_point(point, self.d)
        if not self.contains(point):
            raise ValueError(f"site {point} outside box of side {self.n}")
        return int(np.ravel_multi_index(point, self.shape))

    def point(self, index: int) -> LatticePoint:
        return tuple(int(c) for c in np.unravel_index(int(index), self.shape))

    def coords(self) -> np.ndarray:
        """All sites as an ``(N, d)`` integer array in flat-index order."""
        grids = np.indices(self.shape).reshape(self.d, -1)
        return grids.T.copy()

    def center(self) -> LatticePoint:
        return (self.n // 2,) * self.d

    def corner(self) -> LatticePoint:
        return (0,) * self.d

    def boundary_distance(self) -> np.ndarray:
        """l-infinity distance from each site to the complement ``Z^d \\ V_N``.

        For a single coordinate ``i`` the nearest outside points are ``-1``
        and ``n``, at distance ``min(i + 1, n - i)``; the l-infinity distance
        to the complement is the minimum over coordinates.
        """
        i = np.arange(self.n)
        per_axis = np.minimum(i + 1, self.n - i)
        grids = np.meshgrid(*([per_axis] * self.d), indexing="ij")
        return np.minimum.reduce(grids)

    def bulk_mask(self, delta: float | None = None) -> np.ndarray:
        """Boolean grid of the bulk: sites at distance > ``delta * n`` from the complement."""
        delta = self.delta if delta is None else float(delta)
        if not 0.0 < delta < 0.5:
            raise ValueError(f"bulk parameter delta={delta} not in (0, 1/2)")
        return self.boundary_distance() > delta * self.n

    def with_side(self, n: int) -> "LatticeBox":
        return LatticeBox(n=n, d=self.d, delta=self.delta)


def bulk(box: LatticeBox, delta: float) -> list[LatticePoint]:
    """Sites of ``box`` whose l-infinity distance to the complement exceeds ``delta * n``."""
    mask = box.bulk_mask(delta)
    return [tuple(int(c) for c in p) for p in np.argwhere(mask)]


def linf_ball_offsets(radius: float, d: int) -> np.ndarray:
    """Offsets ``o`` with ``||o||_inf <= radius``, lexicographic, shape ``(K, d)``."""
    r = int(np.floor(radius + 1e-12)) if radius >= 0 else -1
    if r < 0:
        return np.zeros((0, d), dtype=np.int64)
    rng = range(-r, r + 1)
    return np.array(list(itertools.product(rng, repeat=d)), dtype=np.int64)


def nearest_neighbor_offsets(d: int) -> np.ndarray:
    """The ``2d`` unit vectors ``+e_j, -e_j`` (l1 distance one)."""
    eye = np.eye(d, dtype=np.int64)
    return np.concatenate([eye, -eye])
