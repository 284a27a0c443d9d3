"""Hard-core boson basis on an ``l_x`` x ``l_y`` square lattice.

Sites are linearized row-major: column ``j`` in ``[1, l_x]`` and row ``k`` in
``[1, l_y]`` map to ``i = (k - 1) * l_x + (j - 1)``.  A configuration is a
bit-set stored as a Python ``int`` (bit ``i`` set when site ``i`` is occupied).
Basis states are ordered lexicographically on their sorted occupied-site
tuples, which is the order produced by :func:`itertools.combinations`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from typing import Iterable, Optional

import numpy as np

from .errors import InvalidParticleCount, InvalidState, SiteOutOfRange

OccupationState = int

BASIS_ORDER = "lexicographic-sorted-sites/row-major"


@dataclass(frozen=True)
class LatticeShape:
    l_x: int
    l_y: int

    def __post_init__(self):
        if self.l_x < 1 or self.l_y < 1:
            raise ValueError(f"lattice dimensions must be positive, got {self.l_x}x{self.l_y}")

    @property
    def n_sites(self) -> int:
        return self.l_x * self.l_y

    def site(self, j: int, k: int) -> int:
        """Linear index of the 1-based (column, row) pair ``(j, k)``."""
        return (k - 1) * self.l_x + (j - 1)

    def coords(self, i: int) -> tuple[int, int]:
        """1-based ``(j, k)`` of linear site ``i``."""
        return i % self.l_x + 1, i // self.l_x + 1

    def __str__(self):
        return f"{self.l_x}x{self.l_y}"


def mask_from_sites(sites: Iterable[int]) -> OccupationState:
    mask = 0
    for i in sites:
        if mask >> i & 1:
            raise InvalidState(f"site {i} listed twice")
        mask |= 1 << i
    return mask


def sites_from_mask(mask: OccupationState) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def basis_dimension(shape: LatticeShape, n: int) -> int:
    """Number of hard-core configurations of ``n`` particles, ``C(L, n)``."""
    _check_n(shape, n)
    return comb(shape.n_sites, n)


def _check_n(shape: LatticeShape, n: int):
    if n < 0 or n > shape.n_sites:
        raise InvalidParticleCount(
            f"{n} hard-core particles do not fit on {shape.n_sites} sites"
        )
    if shape.n_sites > 64:
        raise ValueError("bit-set representation supports at most 64 sites")


@dataclass(frozen=True, eq=False)
class BasisTable:
    """Ordered enumeration of all ``n``-particle configurations.

    Attributes
    ----------
    shape, n : lattice and particle number.
    sites : (size, n) int array of sorted occupied sites per state.
    """

    shape: LatticeShape
    n: int
    sites: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.sites.shape[0]

    def __len__(self):
        return self.size

    @cached_property
    def masks(self) -> np.ndarray:
        """uint64 bit-set per state."""
        bits = np.left_shift(np.uint64(1), self.sites.astype(np.uint64))
        return np.bitwise_or.reduce(bits, axis=1) if self.n else np.zeros(self.size, np.uint64)

    @property
    def states(self) -> list[OccupationState]:
        return [int(m) for m in self.masks]

    @cached_property
    def occupations(self) -> np.ndarray:
        """(size, L) 0/1 occupation matrix in linear site order."""
        occ = np.zeros((self.size, self.shape.n_sites), dtype=np.int8)
        if self.n:
            occ[np.arange(self.size)[:, None], self.sites] = 1
        occ.setflags(write=False)
        return occ

    @cached_property
    def _binom(self) -> np.ndarray:
        L = self.shape.n_sites
        table = np.zeros((L + 1, self.n + 2), dtype=np.int64)
        for a in range(L + 1):
            for b in range(self.n + 2):
                table[a, b] = comb(a, b)
        return table

    def unrank(self, index: int) -> OccupationState:
        if not 0 <= index < self.size:
            raise SiteOutOfRange(f"basis index {index} outside [0, {self.size})")
        return mask_from_sites(int(i) for i in self.sites[index])

    def rank(self, s: OccupationState) -> int:
        """Position of ``s`` in the basis, via the combinatorial number system."""
        sites = sites_from_mask(s)
        if len(sites) != self.n or (sites and sites[-1] >= self.shape.n_sites):
            raise InvalidState(f"state {sites} is not an {self.n}-particle configuration of {self.shape}")
        return int(self.rank_sites(np.asarray(sites, dtype=np.int64)[None, :])[0])

    def rank_sites(self, sites: np.ndarray) -> np.ndarray:
        """Vectorized rank of sorted occupied-site rows, shape (m, n) -> (m,).

        ``rank = C(L, n) - 1 - sum_i C(L - 1 - c_i, n - i)`` for 0-based ``i``.
        """
        L, n = self.shape.n_sites, self.n
        if n == 0:
            return np.zeros(sites.shape[0], dtype=np.int64)
        offs = np.arange(n, 0, -1)
        acc = self._binom[L - 1 - sites, offs].sum(axis=1)
        return self.size - 1 - acc


def build_basis(shape: LatticeShape, n: int) -> BasisTable:
    dim = basis_dimension(shape, n)
    L = shape.n_sites
    if n == 0:
        sites = np.zeros((1, 0), dtype=np.int64)
    else:
        flat = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(L), n)),
            dtype=np.int64,
            count=dim * n,
        )
        sites = flat.reshape(dim, n)
    sites.setflags(write=False)
    return BasisTable(shape, n, sites)


def hop(s: OccupationState, source: int, target: int, n_sites: int = 64) -> Optional[OccupationState]:
    """Move a particle ``source -> target``; ``None`` when the hard-core rule forbids it."""
    if source == target:
        raise ValueError("source and target sites coincide")
    for i in (source, target):
        if not 0 <= i < n_sites:
            raise SiteOutOfRange(f"site {i} outside [0, {n_sites})")
    if not (s >> source) & 1 or (s >> target) & 1:
        return None
    return s ^ (1 << source) ^ (1 << target)


def nearest_neighbor_bonds(shape: LatticeShape) -> list[tuple[int, int, str]]:
    """Directed open-boundary bonds ``(site, neighbor, axis)`` toward +x and +y."""
    bonds = []
    for k in range(1, shape.l_y + 1):
        for j in range(1, shape.l_x + 1):
            i = shape.site(j, k)
            if j < shape.l_x:
                bonds.append((i, shape.site(j + 1, k), "x"))
            if k < shape.l_y:
                bonds.append((i, shape.site(j, k + 1), "y"))
    return bonds

