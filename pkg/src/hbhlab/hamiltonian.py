"""Sparse Hofstadter-Bose-Hubbard Hamiltonian in the hard-core basis.

    H = -J sum_{j,k} ( a+_{j+1,k} a_{j,k} + a+_{j,k+1} a_{j,k} exp(i 2 pi alpha j) ) + h.c.

Landau gauge, open boundaries, ``j`` counted from 1.  A particle hopping
from ``(j, k)`` to ``(j, k+1)`` picks up ``-J exp(+i 2 pi alpha j)``; the reverse
hop carries the complex conjugate.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import BasisMismatch, SiteOutOfRange
from .hilbert import BasisTable, LatticeShape, nearest_neighbor_bonds


@dataclass(frozen=True)
class HbhParams:
    shape: LatticeShape
    n: int
    alpha: float
    j_hop: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.j_hop <= 0:
            raise ValueError("j_hop must be positive")


class SparseHamiltonian:
    """Row-compressed Hermitian matrix with sorted column indices.

    ``matrix[r, c] = <r|H|c>``.
    """

    def __init__(self, matrix: sp.csr_matrix, params: HbhParams, basis: BasisTable):
        self.matrix = matrix
        self.params = params
        self.basis = basis

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def connected_states(self, s_index: int) -> list[tuple[int, complex]]:
        """Nonzero ``(column, <s|H|column>)`` entries of row ``s_index``."""
        if not 0 <= s_index < self.dim:
            raise SiteOutOfRange(f"row {s_index} outside [0, {self.dim})")
        m = self.matrix
        lo, hi = m.indptr[s_index], m.indptr[s_index + 1]
        return [(int(c), complex(v)) for c, v in zip(m.indices[lo:hi], m.data[lo:hi])]

    @property
    def rows(self) -> list[list[tuple[int, complex]]]:
        return [self.connected_states(r) for r in range(self.dim)]

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        if v.shape[0] != self.dim:
            raise ValueError(f"vector length {v.shape[0]} does not match dimension {self.dim}")
        return self.matrix @ v

    __matmul__ = apply

    def expectation(self, v: np.ndarray) -> complex:
        return complex(np.vdot(v, self.apply(v)) / np.vdot(v, v))

    def to_dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def export_coo(self, path) -> None:
        """Write ``row col re im`` lines, one per stored entry."""
        coo = self.matrix.tocoo()
        data = np.column_stack([coo.row, coo.col, coo.data.real, coo.data.imag])
        header = (
            f"shape={self.params.shape} n={self.params.n} alpha={self.params.alpha!r} "
            f"j_hop={self.params.j_hop!r} dim={self.dim}\nrow col re im"
        )
        np.savetxt(Path(path), data, fmt=["%d", "%d", "%.17g", "%.17g"], header=header)


def load_coo(path, dim: int) -> sp.csr_matrix:
    data = np.loadtxt(Path(path), ndmin=2)
    vals = data[:, 2] + 1j * data[:, 3]
    return sp.csr_matrix((vals, (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(dim, dim))


def hopping_amplitudes(params: HbhParams) -> list[tuple[int, int, complex]]:
    """All directed single-particle hops ``(from, to, <to|H|from>)``."""
    shape, J = params.shape, params.j_hop
    out = []
    for a, b, axis in nearest_neighbor_bonds(shape):
        if axis == "x":
            t = complex(-J)
        else:
            j, _ = shape.coords(a)
            t = -J * np.exp(2j * np.pi * params.alpha * j)
        out.append((a, b, t))
        out.append((b, a, np.conj(t)))
    return out


def build_hamiltonian(basis: BasisTable, params: HbhParams) -> SparseHamiltonian:
    if basis.shape != params.shape or basis.n != params.n:
        raise BasisMismatch(
            f"basis is {basis.shape}/N={basis.n}, parameters are {params.shape}/N={params.n}"
        )
    occ = basis.occupations
    sites = basis.sites
    rows, cols, vals = [], [], []
    for src, dst, t in hopping_amplitudes(params):
        movable = np.nonzero((occ[:, src] == 1) & (occ[:, dst] == 0))[0]
        if movable.size == 0:
            continue
        moved = np.where(sites[movable] == src, dst, sites[movable])
        moved.sort(axis=1)
        rows.append(basis.rank_sites(moved))
        cols.append(movable)
        vals.append(np.full(movable.size, t, dtype=np.complex128))
    dim = basis.size
    if rows:
        r, c, v = np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
    else:
        r = c = np.zeros(0, dtype=np.int64)
        v = np.zeros(0, dtype=np.complex128)
    m = sp.csr_matrix((v, (r, c)), shape=(dim, dim))
    m.sum_duplicates()
    m.sort_indices()
    return SparseHamiltonian(m, params, basis)


def hbh_hamiltonian(shape: LatticeShape, n: int, alpha: float, j_hop: float = 1.0) -> SparseHamiltonian:
    """Convenience: basis plus Hamiltonian in one call."""
    from .hilbert import build_basis

    params = HbhParams(shape, n, alpha, j_hop)
    return build_hamiltonian(build_basis(shape, n), params)
