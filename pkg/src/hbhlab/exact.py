"""Exact eigenpairs, bipartite entanglement entropy and Schmidt truncation."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import ConvergenceFailure, EmptyTruncation, NormalizationError
from .hamiltonian import SparseHamiltonian
from .hilbert import BASIS_ORDER, BasisTable, LatticeShape

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000
DEGENERACY_TOL = 1e-10
PHASE_CONVENTION = "largest-modulus-component-real-positive"


@dataclass
class EigenResult:
    energies: np.ndarray
    vectors: np.ndarray  # (dim, k), columns are eigenvectors
    residuals: np.ndarray
    degenerate: bool = False
    method: str = "lanczos"

    @property
    def ground_energy(self) -> float:
        return float(self.energies[0])

    @property
    def ground_state(self) -> np.ndarray:
        return self.vectors[:, 0]

    @property
    def gap(self) -> float:
        if len(self.energies) < 2:
            return float("nan")
        return float(self.energies[1] - self.energies[0])


def fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate ``v`` so its largest-modulus component is real and positive."""
    i = int(np.argmax(np.abs(v)))
    ph = v[i] / abs(v[i])
    out = v * np.conj(ph)
    out[i] = abs(v[i])
    return out


def _lanczos_lowest(matvec, dim, locked, v0, tol, max_iter):
    """Lowest eigenpair of ``P A P`` (``P`` projects out ``locked``).

    Full reorthogonalization; returns ``(theta, vector)``.
    """

    def project(x):
        if locked is not None:
            x = x - locked @ (locked.conj().T @ x)
        return x

    q = project(v0)
    q = q / np.linalg.norm(q)
    max_iter = min(max_iter, dim - (0 if locked is None else locked.shape[1]))
    Q = np.zeros((dim, max_iter), dtype=np.complex128)
    alphas, betas = [], []
    theta, y = None, None
    beta_prev = 0.0
    for m in range(max_iter):
        Q[:, m] = q
        w = project(matvec(q))
        a = float(np.vdot(q, w).real)
        w = w - a * q
        if m:
            w = w - beta_prev * Q[:, m - 1]
        for _ in range(2):
            w = w - Q[:, : m + 1] @ (Q[:, : m + 1].conj().T @ w)
            w = project(w)
        b = float(np.linalg.norm(w))
        alphas.append(a)
        vals, vecs = eigh_tridiagonal(np.array(alphas), np.array(betas), select="i", select_range=(0, 0))
        theta, y = float(vals[0]), vecs[:, 0]
        if b * abs(y[-1]) < 0.1 * tol or b < 1e-14:
            break
        betas.append(b)
        beta_prev = b
        q = w / b
    n = len(alphas)
    v = Q[:, :n] @ y
    return theta, v / np.linalg.norm(v)


def _dense_eigenpairs(h: SparseHamiltonian, k: int):
    vals, vecs = np.linalg.eigh(h.to_dense())
    return vals[:k], vecs[:, :k]


def lowest_eigenpairs(
    h: SparseHamiltonian,
    k: int = 1,
    tol: float = 1e-9,
    method: str = "auto",
    max_iter: int = 600,
    max_restarts: int = 8,
    seed: int = 0,
) -> EigenResult:
    """``k`` lowest eigenpairs, extended to cover a degenerate ground multiplet.

    ``method`` is ``"dense"``, ``"lanczos"`` or ``"auto"`` (dense when the
    dimension is at most 2000).
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    dim = h.dim
    if method == "auto":
        method = "dense" if dim <= DENSE_LIMIT else "lanczos"
    if method == "dense":
        vals, vecs = _dense_eigenpairs(h, min(dim, k + 1))
        n_keep = k
        while n_keep < len(vals) and vals[n_keep] - vals[0] < DEGENERACY_TOL:
            n_keep += 1
        if n_keep == len(vals) and n_keep < dim:
            vals, vecs = _dense_eigenpairs(h, dim)
            while n_keep < dim and vals[n_keep] - vals[0] < DEGENERACY_TOL:
                n_keep += 1
        vals, vecs = vals[:n_keep], vecs[:, :n_keep]
    elif method == "lanczos":
        vals, vecs = _lanczos_k(h, k, tol, max_iter, max_restarts, seed)
    else:
        raise ValueError(f"unknown method {method!r}")

    vecs = np.column_stack([fix_phase(vecs[:, i]) for i in range(vecs.shape[1])])
    res = np.array([np.linalg.norm(h.apply(vecs[:, i]) - vals[i] * vecs[:, i]) for i in range(len(vals))])
    if np.any(res > tol) and method == "lanczos":
        raise ConvergenceFailure(f"eigen-residual {res.max():.3e} exceeds {tol:.1e}", float(res.max()))
    degenerate = len(vals) > 1 and (vals[1] - vals[0]) < DEGENERACY_TOL
    if degenerate:
        log.warning("degenerate ground state at %s (gap %.2e)", h.params, vals[1] - vals[0])
    return EigenResult(np.asarray(vals, dtype=float), vecs, res, degenerate, method)


def _lanczos_k(h, k, tol, max_iter, max_restarts, seed):
    rng = np.random.default_rng(seed)
    dim = h.dim
    matvec = h.apply
    found_vals, found_vecs = [], []

    def locked():
        return np.column_stack(found_vecs) if found_vecs else None

    while True:
        start = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        for _ in range(max_restarts + 1):
            theta, v = _lanczos_lowest(matvec, dim, locked(), start, tol, max_iter)
            r = np.linalg.norm(matvec(v) - theta * v)
            if r <= tol:
                break
            start = v
        else:
            raise ConvergenceFailure(f"Lanczos stalled at residual {r:.3e}", float(r))
        found_vals.append(theta)
        found_vecs.append(v)
        n = len(found_vals)
        if n >= dim:
            break
        if n > k and found_vals[-1] - min(found_vals) >= DEGENERACY_TOL:
            break
    # Rayleigh-Ritz over the locked set, then drop the probe pair if it is not degenerate
    V = np.column_stack(found_vecs)
    V, _ = np.linalg.qr(V)
    small = V.conj().T @ (h.matrix @ V)
    vals, W = np.linalg.eigh((small + small.conj().T) / 2)
    vecs = V @ W
    n_keep = k
    while n_keep < len(vals) and vals[n_keep] - vals[0] < DEGENERACY_TOL:
        n_keep += 1
    return vals[:n_keep], vecs[:, :n_keep]


# ---------------------------------------------------------------------------
# entanglement


@dataclass(frozen=True)
class Bipartition:
    subset_a: frozenset
    n_sites: int

    def __post_init__(self):
        a = frozenset(int(i) for i in self.subset_a)
        if any(not 0 <= i < self.n_sites for i in a):
            raise ValueError("subset_a contains sites outside the lattice")
        object.__setattr__(self, "subset_a", a)

    @property
    def subset_b(self) -> frozenset:
        return frozenset(range(self.n_sites)) - self.subset_a

    def swapped(self) -> "Bipartition":
        return Bipartition(self.subset_b, self.n_sites)

    @classmethod
    def half(cls, shape: LatticeShape) -> "Bipartition":
        """Cut through the middle of the x direction: columns ``j <= ceil(l_x/2)`` form ``A``."""
        half = (shape.l_x + 1) // 2
        return cls(frozenset(i for i in range(shape.n_sites) if i % shape.l_x < half), shape.n_sites)

    @classmethod
    def row_major_half(cls, shape: LatticeShape) -> "Bipartition":
        """First ``ceil(L/2)`` sites in row-major order versus the rest."""
        L = shape.n_sites
        return cls(frozenset(range((L + 1) // 2)), L)

    @classmethod
    def prefix(cls, n_sites: int, b: int) -> "Bipartition":
        return cls(frozenset(range(b)), n_sites)


@dataclass
class _SchmidtBlock:
    state_idx: np.ndarray  # (n_a, n_b) basis index per matrix cell, -1 if absent
    matrix: np.ndarray


def _schmidt_blocks(psi, basis: BasisTable, cut: Bipartition) -> list[_SchmidtBlock]:
    """Block-diagonal pieces of the ``2^|A| x 2^|B|`` coefficient matrix.

    Each block collects the states with a fixed particle number in ``A``;
    the zero-padded full matrix has the same nonzero singular values.
    """
    occ = basis.occupations.astype(np.int64)
    a_sites = np.array(sorted(cut.subset_a), dtype=np.int64)
    b_sites = np.array(sorted(cut.subset_b), dtype=np.int64)
    a_key = occ[:, a_sites] @ (1 << np.arange(a_sites.size, dtype=np.int64))
    b_key = occ[:, b_sites] @ (1 << np.arange(b_sites.size, dtype=np.int64))
    n_a = occ[:, a_sites].sum(axis=1)
    blocks = []
    for na in np.unique(n_a):
        idx = np.nonzero(n_a == na)[0]
        ua, ia = np.unique(a_key[idx], return_inverse=True)
        ub, ib = np.unique(b_key[idx], return_inverse=True)
        mat = np.zeros((ua.size, ub.size), dtype=np.result_type(psi.dtype, np.complex128))
        cell = np.full((ua.size, ub.size), -1, dtype=np.int64)
        mat[ia, ib] = psi[idx]
        cell[ia, ib] = idx
        blocks.append(_SchmidtBlock(cell, mat))
    return blocks


def _check_norm(psi, tol=1e-8):
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > tol:
        raise NormalizationError(f"state norm is {nrm:.12g}, expected 1")


def schmidt_values(psi: np.ndarray, basis: BasisTable, cut: Bipartition) -> np.ndarray:
    """Descending singular values of the bipartite coefficient matrix."""
    psi = np.asarray(psi)
    vals = [np.linalg.svd(b.matrix, compute_uv=False) for b in _schmidt_blocks(psi, basis, cut)]
    return np.sort(np.concatenate(vals))[::-1]


def entropy_from_schmidt(sigma: np.ndarray, rtol: float | None = None) -> float:
    """``-sum p log2 p`` over the normalized weights ``p = sigma^2``.

    Singular values below ``rtol * max(sigma)`` are rounding noise of the SVD
    and are dropped (default ``rtol = len(sigma) * eps``, as for a numerical
    matrix rank), so a rank-one state has entropy exactly 0.
    """
    sigma = np.asarray(sigma, dtype=float)
    if rtol is None:
        rtol = sigma.size * np.finfo(float).eps
    sigma = sigma[sigma > rtol * sigma.max()]
    p = sigma**2 / np.sum(sigma**2)
    if p.size == 1:
        return 0.0
    return float(-(p * np.log2(p)).sum())


def von_neumann_entropy(psi: np.ndarray, basis: BasisTable, cut: Bipartition) -> float:
    """Entanglement entropy in bits, ``-sum p_k log2 p_k`` over Schmidt weights."""
    _check_norm(psi)
    return entropy_from_schmidt(schmidt_values(psi, basis, cut))


def truncate_middle(psi: np.ndarray, basis: BasisTable, cut: Bipartition, n_s: int) -> np.ndarray:
    """Keep the ``n_s`` largest Schmidt values across ``cut`` and renormalize.

    Ties at the truncation edge are broken by block order, then by position.
    """
    if n_s < 1:
        raise EmptyTruncation("at least one Schmidt value must be kept")
    psi = np.asarray(psi, dtype=np.complex128)
    blocks = _schmidt_blocks(psi, basis, cut)
    svds = [np.linalg.svd(b.matrix, full_matrices=False) for b in blocks]
    labels = [(bi, i, s[i]) for bi, (_, s, _) in enumerate(svds) for i in range(len(s))]
    order = sorted(range(len(labels)), key=lambda t: -labels[t][2])
    keep = {(labels[t][0], labels[t][1]) for t in order[:n_s]}
    out = np.zeros_like(psi)
    for bi, (blk, (u, s, vh)) in enumerate(zip(blocks, svds)):
        sel = [i for i in range(len(s)) if (bi, i) in keep]
        if not sel:
            continue
        rec = (u[:, sel] * s[sel]) @ vh[sel]
        present = blk.state_idx >= 0
        out[blk.state_idx[present]] = rec[present]
    nrm = np.linalg.norm(out)
    if nrm == 0:
        raise EmptyTruncation("truncation removed the whole state")
    return out / nrm


def truncate_chain(psi: np.ndarray, basis: BasisTable, n_s: int) -> np.ndarray:
    """Sequential truncation at every bond of the row-major site chain."""
    L = basis.shape.n_sites
    out = np.asarray(psi, dtype=np.complex128)
    for b in range(1, L):
        out = truncate_middle(out, basis, Bipartition.prefix(L, b), n_s)
    return out / np.linalg.norm(out)


# ---------------------------------------------------------------------------
# persistence


def save_state(path, psi: np.ndarray, basis: BasisTable, alpha: float, **extra) -> None:
    """Binary state vector: ``(re, im)`` float64 pairs plus a JSON header."""
    header = {
        "l_x": basis.shape.l_x,
        "l_y": basis.shape.l_y,
        "n": basis.n,
        "alpha": float(alpha),
        "dim": basis.size,
        "basis_order": BASIS_ORDER,
        "phase_convention": PHASE_CONVENTION,
        **extra,
    }
    psi = np.asarray(psi, dtype=np.complex128)
    pairs = np.column_stack([psi.real, psi.imag])
    with open(Path(path), "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), re_im=pairs)


def load_state(path) -> tuple[np.ndarray, dict]:
    with np.load(Path(path)) as z:
        header = json.loads(str(z["header"]))
        pairs = z["re_im"]
    return pairs[:, 0] + 1j * pairs[:, 1], header
