"""Diagnostics: fidelity and energy errors, element statistics, landscapes, Hessians."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import NormalizationError, UndefinedFilling, UndefinedPhase
from .hamiltonian import SparseHamiltonian
from .hilbert import LatticeShape

log = logging.getLogger(__name__)

HIST_BINS = 60
HIST_RANGE = (-8.0, 0.0)
SURFACE_POINTS = 41
SURFACE_RANGE = (-1.0, 1.0)
HESSIAN_STEP = 1e-4


def _check_unit(psi, name, tol=1e-8):
    n = np.linalg.norm(psi)
    if abs(n - 1.0) > tol:
        raise NormalizationError(f"{name} has norm {n:.12g}, expected 1")


def overlap_deviation(psi_a: np.ndarray, psi_b: np.ndarray) -> float:
    """``1 - |<a|b>|`` for unit-norm vectors, clipped to [0, 1]."""
    _check_unit(psi_a, "psi_a")
    _check_unit(psi_b, "psi_b")
    return float(min(1.0, max(0.0, 1.0 - abs(np.vdot(psi_a, psi_b)))))


def energy_error(psi: np.ndarray, h: SparseHamiltonian, e_gs: float) -> float:
    """``<psi|H|psi> - E_gs`` for a unit-norm ``psi``."""
    _check_unit(psi, "psi")
    e = np.vdot(psi, h.apply(psi))
    if abs(e.imag) >= 1e-10:
        raise AssertionError(f"energy has imaginary part {e.imag:.3g}")
    return float(e.real - e_gs)


def align_global_phase(psi_nqs: np.ndarray, psi_ed: np.ndarray, tol: float = 1e-300) -> np.ndarray:
    """Rotate ``psi_nqs`` by a global phase so that ``<psi_nqs|psi_ed>`` is real-positive."""
    ov = np.vdot(psi_nqs, psi_ed)
    if abs(ov) <= tol:
        raise UndefinedPhase("vectors are orthogonal; the global phase is undefined")
    return psi_nqs * (ov / abs(ov))


@dataclass
class ElementErrorRecord:
    target_norm: np.ndarray
    norm_error: np.ndarray
    phase_error: np.ndarray

    def __post_init__(self):
        if not (len(self.target_norm) == len(self.norm_error) == len(self.phase_error)):
            raise ValueError("record arrays must share the basis length")


@dataclass
class ElementStatistics:
    record: ElementErrorRecord
    bin_edges: np.ndarray
    hist_nqs: np.ndarray
    hist_ed: np.ndarray
    underflow_nqs: int
    underflow_ed: int
    zeros_nqs: int
    zeros_ed: int


def wrap_phase(x: np.ndarray) -> np.ndarray:
    """Wrap angles to (-pi, pi]."""
    w = np.mod(np.asarray(x) + np.pi, 2 * np.pi) - np.pi
    return np.where(w <= -np.pi, np.pi, w)


def log_histogram(psi: np.ndarray, bins: int = HIST_BINS, rng=HIST_RANGE):
    """Histogram of ``log10 |psi|``; returns ``(counts, edges, underflow, zeros)``.

    Zero elements are excluded and counted separately; nonzero values below
    ``10**rng[0]`` go to the underflow count.
    """
    a = np.abs(psi)
    zeros = int(np.count_nonzero(a == 0))
    lg = np.log10(a[a > 0])
    under = int(np.count_nonzero(lg < rng[0]))
    counts, edges = np.histogram(np.clip(lg[lg >= rng[0]], None, rng[1]), bins=bins, range=rng)
    return counts, edges, under, zeros


def element_statistics(psi_nqs: np.ndarray, psi_ed: np.ndarray) -> ElementStatistics:
    """Element-wise norm and phase errors after global phase alignment, plus log-norm histograms."""
    _check_unit(psi_nqs, "psi_nqs")
    _check_unit(psi_ed, "psi_ed")
    a = align_global_phase(psi_nqs, psi_ed)
    tn = np.abs(psi_ed)
    rec = ElementErrorRecord(tn, np.abs(a) - tn, wrap_phase(np.angle(a) - np.angle(psi_ed)))
    hn, edges, un, zn = log_histogram(a)
    he, _, ue, ze = log_histogram(psi_ed)
    return ElementStatistics(rec, edges, hn, he, un, ue, zn, ze)


def log_spread(psi: np.ndarray, quantiles=(0.05, 0.95)) -> float:
    """Width of the central quantile range of ``log10 |psi|`` over nonzero elements."""
    a = np.abs(psi)
    lg = np.log10(a[a > 0])
    lo, hi = np.quantile(lg, quantiles)
    return float(hi - lo)


def squared_renormalized(psi: np.ndarray) -> np.ndarray:
    """``psi_s^2`` elementwise, renormalized (widens the log-norm spread)."""
    sq = psi * psi
    return sq / np.linalg.norm(sq)


# ---------------------------------------------------------------------------
# landscapes


@dataclass
class LossSurface:
    deltas: np.ndarray
    values: np.ndarray  # values[i, j] = L(theta + deltas[i] e1 + deltas[j] e2)
    e1: np.ndarray
    e2: np.ndarray
    theta: np.ndarray
    nonfinite: list = field(default_factory=list)

    @property
    def center(self) -> float:
        i = int(np.argmin(np.abs(self.deltas)))
        return float(self.values[i, i])


def loss_surface(
    loss_fn: Callable[[np.ndarray], float],
    theta: np.ndarray,
    seed: int = 0,
    n_points: int = SURFACE_POINTS,
    span: tuple = SURFACE_RANGE,
) -> LossSurface:
    """Evaluate ``loss_fn`` on a 2D slice through ``theta`` along two random unit directions.

    ``n_points`` should be odd so that the grid contains ``delta = 0`` exactly.
    """
    theta = np.asarray(theta, dtype=np.float64)
    rng = np.random.default_rng(seed)
    e1 = rng.standard_normal(theta.size)
    e2 = rng.standard_normal(theta.size)
    e1 /= np.linalg.norm(e1)
    e2 /= np.linalg.norm(e2)
    deltas = np.linspace(span[0], span[1], n_points)
    if n_points % 2 == 1:
        deltas[n_points // 2] = 0.0
    vals = np.empty((n_points, n_points))
    bad = []
    for i, d1 in enumerate(deltas):
        for j, d2 in enumerate(deltas):
            v = float(loss_fn(theta + d1 * e1 + d2 * e2))
            if not np.isfinite(v):
                bad.append((i, j))
            vals[i, j] = v
    if bad:
        log.warning("%d non-finite loss cells", len(bad))
    return LossSurface(deltas, vals, e1, e2, theta, bad)


def surface_convexity(surface: LossSurface) -> float:
    """Fraction of interior grid cells whose discrete Hessian is positive semidefinite."""
    f = surface.values
    d = surface.deltas[1] - surface.deltas[0]
    fxx = (f[2:, 1:-1] - 2 * f[1:-1, 1:-1] + f[:-2, 1:-1]) / d**2
    fyy = (f[1:-1, 2:] - 2 * f[1:-1, 1:-1] + f[1:-1, :-2]) / d**2
    fxy = (f[2:, 2:] - f[2:, :-2] - f[:-2, 2:] + f[:-2, :-2]) / (4 * d**2)
    ok = (fxx >= 0) & (fyy >= 0) & (fxx * fyy - fxy**2 >= -1e-12 * (fxx**2 + fyy**2))
    return float(ok.mean())


# ---------------------------------------------------------------------------
# Hessians


def fd_hessian(grad_fn: Callable[[np.ndarray], np.ndarray], theta: np.ndarray, step: float = HESSIAN_STEP) -> tuple:
    """Central differences of an analytic gradient, column by column.

    The step for parameter ``k`` is ``step * max(1, |theta_k|)``.  Returns the
    symmetrized matrix and the relative asymmetry of the raw one.
    """
    theta = np.asarray(theta, dtype=np.float64)
    n = theta.size
    raw = np.empty((n, n))
    for k in range(n):
        hk = step * max(1.0, abs(theta[k]))
        e = np.zeros(n)
        e[k] = hk
        raw[:, k] = (np.asarray(grad_fn(theta + e)) - np.asarray(grad_fn(theta - e))) / (2 * hk)
    scale = np.linalg.norm(raw)
    asym = float(np.linalg.norm(raw - raw.T) / scale) if scale > 0 else 0.0
    return 0.5 * (raw + raw.T), asym


@dataclass
class HessianSpectrum:
    eigenvalues: np.ndarray
    median: float
    q1: float
    q3: float
    asymmetry: float
    step: float
    matrix: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def all_positive(self) -> bool:
        return bool(self.eigenvalues[0] > 0)


def hessian_spectrum(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    step: float = HESSIAN_STEP,
    asym_tol: float = 1e-3,
    retries: int = 2,
) -> HessianSpectrum:
    """Ascending Hessian eigenvalues with median and quartiles.

    When the finite-difference Hessian is asymmetric beyond ``asym_tol`` the
    step is reduced tenfold and the assembly repeated (at most ``retries`` times).
    """
    for attempt in range(retries + 1):
        hess, asym = fd_hessian(grad_fn, theta, step)
        if asym <= asym_tol or attempt == retries:
            break
        log.warning("Hessian asymmetry %.3g above %.3g; reducing step to %.1e", asym, asym_tol, step / 10)
        step /= 10
    ev = np.linalg.eigvalsh(hess)
    q1, med, q3 = np.quantile(ev, [0.25, 0.5, 0.75])
    return HessianSpectrum(ev, float(med), float(q1), float(q3), asym, step, hess)


# ---------------------------------------------------------------------------
# misc


def filling_factor(n: int, alpha: float, shape: LatticeShape) -> float:
    """Particles per flux quantum ``N / (alpha (l_x - 1)(l_y - 1))`` for open boundaries."""
    plaquettes = (shape.l_x - 1) * (shape.l_y - 1)
    if alpha == 0 or plaquettes == 0:
        raise UndefinedFilling("filling factor needs nonzero flux through at least one plaquette")
    return n / (alpha * plaquettes)


# ---------------------------------------------------------------------------
# exports


def write_surface_csv(path, surface: LossSurface) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["delta1", "delta2", "loss"])
        for i, d1 in enumerate(surface.deltas):
            for j, d2 in enumerate(surface.deltas):
                w.writerow([repr(float(d1)), repr(float(d2)), repr(float(surface.values[i, j]))])


def read_surface_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(deltas, values)`` from a long-form surface CSV."""
    rows = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    deltas = np.unique(rows[:, 0])
    return deltas, rows[:, 2].reshape(len(deltas), len(deltas))


def write_spectrum_csv(path, spectrum: HessianSpectrum) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "eigenvalue"])
        for i, v in enumerate(spectrum.eigenvalues):
            w.writerow([i, repr(float(v))])


def write_elements_csv(path, stats: ElementStatistics) -> None:
    r = stats.record
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "target_norm", "norm_error", "phase_error"])
        for i in range(len(r.target_norm)):
            w.writerow([i, repr(float(r.target_norm[i])), repr(float(r.norm_error[i])), repr(float(r.phase_error[i]))])


def write_histogram_csv(path, stats: ElementStatistics) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count_nqs", "count_ed"])
        for k in range(len(stats.hist_nqs)):
            w.writerow([stats.bin_edges[k], stats.bin_edges[k + 1], int(stats.hist_nqs[k]), int(stats.hist_ed[k])])
        w.writerow(["underflow", "", stats.underflow_nqs, stats.underflow_ed])
        w.writerow(["zero", "", stats.zeros_nqs, stats.zeros_ed])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return str(x)
    return x


def write_summary_json(path, summary: dict) -> None:
    Path(path).write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")


def spectrum_summary(spectrum: HessianSpectrum) -> dict:
    ev = spectrum.eigenvalues
    return {
        "n": int(ev.size),
        "min": float(ev[0]),
        "max": float(ev[-1]),
        "median": spectrum.median,
        "q1": spectrum.q1,
        "q3": spectrum.q3,
        "all_positive": spectrum.all_positive,
        "asymmetry": spectrum.asymmetry,
        "step": spectrum.step,
    }
