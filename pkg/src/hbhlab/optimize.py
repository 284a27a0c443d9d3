"""Ground-state optimization of neural quantum states.

Three routes to the ground state share one toolbox:

* stochastic reconfiguration (SR): natural-gradient descent on the energy;
* supervised imaginary-time evolution (SITE): repeatedly fit the network to
  ``psi - dtau * H psi``;
* supervised learning of an exact target (e.g. the ED ground state).

Samples are drawn exactly from ``|psi|^2`` of the full network vector.  All
parameter updates go through ADAM on the real parameter view.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .analysis import fd_hessian, overlap_deviation
from .ansatz import Network, TapeGradient, normalized_from_log
from .errors import DegenerateSample, IllConditionedBatch, NormalizationError
from .hamiltonian import SparseHamiltonian
from .hilbert import BasisTable

log = logging.getLogger(__name__)

LOSS_CAP = 50.0
UNDERFLOW = 1e-150
DTAU_GRID = (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)


@dataclass(frozen=True)
class TrainConfig:
    method: str = "supervised"  # sr | site | supervised
    learning_rate: float = 3e-4
    batch_size: int = 512
    diagonal_shift: float = 0.01
    max_steps: int = 100_000
    seed: int = 0
    target_mode: str = "full"  # full | norm_only | phase_only
    loss_kind: str = "overlap"  # overlap | mse
    mse_weighting: str = "psi2"  # psi2 | uniform
    eval_interval: int = 100
    patience: Optional[int] = None
    site_refresh_fraction: float = 0.1
    site_inner_cap: int = 50
    dtau_grid: tuple = DTAU_GRID

    def __post_init__(self):
        if self.method not in ("sr", "site", "supervised"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.target_mode not in ("full", "norm_only", "phase_only"):
            raise ValueError(f"unknown target_mode {self.target_mode!r}")
        if self.loss_kind not in ("overlap", "mse"):
            raise ValueError(f"unknown loss_kind {self.loss_kind!r}")
        if self.mse_weighting not in ("psi2", "uniform"):
            raise ValueError(f"unknown mse_weighting {self.mse_weighting!r}")
        object.__setattr__(self, "dtau_grid", tuple(self.dtau_grid))

    def replace(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class StepRecord:
    step: int
    loss: float
    energy: Optional[float] = None
    deviation: Optional[float] = None


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_step: int = -1
    best_loss: float = float("inf")
    flags: list = field(default_factory=list)
    checkpoint: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def append(self, rec: StepRecord):
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("step indices must increase")
        self.records.append(rec)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def final(self) -> Optional[StepRecord]:
        return self.records[-1] if self.records else None

    def save_jsonl(self, path) -> None:
        with open(Path(path), "w") as fh:
            for r in self.records:
                fh.write(json.dumps(asdict(r)) + "\n")

    @classmethod
    def load_jsonl(cls, path) -> "TrainHistory":
        h = cls()
        with open(Path(path)) as fh:
            for line in fh:
                if line.strip():
                    h.append(StepRecord(**json.loads(line)))
        return h


class Adam:
    """ADAM on a flat real vector."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, theta: np.ndarray, grad: np.ndarray) -> np.ndarray:
        grad = np.asarray(grad, dtype=theta.dtype)
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta, grad):
        return theta - self.lr * np.asarray(grad, dtype=theta.dtype)


# ---------------------------------------------------------------------------
# sampling and elementary quantities


def _rng(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


def exact_sample(psi: np.ndarray, batch_size: int, rng=None, tol: float = 1e-8) -> np.ndarray:
    """I.i.d. basis indices drawn with probability ``|psi(s)|^2``."""
    p = np.abs(psi) ** 2
    total = p.sum()
    if abs(total - 1.0) > tol:
        raise NormalizationError(f"sampling weights sum to {total:.12g}")
    cdf = np.cumsum(p)
    u = _rng(rng).random(batch_size) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side="right"), psi.size - 1)


def energy(psi: np.ndarray, h: SparseHamiltonian) -> float:
    """``<psi|H|psi> / <psi|psi>`` (real part)."""
    return float(np.vdot(psi, h.apply(psi)).real / np.vdot(psi, psi).real)


def local_energy(h: SparseHamiltonian, psi_lookup, s: int) -> complex:
    """``sum_s' psi(s')/psi(s) <s|H|s'>``.

    ``psi_lookup`` is a full amplitude vector (any normalization) or a
    :class:`Network`, which is evaluated on ``s`` and its connected states.
    """
    conn = h.connected_states(s)
    if isinstance(psi_lookup, Network):
        occ = h.basis.occupations
        idx = np.array([s] + [c for c, _ in conn])
        logp = psi_lookup.log_psi(occ[idx])
        amp = np.exp(logp - logp[0].real)
        psi_s, vals = amp[0], dict(zip(idx[1:], amp[1:]))
    else:
        psi_s, vals = psi_lookup[s], psi_lookup
    if abs(psi_s) < UNDERFLOW:
        raise DegenerateSample(f"|psi({s})| underflows")
    return complex(sum(v * vals[c] for c, v in conn) / psi_s)


def local_energies(h: SparseHamiltonian, psi: np.ndarray, idx: np.ndarray, h_psi=None) -> np.ndarray:
    """Vectorized local energies; states with underflowing amplitude are dropped with a warning.

    Returns ``(values, kept_mask)``.
    """
    h_psi = h.apply(psi) if h_psi is None else h_psi
    amp = psi[idx]
    ok = np.abs(amp) >= UNDERFLOW
    if not ok.all():
        log.warning("skipping %d degenerate samples", int((~ok).sum()))
    out = np.zeros(idx.shape, dtype=np.complex128)
    out[ok] = h_psi[idx[ok]] / amp[ok]
    return out, ok


def _weights(n: int, weights) -> np.ndarray:
    if weights is None:
        return np.full(n, 1.0 / n)
    w = np.asarray(weights, dtype=float)
    return w / w.sum()


def energy_gradient(h_loc: np.ndarray, o_rows: np.ndarray, weights=None) -> np.ndarray:
    """``2 Re(<H_loc O*> - <H_loc><O*>)`` from explicit log-derivative rows."""
    if len(h_loc) == 0:
        raise ValueError("empty batch")
    w = _weights(len(h_loc), weights)
    centered = h_loc - np.dot(w, h_loc)
    return 2.0 * np.real((w * centered) @ np.conj(o_rows))


def energy_cotangent(h_loc: np.ndarray, weights=None) -> np.ndarray:
    """Cotangents for :meth:`Network.vjp` reproducing :func:`energy_gradient`."""
    if len(h_loc) == 0:
        raise ValueError("empty batch")
    w = _weights(len(h_loc), weights)
    return 2.0 * w * (h_loc - np.dot(w, h_loc))


def site_target(psi: np.ndarray, h: SparseHamiltonian, delta_tau: float) -> np.ndarray:
    """One normalized explicit-Euler imaginary-time step ``psi - dtau H psi``."""
    if delta_tau <= 0:
        raise ValueError("delta_tau must be positive")
    t = psi - delta_tau * h.apply(psi)
    return t / np.linalg.norm(t)


def overlap_loss(a: np.ndarray, b: np.ndarray, return_flag: bool = False):
    """``-log(|<a|b>|^2 / (<a|a><b|b>))``, capped at ``LOSS_CAP`` for orthogonal inputs."""
    na, nb = np.vdot(a, a).real, np.vdot(b, b).real
    if na == 0 or nb == 0:
        raise ValueError("overlap loss of a zero vector")
    fid = abs(np.vdot(a, b)) ** 2 / (na * nb)
    capped = fid <= np.exp(-LOSS_CAP)
    val = LOSS_CAP if capped else float(-np.log(min(fid, 1.0)))
    return (val, bool(capped)) if return_flag else val


def overlap_cotangent(ratio: np.ndarray, weights=None) -> np.ndarray:
    """Cotangents of ``2 Re(<O*> - <rho O*>/<rho>)`` with ``rho = psi_T / psi_NQS``."""
    w = _weights(len(ratio), weights)
    mean_ratio = np.dot(w, ratio)
    if abs(mean_ratio) < 1e-300 or not np.isfinite(mean_ratio):
        raise IllConditionedBatch("<psi_T/psi_NQS> vanishes on this batch")
    return 2.0 * w * (1.0 - ratio / mean_ratio)


def _ratio(target_vals: np.ndarray, logp: np.ndarray) -> np.ndarray:
    return target_vals * np.exp(-(logp - logp.real.max()))


def overlap_gradient(net: Network, target: np.ndarray, occ: np.ndarray, idx: np.ndarray, weights=None, params=None):
    """Batch estimate of the overlap-loss gradient; ``occ`` holds the sampled configurations."""
    target_vals = target[idx]
    _, g = net.value_and_vjp(occ, lambda lp: overlap_cotangent(_ratio(target_vals, lp), weights), params)
    return g


def mse_cotangent(psi_vals: np.ndarray, target_vals: np.ndarray, weights=None):
    """Loss and cotangents of ``sum_s w_s |e^{i phi} psi(s) - T(s)|^2``.

    ``psi_vals`` are unit-normalized network amplitudes; normalization and the
    batch phase ``phi`` are held fixed in the derivative.
    """
    w = _weights(len(psi_vals), weights)
    ov = np.sum(np.conj(psi_vals) * target_vals)
    phase = ov / abs(ov) if abs(ov) > 0 else 1.0
    a = psi_vals * phase
    diff = a - target_vals
    loss = float(np.sum(w * np.abs(diff) ** 2))
    return loss, 2.0 * w * diff * np.conj(a)


def mse_loss(net: Network, basis: BasisTable, target: np.ndarray, idx: np.ndarray, params=None, logp_full=None):
    """Phase-aligned MSE over the sampled batch; returns ``(loss, gradient)``."""
    params = net.params if params is None else params
    if logp_full is None:
        logp_full = net.log_psi_basis(basis, params)
    shift = logp_full.real.max()
    norm = np.linalg.norm(np.exp(logp_full - shift))
    occ = basis.occupations[idx]
    box = {}

    def cot_fn(lp):
        psi_vals = np.exp(lp - shift) / norm
        box["loss"], cot = mse_cotangent(psi_vals, target[idx])
        return cot

    _, g = net.value_and_vjp(occ, cot_fn, params)
    return box["loss"], g


# ---------------------------------------------------------------------------
# target-mode substitution


def _substitute(logp: np.ndarray, log_target: np.ndarray, mode: str) -> np.ndarray:
    if mode == "full":
        return logp
    if mode == "norm_only":
        return logp.real + 1j * log_target.imag
    return log_target.real + 1j * logp.imag


def _project_cot(cot: np.ndarray, mode: str) -> np.ndarray:
    if mode == "full":
        return cot
    if mode == "norm_only":
        return cot.real.astype(np.complex128)
    return 1j * cot.imag


def _log_target(target: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(target)) + 1j * np.angle(target)


def effective_vector(net: Network, basis: BasisTable, target: np.ndarray, mode: str, params=None) -> np.ndarray:
    """Normalized network vector after substituting norm or phase from ``target``."""
    logp = net.log_psi_basis(basis, params)
    return normalized_from_log(_substitute(logp, _log_target(target), mode))


# ---------------------------------------------------------------------------
# exact full-basis objectives


class FullBasisLoss:
    """Exact loss and gradient over the whole basis, as functions of the real parameter view."""

    def __init__(self, net: Network, basis: BasisTable):
        self.net = net
        self.basis = basis

    def _params(self, theta):
        return self.net.params if theta is None else self.net.to_native(theta)

    def vector(self, theta=None) -> np.ndarray:
        return normalized_from_log(self.net.log_psi_basis(self.basis, self._params(theta)))

    def value(self, theta=None) -> float:
        raise NotImplementedError

    def grad(self, theta=None) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, theta=None) -> float:
        return self.value(theta)

    def value_and_grad(self, theta=None) -> TapeGradient:
        return TapeGradient(self.value(theta), self.grad(theta), self.net.config.is_complex)


class OverlapObjective(FullBasisLoss):
    """Overlap loss against a fixed target (optionally norm-only / phase-only)."""

    def __init__(self, net, basis, target, mode: str = "full"):
        super().__init__(net, basis)
        self.target = np.asarray(target, dtype=np.complex128)
        self.mode = mode
        self._lt = _log_target(self.target)

    def vector(self, theta=None):
        logp = self.net.log_psi_basis(self.basis, self._params(theta))
        return normalized_from_log(_substitute(logp, self._lt, self.mode))

    def value(self, theta=None):
        return overlap_loss(self.vector(theta), self.target)

    def grad(self, theta=None):
        def cot_fn(logp):
            eff = _substitute(logp, self._lt, self.mode)
            probs = np.abs(normalized_from_log(eff)) ** 2
            keep = probs > 0
            ratio = np.zeros_like(eff)
            ratio[keep] = _ratio(self.target[keep], eff[keep])
            w = probs / probs.sum()
            cot = np.zeros_like(eff)
            cot[keep] = overlap_cotangent(ratio[keep], w[keep])
            return _project_cot(cot, self.mode)

        return self.net.vjp_basis(self.basis, cot_fn, self._params(theta))[2]


class EnergyObjective(FullBasisLoss):
    def __init__(self, net, basis, h: SparseHamiltonian):
        super().__init__(net, basis)
        self.h = h

    def value(self, theta=None):
        return energy(self.vector(theta), self.h)

    def grad(self, theta=None):
        def cot_fn(logp):
            psi = normalized_from_log(logp)
            h_loc, ok = local_energies(self.h, psi, np.arange(psi.size))
            w = np.abs(psi) ** 2 * ok
            return energy_cotangent(h_loc, w)

        return self.net.vjp_basis(self.basis, cot_fn, self._params(theta))[2]


# ---------------------------------------------------------------------------
# stochastic reconfiguration


def _sr_solve(x: np.ndarray, grad: np.ndarray, shift: float) -> np.ndarray:
    """Solve ``(x^T x + shift I) delta = grad`` in the precision of ``x``."""
    n, P = x.shape
    dtype = x.dtype
    g = np.asarray(grad, dtype=np.float64)
    for attempt in range(2):
        try:
            if n < P:
                small = x @ x.T
                small[np.diag_indices_from(small)] += shift
                c = sla.cho_factor(small)
                y = sla.cho_solve(c, x @ g.astype(dtype)).astype(np.float64)
                return (g - x.T.astype(np.float64) @ y) / shift
            s = x.T @ x
            s[np.diag_indices_from(s)] += shift
            return sla.cho_solve(sla.cho_factor(s), g.astype(dtype)).astype(np.float64)
        except np.linalg.LinAlgError:
            if attempt:
                raise
            shift *= 10.0
            log.warning("SR solve failed; retrying with diagonal shift %.3g", shift)


def _centered_rows(d_re: np.ndarray, d_im: np.ndarray, w: np.ndarray, dtype) -> np.ndarray:
    """Stacked ``sqrt(w) (O - <O>)`` real and imaginary rows, so that ``Re S = x^T x``."""
    sw = np.sqrt(w).astype(dtype)[:, None]
    w = w.astype(dtype)
    return np.concatenate([(d_re - w @ d_re) * sw, (d_im - w @ d_im) * sw], axis=0).astype(dtype, copy=False)


def sr_direction(o_rows: np.ndarray, grad: np.ndarray, shift: float, weights=None, dtype=np.float64) -> np.ndarray:
    """Solve ``(Re S + shift I) delta = grad`` with the centered geometric tensor ``S``.

    When the batch is smaller than the parameter count the Woodbury identity
    is used; both routes solve the same system.  ``dtype`` sets the precision
    of the Gram matrix and its factorization (match it to the network).
    """
    w = _weights(o_rows.shape[0], weights)
    return _sr_solve(_centered_rows(o_rows.real.astype(dtype), o_rows.imag.astype(dtype), w, dtype), grad, shift)


def sr_step(net: Network, h: SparseHamiltonian, config: TrainConfig, opt, rng, step: int = 0, psi=None):
    """One SR update; returns ``(new_net, StepRecord)``.

    Repeated samples are merged into weighted unique configurations, which
    leaves every batch average unchanged and shrinks the linear system.
    """
    basis = h.basis
    if psi is None:
        psi = normalized_from_log(net.log_psi_basis(basis))
    h_psi = h.apply(psi)
    e = float(np.vdot(psi, h_psi).real)
    idx = exact_sample(psi, config.batch_size, rng)
    idx, counts = np.unique(idx, return_counts=True)
    h_loc, ok = local_energies(h, psi, idx, h_psi)
    idx, h_loc, w = idx[ok], h_loc[ok], counts[ok] / counts[ok].sum()
    d_re, d_im = net.jacobian_parts(basis.occupations[idx])
    # energy_gradient written out on the real and imaginary parts of O
    c = 2.0 * w * (h_loc - np.dot(w, h_loc))
    g = c.real @ d_re.astype(np.float64) + c.imag @ d_im.astype(np.float64)
    dtype = net.config.real_dtype
    delta = _sr_solve(_centered_rows(d_re, d_im, w, dtype), g, config.diagonal_shift)
    theta = opt.step(net.real_params, delta)
    return net.with_real_params(theta), StepRecord(step, e, e)


# ---------------------------------------------------------------------------
# trainers


class _Tracker:
    """Best-checkpoint bookkeeping shared by the trainers."""

    def __init__(self, net, config, e_ref=None):
        self.best_net = net
        self.best = float("inf")
        self.best_step = -1
        self.config = config
        self.e_ref = e_ref
        self.history = TrainHistory()
        self.since_best = 0

    def update(self, step, net, loss, psi=None, h=None, target=None, force_record=False) -> bool:
        """Returns False when early stopping triggers."""
        if not np.isfinite(loss):
            self.history.flags.append(f"non-finite loss at step {step}")
            return False
        if loss < self.best:
            self.best, self.best_net, self.best_step = loss, net, step
            self.since_best = 0
        else:
            self.since_best += 1
        if force_record or step % self.config.eval_interval == 0:
            rec = StepRecord(step, float(loss))
            if psi is not None and h is not None:
                rec.energy = energy(psi, h)
            if psi is not None and target is not None:
                rec.deviation = overlap_deviation(psi, target)
            self.history.append(rec)
        p = self.config.patience
        return p is None or self.since_best < p

    def finish(self):
        self.history.best_step = self.best_step
        self.history.best_loss = float(self.best)
        return self.best_net, self.history


def _supervised_update(net, basis, target, log_target, config, opt, rng, logp_full):
    """One sampled supervised step against a fixed target; returns the new network."""
    mode = config.target_mode
    eff_full = _substitute(logp_full, log_target, mode)
    occ_all = basis.occupations
    if config.loss_kind == "mse":
        shift = eff_full.real.max()
        norm = np.linalg.norm(np.exp(eff_full - shift))
        if config.mse_weighting == "psi2":
            idx = exact_sample(normalized_from_log(eff_full), config.batch_size, rng)
        else:
            idx = _rng(rng).integers(0, basis.size, config.batch_size)

        def cot_fn(lp):
            eff = _substitute(lp, log_target[idx], mode)
            _, cot = mse_cotangent(np.exp(eff - shift) / norm, target[idx])
            return _project_cot(cot, mode)

    else:
        idx = exact_sample(normalized_from_log(eff_full), config.batch_size, rng)

        def cot_fn(lp):
            eff = _substitute(lp, log_target[idx], mode)
            return _project_cot(overlap_cotangent(_ratio(target[idx], eff)), mode)

    _, g = net.value_and_vjp(occ_all[idx], cot_fn)
    return net.with_real_params(opt.step(net.real_params, g))


def train_supervised(
    net: Network,
    basis: BasisTable,
    target: np.ndarray,
    config: TrainConfig,
    h: Optional[SparseHamiltonian] = None,
    callback: Optional[Callable] = None,
) -> tuple[Network, TrainHistory]:
    """Fit ``net`` to ``target`` by sampled overlap (or MSE) descent.

    Returns the best network by exact overlap loss and the history.
    """
    target = np.asarray(target, dtype=np.complex128)
    if target.shape != (basis.size,):
        raise ValueError("target length does not match the basis")
    if abs(np.linalg.norm(target) - 1.0) > 1e-8:
        raise NormalizationError("target must be unit-norm")
    rng = np.random.default_rng(config.seed)
    opt = Adam(config.learning_rate)
    lt = _log_target(target)
    tracker = _Tracker(net, config)
    for step in range(config.max_steps + 1):
        logp_full = net.log_psi_basis(basis)
        psi = normalized_from_log(_substitute(logp_full, lt, config.target_mode))
        loss = overlap_loss(psi, target)
        last = step == config.max_steps
        if not tracker.update(step, net, loss, psi, h, target, force_record=last):
            tracker.history.flags.append(f"stopped at step {step}")
            break
        if callback is not None:
            callback(step, net, loss)
        if last:
            break
        net = _supervised_update(net, basis, target, lt, config, opt, rng, logp_full)
    return tracker.finish()


def train_sr(net: Network, h: SparseHamiltonian, config: TrainConfig, e_ref: Optional[float] = None):
    """Energy minimization by SR with ADAM on the natural-gradient direction."""
    rng = np.random.default_rng(config.seed)
    opt = Adam(config.learning_rate)
    tracker = _Tracker(net, config, e_ref)
    for step in range(config.max_steps + 1):
        psi = normalized_from_log(net.log_psi_basis(h.basis))
        e = energy(psi, h)
        last = step == config.max_steps
        if not tracker.update(step, net, e, psi, h, None, force_record=last):
            break
        if last:
            break
        net, _ = sr_step(net, h, config, opt, rng, step, psi)
    return tracker.finish()


def best_dtau(psi: np.ndarray, h: SparseHamiltonian, grid: Sequence[float] = DTAU_GRID):
    """Grid choice of ``dtau`` minimizing the target energy; returns ``(dtau, target, energy)``."""
    best = None
    for dt in grid:
        t = site_target(psi, h, dt)
        e = energy(t, h)
        if best is None or e < best[2]:
            best = (dt, t, e)
    return best


def train_site(net: Network, h: SparseHamiltonian, config: TrainConfig):
    """Supervised imaginary-time evolution.

    The target ``psi - dtau H psi`` is refreshed once the network energy falls
    below ``E_T + f (E_start - E_T)`` (``f = site_refresh_fraction``), or after
    ``site_inner_cap`` inner steps (recorded as a stall).
    """
    basis = h.basis
    rng = np.random.default_rng(config.seed)
    opt = Adam(config.learning_rate)
    tracker = _Tracker(net, config)
    inner_counts = []
    step = 0
    logp_full = net.log_psi_basis(basis)
    psi = normalized_from_log(logp_full)
    e_nqs = energy(psi, h)
    tracker.update(0, net, e_nqs, psi, h, force_record=True)
    while step < config.max_steps:
        dt, target, e_t = best_dtau(psi, h, config.dtau_grid)
        e_start = e_nqs
        scale = max(1.0, abs(e_start))
        if e_start - e_t <= 1e-12 * scale:
            tracker.history.flags.append(f"converged at step {step}: imaginary-time step no longer lowers the energy")
            break
        threshold = e_t + config.site_refresh_fraction * (e_start - e_t)
        lt = _log_target(target)
        inner = 0
        while e_nqs > threshold and step < config.max_steps:
            if inner >= config.site_inner_cap:
                tracker.history.flags.append(f"stall: target refreshed after {inner} inner steps at step {step}")
                break
            net = _supervised_update(net, basis, target, lt, config.replace(target_mode="full"), opt, rng, logp_full)
            step += 1
            inner += 1
            logp_full = net.log_psi_basis(basis)
            psi = normalized_from_log(logp_full)
            e_nqs = energy(psi, h)
            if not tracker.update(step, net, e_nqs, psi, h, force_record=step == config.max_steps):
                step = config.max_steps
                break
        inner_counts.append(inner)
    tracker.history.extra["inner_steps"] = inner_counts
    return tracker.finish()


def curriculum_train(
    net: Network,
    basis: BasisTable,
    alphas: Sequence[float],
    config: TrainConfig,
    ground_state: Callable[[float], np.ndarray],
    stage_steps: Optional[int] = None,
):
    """Supervised training along an ascending flux schedule, carrying parameters over.

    ``ground_state(alpha)`` returns the unit-norm ED target at that flux.
    History ``extra`` holds per-stage final deviation and the overlap of
    successive targets (a drop flags a level crossing).
    """
    alphas = list(alphas)
    if not alphas or any(b < a for a, b in zip(alphas, alphas[1:])):
        raise ValueError("schedule must be non-empty and ascending")
    steps = stage_steps if stage_steps is not None else max(1, config.max_steps // len(alphas))
    combined = TrainHistory()
    offset = 0
    prev_target = None
    stage_dev, target_overlaps, start_dev = [], [], []
    for a in alphas:
        target = ground_state(a)
        if prev_target is not None:
            target_overlaps.append(float(abs(np.vdot(prev_target, target))))
        start_dev.append(overlap_deviation(full_vector(net, basis), target))
        net, hist = train_supervised(net, basis, target, config.replace(max_steps=steps))
        for r in hist.records:
            combined.append(StepRecord(r.step + offset, r.loss, r.energy, r.deviation))
        combined.flags += hist.flags
        offset += steps + 1
        stage_dev.append(overlap_deviation(full_vector(net, basis), target))
        prev_target = target
    combined.best_loss = overlap_loss(full_vector(net, basis), prev_target)
    combined.extra.update(
        alphas=alphas, stage_deviation=stage_dev, start_deviation=start_dev, target_overlap=target_overlaps
    )
    return net, combined


def full_vector(net: Network, basis: BasisTable) -> np.ndarray:
    return normalized_from_log(net.log_psi_basis(basis))


# ---------------------------------------------------------------------------
# Newton refinement


@dataclass
class NewtonResult:
    theta: np.ndarray
    losses: list
    grad_norms: list
    damped: list
    flags: list = field(default_factory=list)


def newton_refine(
    value_fn: Callable[[np.ndarray], float],
    grad_fn: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    max_iters: int = 5,
    hess_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    fd_step: float = 1e-4,
    initial_hessian: Optional[np.ndarray] = None,
) -> NewtonResult:
    """Damped Newton iterations with exact gradient and Hessian.

    A step is accepted only if it lowers the loss; otherwise (or when the
    Hessian is not positive definite) a Levenberg shift ``mu I`` is added and
    grown until the step is accepted.  ``initial_hessian`` reuses an already
    assembled Hessian at the starting point.
    """
    theta = np.asarray(theta, dtype=np.float64).copy()
    hess_fn = hess_fn or (lambda t: fd_hessian(grad_fn, t, fd_step)[0])
    f = value_fn(theta)
    g = grad_fn(theta)
    res = NewtonResult(theta, [f], [float(np.linalg.norm(g))], [])
    for it in range(max_iters):
        H = initial_hessian if it == 0 and initial_hessian is not None else hess_fn(theta)
        evals, evecs = np.linalg.eigh(H)
        mu = 0.0
        if evals[0] <= 0:
            mu = -evals[0] + 1e-8 * max(1.0, abs(evals[-1]))
            res.flags.append(f"iteration {it}: Hessian not positive definite, damping {mu:.3g}")
        accepted = False
        for _ in range(30):
            step = evecs @ ((evecs.T @ g) / (evals + mu))
            cand = theta - step
            fc = value_fn(cand)
            if np.isfinite(fc) and fc < f:
                accepted = True
                break
            mu = max(10.0 * mu, 1e-8 * max(1.0, abs(evals[-1])))
        if not accepted:
            res.flags.append(f"iteration {it}: no decreasing step found")
            break
        theta, f = cand, fc
        g = grad_fn(theta)
        res.losses.append(f)
        res.grad_norms.append(float(np.linalg.norm(g)))
        res.damped.append(mu > 0)
        if res.grad_norms[-1] < 1e-12:
            break
    res.theta = theta
    return res
