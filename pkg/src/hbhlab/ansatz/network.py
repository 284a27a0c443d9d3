"""MLP / CNN neural quantum states producing ``log psi(s)``."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import NumericOverflow
from ..hilbert import BasisTable, LatticeShape
from .encodings import ENCODINGS, make_encoding
from .layers import GELU, Conv2D, Dense, Flatten, LayerNorm

ARCHITECTURES = ("mlp", "cnn")
CNN_KERNEL = 3


@dataclass(frozen=True)
class NetworkConfig:
    architecture: str = "mlp"
    depth: int = 2
    width: int = 32
    parameter_field: str = "real"
    encoding: str = "plusminus"
    precision: str = "f32"
    seed: int = 0

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}")
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be at least 1")
        if self.parameter_field not in ("real", "complex"):
            raise ValueError("parameter_field must be 'real' or 'complex'")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"encoding must be one of {ENCODINGS}")
        if self.precision not in ("f32", "f64"):
            raise ValueError("precision must be 'f32' or 'f64'")

    @property
    def is_complex(self) -> bool:
        return self.parameter_field == "complex"

    @property
    def dtype(self):
        if self.is_complex:
            return np.complex64 if self.precision == "f32" else np.complex128
        return np.float32 if self.precision == "f32" else np.float64

    @property
    def real_dtype(self):
        return np.float32 if self.precision == "f32" else np.float64

    def replace(self, **kw) -> "NetworkConfig":
        return replace(self, **kw)


def _build_layers(config: NetworkConfig, shape: LatticeShape):
    enc = make_encoding(config.encoding, shape)
    layers = [enc]
    h, w = enc.out_hw
    c = enc.channels
    if config.architecture == "mlp":
        layers.append(Flatten())
        n = h * w * c
        for _ in range(config.depth):
            layers += [Dense(n, config.width), LayerNorm(config.width), GELU()]
            n = config.width
        head_in = n
    else:
        for _ in range(config.depth):
            layers += [Conv2D(c, config.width, CNN_KERNEL), LayerNorm(config.width), GELU()]
            c = config.width
        layers.append(Flatten())
        head_in = h * w * c
    layers.append(Dense(head_in, 1 if config.is_complex else 2, bias=False))
    return layers


def parameter_count(config: NetworkConfig, shape: LatticeShape) -> int:
    """Number of (real or complex) parameters of the network."""
    return sum(int(np.prod(s)) for layer in _build_layers(config, shape) for s in layer.param_shapes)


class Network:
    """Immutable network value: architecture plus one flat parameter vector.

    ``params`` lives in the configured field.  Optimizers work on the real
    view (``real_params``), which for complex networks concatenates the real
    and imaginary parts.
    """

    def __init__(self, config: NetworkConfig, shape: LatticeShape, params: Optional[np.ndarray] = None):
        self.config = config
        self.shape = shape
        self.layers = _build_layers(config, shape)
        self._slices = []
        off = 0
        for layer in self.layers:
            sl = []
            for s in layer.param_shapes:
                size = int(np.prod(s))
                sl.append((off, off + size, s))
                off += size
            self._slices.append(sl)
        self.n_params = off
        if params is None:
            rng = np.random.default_rng(config.seed)
            chunks = [p.ravel() for layer in self.layers for p in layer.init(rng, config.dtype)]
            params = np.concatenate(chunks) if chunks else np.zeros(0, config.dtype)
        params = np.asarray(params, dtype=config.dtype)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {params.shape}")
        params.setflags(write=False)
        self.params = params

    # -- parameter views -------------------------------------------------

    @property
    def n_real(self) -> int:
        return 2 * self.n_params if self.config.is_complex else self.n_params

    @property
    def real_params(self) -> np.ndarray:
        p = self.params
        if self.config.is_complex:
            return np.concatenate([p.real, p.imag])
        return p.copy()

    def to_native(self, real_vec: np.ndarray) -> np.ndarray:
        real_vec = np.asarray(real_vec)
        if self.config.is_complex:
            n = self.n_params
            return (real_vec[:n] + 1j * real_vec[n:]).astype(self.config.dtype)
        return real_vec.astype(self.config.dtype)

    def with_params(self, params: np.ndarray) -> "Network":
        return Network(self.config, self.shape, params)

    def with_real_params(self, real_vec: np.ndarray) -> "Network":
        return Network(self.config, self.shape, self.to_native(real_vec))

    def _layer_params(self, params):
        return [[params[a:b].reshape(s) for a, b, s in sl] for sl in self._slices]

    # -- evaluation ------------------------------------------------------

    def _forward(self, occ, params):
        lp = self._layer_params(params)
        x = np.asarray(occ)
        caches = []
        cdtype = self.config.dtype
        for i, (layer, p) in enumerate(zip(self.layers, lp)):
            x, cache = layer.forward(x, p)
            if i == 0:
                x = x.astype(cdtype, copy=False)
            caches.append(cache)
        if self.config.is_complex:
            out = x[:, 0].astype(np.complex128)
        else:
            out = x[:, 0].astype(np.float64) + 1j * x[:, 1].astype(np.float64)
        return out, caches, lp

    def log_psi(self, occ: np.ndarray, params: Optional[np.ndarray] = None) -> np.ndarray:
        """Complex ``log psi`` for a (B, L) occupation batch."""
        params = self.params if params is None else params
        return self._forward(occ, params)[0]

    def _backward(self, cot, caches, lp, per_sample, native_dtype=False):
        cot = np.asarray(cot, dtype=np.complex128)
        if self.config.is_complex:
            g = cot[:, None].astype(self.config.dtype)
        else:
            g = np.stack([cot.real, cot.imag], axis=1).astype(self.config.dtype)
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            g, grads[i] = self.layers[i].backward(g, caches[i], lp[i], per_sample)
        B = cot.shape[0]
        flat = []
        for layer_grads in grads:
            for gp in layer_grads:
                flat.append(gp.reshape(B, -1) if per_sample else gp.ravel())
        native = np.concatenate(flat, axis=-1) if flat else np.zeros((B, 0) if per_sample else 0)
        if native_dtype and not self.config.is_complex:
            return native
        if self.config.is_complex:
            native = native.astype(np.complex128)
            return np.concatenate([native.real, native.imag], axis=-1)
        return native.astype(np.float64)

    def vjp(self, occ: np.ndarray, cot: np.ndarray, params: Optional[np.ndarray] = None) -> np.ndarray:
        """Real-view gradient of ``sum_s Re(conj(cot_s) log psi(s))``.

        ``cot_s`` is ``dl/dRe(log psi_s) + i dl/dIm(log psi_s)`` for a real loss ``l``.
        """
        params = self.params if params is None else params
        _, caches, lp = self._forward(occ, params)
        return self._backward(cot, caches, lp, per_sample=False)

    def value_and_vjp(self, occ, cot_fn, params=None):
        """Evaluate ``log psi``, form the cotangent with ``cot_fn(log_psi)``, then backpropagate."""
        params = self.params if params is None else params
        out, caches, lp = self._forward(occ, params)
        cot = cot_fn(out)
        return out, self._backward(cot, caches, lp, per_sample=False)

    def jacobian(self, occ: np.ndarray, params: Optional[np.ndarray] = None, chunk: int = 1024) -> np.ndarray:
        """Per-state log-derivatives ``O[s, k] = d log psi(s) / d theta_k`` (real view)."""
        params = self.params if params is None else params
        occ = np.asarray(occ)
        rows = []
        for lo in range(0, occ.shape[0], chunk):
            part = occ[lo : lo + chunk]
            _, caches, lp = self._forward(part, params)
            B = part.shape[0]
            d_re = self._backward(np.ones(B), caches, lp, per_sample=True)
            d_im = self._backward(np.full(B, 1j), caches, lp, per_sample=True)
            rows.append(d_re + 1j * d_im)
        return np.concatenate(rows, axis=0)

    def jacobian_parts(self, occ: np.ndarray, params: Optional[np.ndarray] = None, chunk: int = 1024):
        """Real and imaginary parts of :meth:`jacobian` as two real arrays.

        For real-parameter networks the arrays stay in the network precision.
        """
        if self.config.is_complex:
            o = self.jacobian(occ, params, chunk)
            return o.real, o.imag
        params = self.params if params is None else params
        occ = np.asarray(occ)
        re, im = [], []
        for lo in range(0, occ.shape[0], chunk):
            part = occ[lo : lo + chunk]
            _, caches, lp = self._forward(part, params)
            B = part.shape[0]
            re.append(self._backward(np.ones(B), caches, lp, True, native_dtype=True))
            im.append(self._backward(np.full(B, 1j), caches, lp, True, native_dtype=True))
        return np.concatenate(re, axis=0), np.concatenate(im, axis=0)

    # -- full vectors ----------------------------------------------------

    def log_psi_basis(self, basis: BasisTable, params=None, chunk: int = 1024) -> np.ndarray:
        occ = basis.occupations
        return np.concatenate([self.log_psi(occ[lo : lo + chunk], params) for lo in range(0, basis.size, chunk)])

    def vjp_basis(self, basis: BasisTable, cot_fn, params=None, chunk: int = 1024):
        """Full-basis ``log psi`` and the real-view gradient for cotangents ``cot_fn(log_psi)``.

        Returns ``(log_psi, cot, grad)``.
        """
        params = self.params if params is None else params
        occ = basis.occupations
        saved = []
        for lo in range(0, basis.size, chunk):
            saved.append(self._forward(occ[lo : lo + chunk], params))
        logp = np.concatenate([out for out, _, _ in saved])
        cot = cot_fn(logp)
        grad = np.zeros(self.n_real)
        lo = 0
        for out, caches, lp in saved:
            grad += self._backward(cot[lo : lo + out.shape[0]], caches, lp, per_sample=False)
            lo += out.shape[0]
        return logp, cot, grad

    def astype(self, precision: str) -> "Network":
        """Same parameters at another floating-point precision."""
        cfg = self.config.replace(precision=precision)
        return Network(cfg, self.shape, self.params.astype(cfg.dtype))


@dataclass(frozen=True)
class TapeGradient:
    """A scalar loss with its gradient in the real parameter view.

    For complex networks ``native`` folds the view back into one complex
    entry per parameter (``dL/dRe + i dL/dIm``), aligned with ``params``.
    """

    value: float
    gradient: np.ndarray
    is_complex: bool = False

    @property
    def native(self) -> np.ndarray:
        if not self.is_complex:
            return self.gradient
        n = self.gradient.size // 2
        return self.gradient[:n] + 1j * self.gradient[n:]


def grad_log_psi(net: Network, occ: np.ndarray) -> np.ndarray:
    return net.jacobian(occ)


def normalized_from_log(logp: np.ndarray) -> np.ndarray:
    """``exp(log psi - max Re log psi)`` normalized to unit norm."""
    bad = ~np.isfinite(logp)
    if bad.any():
        raise NumericOverflow("non-finite log-amplitude", int(np.nonzero(bad)[0][0]))
    psi = np.exp(logp - logp.real.max())
    return psi / np.linalg.norm(psi)


def full_state_vector(net: Network, basis: BasisTable, params=None) -> np.ndarray:
    if basis.shape != net.shape:
        raise ValueError("basis lattice does not match the network lattice")
    return normalized_from_log(net.log_psi_basis(basis, params))


def save_checkpoint(path, net: Network, **extra) -> None:
    header = {**asdict(net.config), "l_x": net.shape.l_x, "l_y": net.shape.l_y, **extra}
    with open(Path(path), "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(header)), params=np.asarray(net.params))


def load_checkpoint(path) -> tuple[Network, dict]:
    with np.load(Path(path)) as z:
        header = json.loads(str(z["header"]))
        params = z["params"]
    fields = NetworkConfig.__dataclass_fields__
    config = NetworkConfig(**{k: header[k] for k in fields})
    return Network(config, LatticeShape(header["l_x"], header["l_y"]), params), header
