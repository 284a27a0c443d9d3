"""Reverse-mode differentiable layers on numpy arrays.

Every layer maps a batch ``x`` to ``y`` and supplies a backward rule.  Gradients
follow the real-loss convention: for a real scalar loss ``l`` and a complex
array ``z = a + ib`` the cotangent is ``dl/da + i dl/db``; for real arrays it is
the ordinary gradient.  With this convention complex parameters are updated by
``theta -= lr * cotangent``, exactly like real ones.

``backward(gy, cache, params, per_sample)`` returns ``(gx, grads)``; with
``per_sample=True`` each parameter gradient keeps a leading batch axis.
"""

from __future__ import annotations

import math

import numba
import numpy as np
from scipy.special import erf

_SQRT2 = 2.0**0.5
_INV_SQRT_2PI = (2.0 * np.pi) ** -0.5
LN_EPS = 1e-6


def _conj(x):
    return np.conj(x) if np.iscomplexobj(x) else x


class Layer:
    param_shapes: list[tuple[int, ...]] = []

    def init(self, rng, dtype) -> list[np.ndarray]:
        return []

    def forward(self, x, params):
        raise NotImplementedError

    def backward(self, gy, cache, params, per_sample=False):
        raise NotImplementedError


def _normal(rng, shape, std, dtype):
    if np.issubdtype(dtype, np.complexfloating):
        s = std / np.sqrt(2.0)
        return (rng.normal(0.0, s, shape) + 1j * rng.normal(0.0, s, shape)).astype(dtype)
    return rng.normal(0.0, std, shape).astype(dtype)


class Dense(Layer):
    """``y = x @ W (+ b)`` acting on the last axis of a (B, ..., n_in) batch."""

    def __init__(self, n_in, n_out, bias=True):
        self.n_in, self.n_out, self.bias = n_in, n_out, bias
        self.param_shapes = [(n_in, n_out)] + ([(n_out,)] if bias else [])

    def init(self, rng, dtype):
        ps = [_normal(rng, (self.n_in, self.n_out), 1.0 / np.sqrt(self.n_in), dtype)]
        if self.bias:
            ps.append(np.zeros(self.n_out, dtype=dtype))
        return ps

    def forward(self, x, params):
        y = x @ params[0]
        if self.bias:
            y += params[1]
        return y, x

    def backward(self, gy, x, params, per_sample=False):
        gx = gy @ _conj(params[0]).T
        if per_sample:
            B = x.shape[0]
            xs = _conj(x).reshape(B, -1, self.n_in)
            grads = [np.einsum("bti,bto->bio", xs, gy.reshape(B, -1, self.n_out))]
            if self.bias:
                grads.append(gy.reshape(gy.shape[0], -1, self.n_out).sum(axis=1))
        else:
            grads = [_conj(x).reshape(-1, self.n_in).T @ gy.reshape(-1, self.n_out)]
            if self.bias:
                grads.append(gy.reshape(-1, self.n_out).sum(axis=0))
        return gx, grads


class Conv2D(Layer):
    """``k x k`` same-padded, unit-stride convolution on (B, H, W, C) maps."""

    def __init__(self, c_in, c_out, kernel=3):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        self.c_in, self.c_out, self.k = c_in, c_out, kernel
        self.param_shapes = [(kernel, kernel, c_in, c_out), (c_out,)]

    def init(self, rng, dtype):
        fan_in = self.k * self.k * self.c_in
        return [
            _normal(rng, self.param_shapes[0], 1.0 / np.sqrt(fan_in), dtype),
            np.zeros(self.c_out, dtype=dtype),
        ]

    def _patches(self, x):
        B, H, W, C = x.shape
        p = self.k // 2
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        cols = [xp[:, di : di + H, dj : dj + W, :] for di in range(self.k) for dj in range(self.k)]
        return np.concatenate(cols, axis=-1)  # (B, H, W, k*k*C), ordered (di, dj, c)

    def forward(self, x, params):
        cols = self._patches(x)
        kern = params[0].reshape(-1, self.c_out)
        return cols @ kern + params[1], (cols, x.shape)

    def backward(self, gy, cache, params, per_sample=False):
        cols, xshape = cache
        B, H, W, C = xshape
        kern = params[0].reshape(-1, self.c_out)
        if per_sample:
            gk = np.einsum("bhwk,bhwo->bko", _conj(cols), gy).reshape((B,) + self.param_shapes[0])
            grads = [gk, gy.sum(axis=(1, 2))]
        else:
            gk = (_conj(cols).reshape(-1, cols.shape[-1]).T @ gy.reshape(-1, self.c_out))
            grads = [gk.reshape(self.param_shapes[0]), gy.sum(axis=(0, 1, 2))]
        gcols = gy @ _conj(kern).T
        p = self.k // 2
        gxp = np.zeros((B, H + 2 * p, W + 2 * p, C), dtype=gcols.dtype)
        t = 0
        for di in range(self.k):
            for dj in range(self.k):
                gxp[:, di : di + H, dj : dj + W, :] += gcols[..., t * C : (t + 1) * C]
                t += 1
        return gxp[:, p : p + H, p : p + W, :], grads


@numba.njit(cache=True, fastmath=True)
def _ln_forward_real(x, gamma, eps):
    rows, n = x.shape
    u = np.empty_like(x)
    y = np.empty_like(x)
    r = np.empty(rows, dtype=x.dtype)
    for i in range(rows):
        m = 0.0
        for k in range(n):
            m += x[i, k]
        m /= n
        v = 0.0
        for k in range(n):
            d = x[i, k] - m
            v += d * d
        ri = 1.0 / math.sqrt(v / n + eps)
        r[i] = ri
        for k in range(n):
            uk = (x[i, k] - m) * ri
            u[i, k] = uk
            y[i, k] = uk * gamma[k]
    return y, u, r


@numba.njit(cache=True, fastmath=True)
def _ln_backward_real(gy, u, r, gamma):
    rows, n = gy.shape
    gx = np.empty_like(gy)
    for i in range(rows):
        s1 = 0.0
        s2 = 0.0
        for k in range(n):
            gu = gy[i, k] * gamma[k]
            s1 += gu
            s2 += gu * u[i, k]
        s1 /= n
        s2 /= n
        for k in range(n):
            gx[i, k] = r[i] * (gy[i, k] * gamma[k] - s1 - u[i, k] * s2)
    return gx


class LayerNorm(Layer):
    """Normalization over the last axis with a learnable scale and no offset.

    For complex inputs the variance is ``mean |x - mean(x)|^2``.
    """

    def __init__(self, n):
        self.n = n
        self.param_shapes = [(n,)]

    def init(self, rng, dtype):
        return [np.ones(self.n, dtype=dtype)]

    def forward(self, x, params):
        if not np.iscomplexobj(x):
            x2 = np.ascontiguousarray(x).reshape(-1, self.n)
            y, u, r = _ln_forward_real(x2, params[0], x.dtype.type(LN_EPS))
            return y.reshape(x.shape), (None, r, u.reshape(x.shape))
        c = x - x.mean(axis=-1, keepdims=True)
        v = (c * c.conj()).real.mean(axis=-1, keepdims=True)
        r = 1.0 / np.sqrt(v + LN_EPS)
        u = c * r
        return u * params[0], (c, r, u)

    def backward(self, gy, cache, params, per_sample=False):
        c, r, u = cache
        n = self.n
        if c is None:
            gy2 = np.ascontiguousarray(gy).reshape(-1, n)
            gx = _ln_backward_real(gy2, u.reshape(-1, n), r, params[0]).reshape(gy.shape)
        else:
            gu = gy * np.conj(params[0])
            gr = (np.conj(gu) * c).real.sum(axis=-1, keepdims=True)
            gv = -0.5 * r**3 * gr
            gc = gu * r + (2.0 / n) * gv * c
            gx = gc - gc.mean(axis=-1, keepdims=True)
        prod = gy * _conj(u)
        if per_sample:
            g = prod.reshape(prod.shape[0], -1, n).sum(axis=1)
        else:
            g = prod.reshape(-1, n).sum(axis=0)
        return gx, [g]


@numba.vectorize(["float32(float32)"], cache=True)
def _erf32(x):
    # rational minimax fit on [-4, 4], max abs error ~4e-7
    c = min(max(x, np.float32(-4.0)), np.float32(4.0))
    x2 = c * c
    p = np.float32(-2.72614225801306e-10)
    p = p * x2 + np.float32(2.77068142495902e-08)
    p = p * x2 + np.float32(-2.10102402082508e-06)
    p = p * x2 + np.float32(-5.69250639462346e-05)
    p = p * x2 + np.float32(-7.34990630326855e-04)
    p = p * x2 + np.float32(-2.95459980854025e-03)
    p = p * x2 + np.float32(-1.60960333262415e-02)
    q = np.float32(-1.45660718464996e-05)
    q = q * x2 + np.float32(-2.13374055278905e-04)
    q = q * x2 + np.float32(-1.68282697438203e-03)
    q = q * x2 + np.float32(-7.37332916720468e-03)
    q = q * x2 + np.float32(-1.42647390514189e-02)
    return c * p / q


@numba.vectorize(["float32(float32)"], cache=True)
def _gelu32(x):
    return np.float32(0.5) * x * (np.float32(1.0) + _erf32(x * np.float32(0.70710677)))


@numba.vectorize(["float32(float32)"], cache=True)
def _gelu_grad32(x):
    phi = np.float32(0.3989423) * math.exp(np.float32(-0.5) * x * x)
    return np.float32(0.5) * (np.float32(1.0) + _erf32(x * np.float32(0.70710677))) + x * phi


def gelu(x):
    if x.dtype == np.float32:
        return _gelu32(x)
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    if x.dtype == np.float32:
        return _gelu_grad32(x)
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


class GELU(Layer):
    """Exact (erf) GELU; on complex input it acts on real and imaginary parts separately."""

    def forward(self, x, params):
        if np.iscomplexobj(x):
            return gelu(x.real) + 1j * gelu(x.imag), x
        return gelu(x), x

    def backward(self, gy, x, params, per_sample=False):
        if np.iscomplexobj(x):
            return gelu_grad(x.real) * gy.real + 1j * (gelu_grad(x.imag) * gy.imag), []
        return gelu_grad(x) * gy, []


class Flatten(Layer):
    def forward(self, x, params):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, gy, shape, params, per_sample=False):
        return gy.reshape(shape), []
