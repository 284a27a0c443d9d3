"""Input encodings: occupation batch (B, L) -> feature map (B, H, W, C).

The occupation matrix has ``H = l_y`` rows and ``W = l_x`` columns, so
``matrix[k-1, j-1]`` is site ``(j, k)``.
"""

from __future__ import annotations

import numpy as np

from ..hilbert import LatticeShape, sites_from_mask
from .layers import Dense, Layer, _normal

ENCODINGS = ("plusminus", "fourier", "patches", "embeddings")


def plusminus_matrix(occ: np.ndarray, shape: LatticeShape) -> np.ndarray:
    """(B, L) 0/1 occupations -> (B, l_y, l_x) matrix of -1 (empty) / +1 (occupied)."""
    occ = np.asarray(occ)
    return (2.0 * occ - 1.0).reshape(occ.shape[0], shape.l_y, shape.l_x)


class PlusMinus(Layer):
    def __init__(self, shape: LatticeShape):
        self.shape = shape
        self.out_hw = (shape.l_y, shape.l_x)
        self.channels = 1

    def forward(self, occ, params):
        return plusminus_matrix(occ, self.shape)[..., None], None

    def backward(self, gy, cache, params, per_sample=False):
        return None, []


class Fourier(Layer):
    """Unnormalized 2D DFT of the +-1 matrix; real and imaginary parts as two channels."""

    def __init__(self, shape: LatticeShape):
        self.shape = shape
        self.out_hw = (shape.l_y, shape.l_x)
        self.channels = 2

    def forward(self, occ, params):
        f = np.fft.fft2(plusminus_matrix(occ, self.shape), axes=(1, 2))
        return np.stack([f.real, f.imag], axis=-1), None

    def backward(self, gy, cache, params, per_sample=False):
        return None, []


class Patches(Layer):
    """Non-overlapping 2x2 blocks, each mapped to 4 features by a shared learnable affine map.

    Odd dimensions are padded with empty (-1) sites.
    """

    def __init__(self, shape: LatticeShape):
        self.shape = shape
        self.h2 = shape.l_y + shape.l_y % 2
        self.w2 = shape.l_x + shape.l_x % 2
        self.out_hw = (self.h2 // 2, self.w2 // 2)
        self.channels = 4
        self.proj = Dense(4, 4, bias=True)
        self.param_shapes = self.proj.param_shapes

    def init(self, rng, dtype):
        return self.proj.init(rng, dtype)

    def blocks(self, occ):
        m = plusminus_matrix(occ, self.shape)
        B = m.shape[0]
        m = np.pad(m, ((0, 0), (0, self.h2 - m.shape[1]), (0, self.w2 - m.shape[2])), constant_values=-1.0)
        h, w = self.out_hw
        return m.reshape(B, h, 2, w, 2).transpose(0, 1, 3, 2, 4).reshape(B, h, w, 4)

    def forward(self, occ, params):
        x = self.blocks(occ).astype(params[0].dtype)
        return self.proj.forward(x, params)

    def backward(self, gy, cache, params, per_sample=False):
        _, grads = self.proj.backward(gy, cache, params, per_sample)
        return None, grads


class Embeddings(Layer):
    """Per-site sum of a learnable position vector and a learnable occupancy vector."""

    def __init__(self, shape: LatticeShape, dim: int = 2):
        self.shape = shape
        self.dim = dim
        self.out_hw = (shape.l_y, shape.l_x)
        self.channels = dim
        self.param_shapes = [(shape.n_sites, dim), (2, dim)]

    def init(self, rng, dtype):
        return [_normal(rng, s, 1.0, dtype) for s in self.param_shapes]

    def forward(self, occ, params):
        occ = np.asarray(occ, dtype=np.intp)
        pos, table = params
        x = pos[None, :, :] + table[occ]
        return x.reshape(occ.shape[0], self.shape.l_y, self.shape.l_x, self.dim), occ

    def backward(self, gy, occ, params, per_sample=False):
        B = occ.shape[0]
        g = gy.reshape(B, self.shape.n_sites, self.dim)
        filled = occ[..., None].astype(g.real.dtype)
        g_full = (g * filled).sum(axis=1)
        g_empty = (g * (1 - filled)).sum(axis=1)
        if per_sample:
            return None, [g, np.stack([g_empty, g_full], axis=1)]
        return None, [g.sum(axis=0), np.stack([g_empty.sum(0), g_full.sum(0)])]


def make_encoding(scheme: str, shape: LatticeShape) -> Layer:
    try:
        cls = {"plusminus": PlusMinus, "fourier": Fourier, "patches": Patches, "embeddings": Embeddings}[scheme]
    except KeyError:
        raise ValueError(f"unknown encoding {scheme!r}; expected one of {ENCODINGS}") from None
    return cls(shape)


def occupations_of(states, shape: LatticeShape) -> np.ndarray:
    """Bit-set states (ints) -> (B, L) int8 occupation rows."""
    out = np.zeros((len(states), shape.n_sites), dtype=np.int8)
    for b, s in enumerate(states):
        out[b, list(sites_from_mask(int(s)))] = 1
    return out


def encode(s, scheme: str, shape: LatticeShape, params=None, rng_seed: int = 0) -> np.ndarray:
    """Feature map (H, W, C) of a single configuration ``s``.

    Learnable schemes use ``params`` when given, else a seeded initialization.
    """
    enc = make_encoding(scheme, shape)
    occ = occupations_of([s], shape) if isinstance(s, (int, np.integer)) else np.atleast_2d(s)
    if params is None:
        params = enc.init(np.random.default_rng(rng_seed), np.float64)
    y, _ = enc.forward(occ, params)
    return y[0]
