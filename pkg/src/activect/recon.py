"""Reconstructor: FBP, SART and a small residual convolutional post-filter.

The composite :func:`reconstruct` (FBP -> SART warm start -> residual
post-filter) is the reconstructor used by every sampling policy and by
training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigurationError, NumericalError
from .tomo import Sinogram, check_image, submatrix, system_matrix

__all__ = [
    "SartConfig",
    "PostFilterModel",
    "ramp_kernel",
    "fbp",
    "sart",
    "postfilter_forward",
    "postfilter_backward",
    "classical_reconstruct",
    "reconstruct",
]

EPS = 1e-8


@dataclass(frozen=True)
class SartConfig:
    num_iterations: int = 20
    relaxation: float = 0.5
    nonnegativity: bool = True

    def __post_init__(self):
        if self.num_iterations < 1:
            raise ConfigurationError("SART needs at least one iteration")
        if not 0.0 < self.relaxation < 2.0:
            raise ConfigurationError("SART relaxation must lie in (0, 2)")


# ---------------------------------------------------------------- FBP

def ramp_kernel(num_detectors, spacing=1.0, window="ramp"):
    """Band-limited Ram-Lak kernel sampled at offsets ``-(D-1) .. D-1``.

    ``h[0] = 1/(4 tau^2)``, ``h[n] = -1/(n pi tau)^2`` for odd ``n`` and zero
    for even ``n``.  The Hann variant convolves it with ``[1/4, 1/2, 1/4]``,
    which is the raised-cosine apodization expressed in the spatial domain.
    """
    n = np.arange(-(num_detectors - 1), num_detectors)
    h = np.zeros(n.size)
    h[n == 0] = 1.0 / (4.0 * spacing ** 2)
    odd = n % 2 == 1
    h[odd] = -1.0 / (np.pi * n[odd] * spacing) ** 2
    if window == "hann":
        h = np.convolve(h, [0.25, 0.5, 0.25], mode="same")
    elif window != "ramp":
        raise ConfigurationError(f"unknown filter {window!r}")
    return h


@lru_cache(maxsize=16)
def _filter_matrix(num_detectors, spacing, window):
    D = num_detectors
    h = ramp_kernel(D, spacing, window)
    # F[i, j] = h[i - j] so that q = p @ F.T is the linear convolution
    idx = np.arange(D)[:, None] - np.arange(D)[None, :] + (D - 1)
    F = h[idx] * spacing
    F.setflags(write=False)
    return F


def _angular_weight(geom, num_views):
    # each line is covered once by [0, 180) and twice by [0, 360)
    span = min(math.radians(geom.alpha_max), math.pi)
    return span / num_views


def fbp(sino, geom=None, filter="ramp"):
    """Filtered backprojection of whatever views ``sino`` holds."""
    geom = sino.geometry if geom is None else geom
    if len(sino) == 0:
        raise ConfigurationError("FBP needs at least one view")
    F = _filter_matrix(geom.num_detectors, geom.detector_spacing, filter)
    q = sino.data @ F.T
    A = submatrix(geom, sino.angles)
    img = (A.T @ q.ravel()).reshape(geom.shape)
    return img * _angular_weight(geom, len(sino))


# ---------------------------------------------------------------- SART

@lru_cache(maxsize=8)
def _row_sums(geom):
    return np.asarray(system_matrix(geom).sum(axis=1)).ravel()


def _safe_reciprocal(v):
    out = np.zeros_like(v)
    ok = v > EPS
    out[ok] = 1.0 / v[ok]
    return out


def data_residual(image, sino):
    """``||A u - y||`` over the views present in ``sino``."""
    A = submatrix(sino.geometry, sino.angles)
    return float(np.linalg.norm(A @ np.ravel(image) - sino.data.ravel()))


def sart(sino, geom=None, init=None, cfg=SartConfig()):
    """Simultaneous algebraic reconstruction from the present views.

    Each sweep applies ``u <- u + lam * A^T((y - A u) / r) / c`` with row sums
    ``r`` and column sums ``c`` of the restricted system matrix; both
    divisions drop entries whose denominator is below ``1e-8``.
    """
    geom = sino.geometry if geom is None else geom
    u = np.zeros(geom.shape) if init is None else check_image(init, geom).copy()
    if len(sino) == 0:
        return u
    A = submatrix(geom, sino.angles)
    AT = A.T.tocsr()
    rows = (sino.angles[:, None] * geom.num_detectors + np.arange(geom.num_detectors)).ravel()
    inv_r = _safe_reciprocal(_row_sums(geom)[rows])
    inv_c = _safe_reciprocal(np.asarray(AT.sum(axis=1)).ravel())
    y = sino.data.ravel()
    x = u.ravel()
    lam = cfg.relaxation
    for it in range(cfg.num_iterations):
        x = x + lam * inv_c * (AT @ ((y - A @ x) * inv_r))
        if cfg.nonnegativity:
            np.maximum(x, 0.0, out=x)
        if not np.all(np.isfinite(x)):
            raise NumericalError(f"non-finite SART iterate at iteration {it}")
    return x.reshape(geom.shape)


# ---------------------------------------------------------------- post-filter

@dataclass
class PostFilterModel:
    """Stack of same-padded convolutions with ReLU in between.

    ``weights[l]`` has shape ``(c_out, c_in, k, k)`` and ``biases[l]`` shape
    ``(c_out,)``.  The filter is applied in residual form, ``u + net(u)``.
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @classmethod
    def create(cls, widths=(1, 8, 1), kernel_size=5, seed=0, scale=0.05):
        """First layers small random, last layer zero (starts as the identity)."""
        if widths[0] != 1 or widths[-1] != 1:
            raise ConfigurationError("post-filter must map 1 channel to 1 channel")
        if kernel_size % 2 != 1:
            raise ConfigurationError("kernel size must be odd")
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        n = len(widths) - 1
        for l in range(n):
            shape = (widths[l + 1], widths[l], kernel_size, kernel_size)
            if l == n - 1:
                ws.append(np.zeros(shape))
            else:
                ws.append(rng.normal(0.0, scale, shape))
            bs.append(np.zeros(widths[l + 1]))
        return cls(ws, bs)

    @classmethod
    def zeros(cls, widths=(1, 8, 1), kernel_size=5):
        m = cls.create(widths, kernel_size)
        return cls([np.zeros_like(w) for w in m.weights], [np.zeros_like(b) for b in m.biases])

    @property
    def kernel_size(self):
        return self.weights[0].shape[-1]

    @property
    def num_parameters(self):
        return int(sum(w.size for w in self.weights) + sum(b.size for b in self.biases))

    def params(self):
        """Flat name -> array view of every trainable tensor."""
        out = {}
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{l}"] = w
            out[f"b{l}"] = b
        return out

    def copy(self):
        return PostFilterModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_arrays(self):
        return [a for wb in zip(self.weights, self.biases) for a in wb]

    @classmethod
    def from_arrays(cls, arrays):
        if len(arrays) % 2:
            raise ConfigurationError("post-filter arrays must come in (weight, bias) pairs")
        return cls([np.array(a) for a in arrays[0::2]], [np.array(a).reshape(-1) for a in arrays[1::2]])


def _im2col(x, k):
    """``(C, H, W)`` -> ``(H*W, C*k*k)`` patches of the zero-padded input."""
    C, H, W = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))       # (C, H, W, k, k)
    return win.transpose(1, 2, 0, 3, 4).reshape(H * W, C * k * k)


def _col2im(cols, shape, k):
    C, H, W = shape
    p = k // 2
    g = np.zeros((C, H + 2 * p, W + 2 * p))
    cols = cols.reshape(H, W, C, k, k)
    for i in range(k):
        for j in range(k):
            g[:, i:i + H, j:j + W] += cols[:, :, :, i, j].transpose(2, 0, 1)
    return g[:, p:p + H, p:p + W]


def _forward_cache(model, u):
    x = np.asarray(u, dtype=np.float64)[None]
    k = model.kernel_size
    cache = []
    n = len(model.weights)
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        cols = _im2col(x, k)
        z = cols @ w.reshape(w.shape[0], -1).T + b            # (H*W, c_out)
        z = z.T.reshape(w.shape[0], *x.shape[1:])
        cache.append((x.shape, cols, z))
        x = np.maximum(z, 0.0) if l < n - 1 else z
    return x[0], cache


def postfilter_forward(model, u):
    """Residual post-filter ``u + net(u)``."""
    if model is None:
        return np.asarray(u, dtype=np.float64).copy()
    out, _ = _forward_cache(model, u)
    return np.asarray(u, dtype=np.float64) + out


def postfilter_backward(model, u, upstream):
    """Reverse-mode gradients of :func:`postfilter_forward`.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` maps the names
    of :meth:`PostFilterModel.params` to arrays of matching shape.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    _, cache = _forward_cache(model, u)
    k = model.kernel_size
    grads = {}
    g = upstream[None]
    n = len(model.weights)
    for l in range(n - 1, -1, -1):
        w = model.weights[l]
        in_shape, cols, z = cache[l]
        if l < n - 1:
            g = g * (z > 0.0)
        gflat = g.reshape(g.shape[0], -1).T                   # (H*W, c_out)
        grads[f"w{l}"] = (gflat.T @ cols).reshape(w.shape)
        grads[f"b{l}"] = gflat.sum(axis=0)
        g = _col2im(gflat @ w.reshape(w.shape[0], -1), in_shape, k)
    return grads, upstream + g[0]


# ---------------------------------------------------------------- composite

def classical_reconstruct(sino, geom=None, cfg=SartConfig(), filter="ramp"):
    """FBP followed by SART warm-started from it."""
    geom = sino.geometry if geom is None else geom
    return sart(sino, geom, fbp(sino, geom, filter), cfg)


def reconstruct(sino, geom=None, model=None, cfg=SartConfig(), filter="ramp"):
    """Reconstructor used by the sampling policies: FBP -> SART -> post-filter."""
    return postfilter_forward(model, classical_reconstruct(sino, geom, cfg, filter))
