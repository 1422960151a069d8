"""Ellipse phantoms and region-of-interest masks."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

__all__ = [
    "Ellipse",
    "EllipsePhantom",
    "SHEPP_LOGAN",
    "render_phantom",
    "shepp_logan",
    "shepp_logan_family",
    "feature_phantoms",
    "EllipseRoI",
    "ThresholdRoI",
    "make_roi_mask",
]


@dataclass(frozen=True)
class Ellipse:
    """One ellipse in normalized coordinates ``[-1, 1]^2`` (y points up)."""

    center_x: float
    center_y: float
    a: float
    b: float
    rotation: float = 0.0
    intensity: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.a <= 1.0 and 0.0 < self.b <= 1.0):
            raise ConfigurationError("ellipse semi-axes must lie in (0, 1]")
        if not (-1.0 <= self.center_x <= 1.0 and -1.0 <= self.center_y <= 1.0):
            raise ConfigurationError("ellipse centre must lie in [-1, 1]^2")

    def contains(self, x, y):
        t = np.deg2rad(self.rotation)
        dx, dy = x - self.center_x, y - self.center_y
        xr = dx * np.cos(t) + dy * np.sin(t)
        yr = -dx * np.sin(t) + dy * np.cos(t)
        return (xr / self.a) ** 2 + (yr / self.b) ** 2 <= 1.0


@dataclass(frozen=True)
class EllipsePhantom:
    ellipses: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "ellipses", tuple(self.ellipses))


# Modified (high-contrast) Shepp-Logan table:
# (intensity, a, b, center_x, center_y, rotation in degrees)
_SL_TABLE = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
]

SHEPP_LOGAN = EllipsePhantom(tuple(
    Ellipse(cx, cy, a, b, rot, amp) for amp, a, b, cx, cy, rot in _SL_TABLE))


def pixel_coordinates(h, w):
    """Normalized coordinates of pixel centres, each of shape ``(h, w)``."""
    x = (np.arange(w) - (w - 1) / 2.0) / (w / 2.0)
    y = ((h - 1) / 2.0 - np.arange(h)) / (h / 2.0)
    return np.meshgrid(x, y)


def render_phantom(spec, h, w=None):
    """Rasterize ``spec``: each pixel sums the ellipses containing its centre.

    Negative sums are clamped to zero.
    """
    w = h if w is None else w
    if h < 8 or w < 8:
        raise ConfigurationError("phantom must be at least 8x8")
    X, Y = pixel_coordinates(h, w)
    img = np.zeros((h, w))
    for e in spec.ellipses:
        img[e.contains(X, Y)] += e.intensity
    return np.maximum(img, 0.0)


def _rescale(img):
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros_like(img)
    return (img - lo) / (hi - lo)


def shepp_logan(h, w=None):
    """Modified Shepp-Logan phantom rescaled to ``[0, 1]``."""
    return _rescale(render_phantom(SHEPP_LOGAN, h, w))


def shepp_logan_family(count=5, seed=0):
    """Shepp-Logan plus ``count - 1`` randomly perturbed variants.

    Variants jitter the inner ellipses' centres, sizes and angles; the outer
    skull is kept so every member stays inside the inscribed circle.
    """
    rng = np.random.default_rng(seed)
    out = [SHEPP_LOGAN]
    for _ in range(count - 1):
        ells = list(SHEPP_LOGAN.ellipses[:2])
        for e in SHEPP_LOGAN.ellipses[2:]:
            scale = rng.uniform(0.8, 1.25)
            ells.append(Ellipse(
                float(np.clip(e.center_x + rng.uniform(-0.05, 0.05), -0.5, 0.5)),
                float(np.clip(e.center_y + rng.uniform(-0.05, 0.05), -0.7, 0.7)),
                float(min(e.a * scale, 0.45)),
                float(min(e.b * scale, 0.45)),
                e.rotation + float(rng.uniform(-15, 15)),
                e.intensity,
            ))
        out.append(EllipsePhantom(tuple(ells)))
    return out[:count]


def feature_phantoms(count=5, seed=0):
    """Body-like phantoms with a small bright feature away from the centre.

    Each one is a soft-tissue ellipse with a couple of faint inner blobs and a
    high-contrast "spine" ellipse placed off-centre.  Returns ``(phantom,
    roi)`` pairs where ``roi`` is an :class:`EllipseRoI` around the feature.
    """
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        body_a, body_b = rng.uniform(0.6, 0.75), rng.uniform(0.45, 0.6)
        ang = rng.uniform(0, 2 * np.pi)
        r = rng.uniform(0.25, 0.35)
        fx, fy = r * np.cos(ang), r * np.sin(ang)
        fa, fb = rng.uniform(0.06, 0.1), rng.uniform(0.04, 0.07)
        frot = rng.uniform(0, 180)
        ells = [
            Ellipse(0.0, 0.0, body_a, body_b, rng.uniform(-10, 10), 0.3),
            Ellipse(float(rng.uniform(-0.2, 0.2)), float(rng.uniform(-0.15, 0.15)),
                    float(rng.uniform(0.1, 0.2)), float(rng.uniform(0.08, 0.15)),
                    float(rng.uniform(0, 180)), 0.1),
            Ellipse(float(rng.uniform(-0.25, 0.25)), float(rng.uniform(-0.2, 0.2)),
                    float(rng.uniform(0.05, 0.1)), float(rng.uniform(0.05, 0.1)),
                    0.0, -0.1),
            Ellipse(float(fx), float(fy), float(fa), float(fb), float(frot), 0.7),
            Ellipse(float(fx), float(fy), float(fa * 0.45), float(fb * 0.45), float(frot), -0.4),
        ]
        roi = EllipseRoI(float(fx), float(fy), float(fa * 1.6), float(fb * 1.6), float(frot))
        out.append((EllipsePhantom(tuple(ells)), roi))
    return out


@dataclass(frozen=True)
class EllipseRoI:
    center_x: float
    center_y: float
    a: float
    b: float
    rotation: float = 0.0


@dataclass(frozen=True)
class ThresholdRoI:
    tau: float


def make_roi_mask(spec, image):
    """Binary mask for ``image``: ellipse interior or pixels ``>= tau``.

    An all-zero mask is returned with a warning rather than raised.
    """
    image = np.asarray(image, dtype=np.float64)
    if isinstance(spec, ThresholdRoI):
        mask = image >= spec.tau
    elif isinstance(spec, EllipseRoI):
        if spec.a <= 0 or spec.b <= 0:
            raise ConfigurationError("RoI semi-axes must be positive")
        X, Y = pixel_coordinates(*image.shape)
        t = np.deg2rad(spec.rotation)
        dx, dy = X - spec.center_x, Y - spec.center_y
        xr = dx * np.cos(t) + dy * np.sin(t)
        yr = -dx * np.sin(t) + dy * np.cos(t)
        mask = (xr / spec.a) ** 2 + (yr / spec.b) ** 2 <= 1.0
    else:
        raise ConfigurationError(f"unknown RoI spec {spec!r}")
    mask = mask.astype(np.uint8)
    if not mask.any():
        warnings.warn("RoI mask is empty", RuntimeWarning, stacklevel=2)
    return mask
