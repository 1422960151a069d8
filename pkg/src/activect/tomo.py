"""Parallel-beam scan geometry, Joseph projector and transmission noise.

Images are plain 2-D ``float64`` arrays of shape ``(H, W)``; row 0 is the
top of the image.  Pixel centres sit at

    x_c = (c - (W - 1) / 2) * pixel_size
    y_r = ((H - 1) / 2 - r) * pixel_size

and the ray with detector coordinate ``s`` at angle ``theta`` is the line
``x cos(theta) + y sin(theta) = s``.  At ``theta = 0`` the rays run
vertically, so a projection is the vector of column sums.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .errors import BoundsError, ConfigurationError

__all__ = [
    "Geometry",
    "AngleSet",
    "Sinogram",
    "default_geometry",
    "check_image",
    "system_matrix",
    "project_at_angle",
    "forward_project",
    "backproject",
    "add_poisson_noise",
    "angular_distance",
]


@dataclass(frozen=True)
class Geometry:
    """Parallel-beam scan description.

    ``num_angles`` candidate views are spread over ``[0, alpha_max)``; view
    ``i`` sits at ``i * alpha_max / num_angles`` degrees.
    """

    image_h: int
    image_w: int
    num_detectors: int
    num_angles: int = 180
    alpha_max: float = 180.0
    pixel_size: float = 1.0
    detector_spacing: float = 1.0

    def __post_init__(self):
        for name in ("image_h", "image_w", "num_detectors", "num_angles"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not 0.0 < self.alpha_max <= 360.0:
            raise ConfigurationError("alpha_max must lie in (0, 360]")
        if self.pixel_size <= 0 or self.detector_spacing <= 0:
            raise ConfigurationError("pixel_size and detector_spacing must be positive")

    @property
    def shape(self):
        return (self.image_h, self.image_w)

    @property
    def angle_step(self):
        return self.alpha_max / self.num_angles

    def angle_deg(self, i):
        return i * self.alpha_max / self.num_angles

    def angles_rad(self):
        return np.deg2rad(np.arange(self.num_angles) * self.alpha_max / self.num_angles)

    def detector_positions(self):
        d = np.arange(self.num_detectors, dtype=np.float64)
        return (d - (self.num_detectors - 1) / 2.0) * self.detector_spacing

    def check_angle(self, i):
        if not 0 <= int(i) < self.num_angles:
            raise BoundsError(f"angle index {i} outside [0, {self.num_angles})")
        return int(i)


def default_geometry(h, w=None, num_angles=180, alpha_max=180.0, pixel_size=1.0):
    """Geometry whose detector covers the whole image diagonal.

    The detector count is the smallest odd integer >= sqrt(H^2 + W^2), so the
    centre bin lies on the rotation axis.
    """
    w = h if w is None else w
    d = math.ceil(math.sqrt(h * h + w * w))
    if d % 2 == 0:
        d += 1
    return Geometry(h, w, d, num_angles, alpha_max, pixel_size, pixel_size)


class AngleSet:
    """Sorted, duplicate-free set of angle indices.

    The set of present views stands in for the 0/1 sub-sampling matrix.
    """

    __slots__ = ("_idx",)

    def __init__(self, indices=(), num_angles=None):
        idx = np.asarray(list(indices) if not isinstance(indices, np.ndarray) else indices,
                         dtype=np.int64).ravel()
        if idx.size != np.unique(idx).size:
            raise ConfigurationError("angle set contains duplicates")
        idx = np.sort(idx)
        if idx.size and idx[0] < 0:
            raise BoundsError(f"negative angle index {idx[0]}")
        if num_angles is not None and idx.size and idx[-1] >= num_angles:
            raise BoundsError(f"angle index {idx[-1]} outside [0, {num_angles})")
        idx.setflags(write=False)
        self._idx = idx

    @property
    def indices(self):
        return self._idx

    def __len__(self):
        return int(self._idx.size)

    def __iter__(self):
        return (int(i) for i in self._idx)

    def __contains__(self, i):
        j = np.searchsorted(self._idx, i)
        return bool(j < self._idx.size and self._idx[j] == i)

    def __eq__(self, other):
        if isinstance(other, AngleSet):
            return np.array_equal(self._idx, other._idx)
        return NotImplemented

    def __hash__(self):
        return hash(self._idx.tobytes())

    def __repr__(self):
        return f"AngleSet({self._idx.tolist()})"

    def union(self, other):
        return AngleSet(np.union1d(self._idx, np.asarray(list(other), dtype=np.int64)))


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Projection rows for a subset of the candidate views.

    ``angles`` holds sorted distinct view indices and ``data[j]`` is the
    detector row measured at view ``angles[j]``.
    """

    geometry: Geometry
    angles: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=np.int64).ravel()
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            data = data.reshape(len(angles), self.geometry.num_detectors)
        if data.shape != (angles.size, self.geometry.num_detectors):
            raise ConfigurationError(
                f"sinogram data shape {data.shape} does not match "
                f"({angles.size}, {self.geometry.num_detectors})")
        if angles.size != np.unique(angles).size:
            raise ConfigurationError("duplicate angle indices in sinogram")
        if angles.size and (angles.min() < 0 or angles.max() >= self.geometry.num_angles):
            raise BoundsError("sinogram angle index out of range")
        if not np.all(np.isfinite(data)):
            raise ConfigurationError("sinogram contains non-finite values")
        order = np.argsort(angles, kind="stable")
        angles, data = angles[order], data[order]
        angles.setflags(write=False)
        data.setflags(write=False)
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "data", data)

    @classmethod
    def empty(cls, geometry):
        return cls(geometry, np.zeros(0, np.int64), np.zeros((0, geometry.num_detectors)))

    def __len__(self):
        return int(self.angles.size)

    @property
    def angle_set(self):
        return AngleSet(self.angles)

    @property
    def rows(self):
        return {int(i): self.data[j] for j, i in enumerate(self.angles)}

    def row(self, i):
        j = np.searchsorted(self.angles, i)
        if j >= self.angles.size or self.angles[j] != i:
            raise BoundsError(f"angle {i} not present in sinogram")
        return self.data[j]

    def subset(self, angles):
        angles = AngleSet(angles).indices
        pos = np.searchsorted(self.angles, angles)
        if np.any(pos >= self.angles.size) or np.any(self.angles[np.minimum(pos, self.angles.size - 1)] != angles):
            raise BoundsError("requested angles not present in sinogram")
        return Sinogram(self.geometry, angles, self.data[pos])

    def merge(self, other):
        """Union of two sinograms; rows for shared angles must agree."""
        if other.geometry != self.geometry:
            raise ConfigurationError("cannot merge sinograms from different geometries")
        rows = self.rows
        for i, r in other.rows.items():
            if i in rows and not np.array_equal(rows[i], r):
                raise ConfigurationError(f"conflicting rows for angle {i}")
            rows[i] = r
        keys = sorted(rows)
        data = np.array([rows[i] for i in keys]).reshape(len(keys), self.geometry.num_detectors)
        return Sinogram(self.geometry, np.array(keys, dtype=np.int64), data)


def check_image(image, geom):
    image = np.asarray(image, dtype=np.float64)
    if image.shape != geom.shape:
        raise ConfigurationError(f"image shape {image.shape} does not match geometry {geom.shape}")
    return image


def _angle_block(geom, theta):
    """COO triplets (detector, pixel, weight) of one view's Joseph weights."""
    H, W, ps = geom.image_h, geom.image_w, geom.pixel_size
    s = geom.detector_positions()
    c, sn = math.cos(theta), math.sin(theta)
    if abs(c) >= abs(sn):
        # one interpolation per image row
        y = ((H - 1) / 2.0 - np.arange(H)) * ps
        x = (s[None, :] - y[:, None] * sn) / c          # (H, D)
        f = x / ps + (W - 1) / 2.0
        lead, n_other = np.arange(H)[:, None], W
        step = ps / abs(c)
    else:
        x = (np.arange(W) - (W - 1) / 2.0) * ps
        y = (s[None, :] - x[:, None] * c) / sn          # (W, D)
        f = (H - 1) / 2.0 - y / ps
        lead, n_other = np.arange(W)[:, None], H
        step = ps / abs(sn)
    i0 = np.floor(f)
    frac = f - i0
    i0 = i0.astype(np.int64)
    det = np.broadcast_to(np.arange(geom.num_detectors)[None, :], f.shape)
    lead = np.broadcast_to(lead, f.shape)
    dets, pix, wts = [], [], []
    for idx, w in ((i0, 1.0 - frac), (i0 + 1, frac)):
        ok = (idx >= 0) & (idx < n_other) & (w > 0.0)
        if abs(c) >= abs(sn):
            p = lead[ok] * W + idx[ok]
        else:
            p = idx[ok] * W + lead[ok]
        dets.append(det[ok])
        pix.append(p)
        wts.append(w[ok] * step)
    return np.concatenate(dets), np.concatenate(pix), np.concatenate(wts)


@lru_cache(maxsize=8)
def system_matrix(geom):
    """Sparse ``(T*D, H*W)`` matrix of the full-sampling projector.

    Row ``i*D + d`` holds the Joseph interpolation weights of detector bin
    ``d`` at view ``i``.  Cached per geometry; treat the result as read-only.
    """
    D = geom.num_detectors
    rows, cols, vals = [], [], []
    for i, theta in enumerate(geom.angles_rad()):
        d, p, w = _angle_block(geom, float(theta))
        rows.append(d + i * D)
        cols.append(p)
        vals.append(w)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geom.num_angles * D, geom.image_h * geom.image_w),
    ).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def _row_index(geom, angles):
    angles = np.asarray(angles, dtype=np.int64)
    D = geom.num_detectors
    return (angles[:, None] * D + np.arange(D)[None, :]).ravel()


def submatrix(geom, angles):
    """Rows of the system matrix belonging to ``angles``."""
    angles = AngleSet(angles, geom.num_angles).indices
    return system_matrix(geom)[_row_index(geom, angles)]


def project_at_angle(image, geom, angle_index):
    """Line integrals along the ``D`` rays of a single view."""
    image = check_image(image, geom)
    i = geom.check_angle(angle_index)
    D = geom.num_detectors
    return system_matrix(geom)[i * D:(i + 1) * D] @ image.ravel()


def forward_project(image, geom, angles=None):
    """Project ``image`` at every view in ``angles`` (all views if ``None``)."""
    image = check_image(image, geom)
    if angles is None:
        angles = np.arange(geom.num_angles)
    idx = AngleSet(angles, geom.num_angles).indices
    if idx.size == 0:
        return Sinogram.empty(geom)
    if idx.size == geom.num_angles:
        data = system_matrix(geom) @ image.ravel()
    else:
        data = submatrix(geom, idx) @ image.ravel()
    return Sinogram(geom, idx, data.reshape(idx.size, geom.num_detectors))


def backproject(sino, geom=None):
    """Adjoint of :func:`forward_project` restricted to the present views."""
    geom = sino.geometry if geom is None else geom
    if sino.geometry != geom:
        raise ConfigurationError("sinogram geometry differs from the requested geometry")
    if len(sino) == 0:
        return np.zeros(geom.shape)
    A = submatrix(geom, sino.angles)
    return (A.T @ sino.data.ravel()).reshape(geom.shape)


def add_poisson_noise(sino, photons, seed):
    """Simulate photon-counting noise on line integrals.

    Each bin draws ``N ~ Poisson(I0 exp(-y))`` and returns
    ``-log(max(N, 1) / I0)``.  Every view gets its own Philox stream keyed by
    ``(seed, angle_index)`` and consumed in detector order, so the result does
    not depend on the order in which views are processed.
    """
    if not photons > 0:
        raise ConfigurationError("photon count must be positive")
    y = np.maximum(sino.data, 0.0)
    out = np.empty_like(y)
    for j, i in enumerate(sino.angles):
        ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(i)])
        rng = np.random.Generator(np.random.Philox(ss))
        counts = rng.poisson(photons * np.exp(-y[j]))
        out[j] = -np.log(np.maximum(counts, 1) / photons)
    return Sinogram(sino.geometry, sino.angles, out)


def angular_distance(i, j, geom):
    """Wrap-around distance in degrees between two views on the ``alpha_max`` circle."""
    i, j = geom.check_angle(i), geom.check_angle(j)
    d = abs(i - j) * geom.alpha_max / geom.num_angles
    return min(d, geom.alpha_max - d)


def angular_distances(i, geom):
    """Vector of :func:`angular_distance` from view ``i`` to every view."""
    i = geom.check_angle(i)
    d = np.abs(np.arange(geom.num_angles) - i) * geom.alpha_max / geom.num_angles
    return np.minimum(d, geom.alpha_max - d)
