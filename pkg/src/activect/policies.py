"""Sampling policies and episode runners.

* ``US``  - uniform views
* ``RS``  - random views
* ``SAS`` - sequential active sampling with a fixed angular window
* ``GDS`` - active sampling with a global window, then a detail window
* ``GS``  - greedy oracle that adds the view with the best PSNR each step
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .agent import SelectionState, score_all_candidates, select_topk_in_range
from .errors import ConfigurationError
from .metrics import MetricReport, image_metrics, normalize_pair, psnr
from .recon import SartConfig, reconstruct
from .tomo import AngleSet, add_poisson_noise, forward_project

__all__ = [
    "PolicyConfig",
    "MeasurementSource",
    "Pick",
    "EpisodeTrace",
    "TRACE_HEADER",
    "uniform_angles",
    "random_angles",
    "run_fixed_episode",
    "run_active_episode",
    "greedy_episode",
    "run_policy",
]

KINDS = ("US", "RS", "SAS", "GDS", "GS")
TRACE_HEADER = "step,angle_index,angle_deg,score,fallback,psnr,ssim,rmse,wall_ms"


@dataclass(frozen=True)
class PolicyConfig:
    """Episode hyperparameters.

    Defaults are the inference settings (one view per step, window 5-10
    degrees).  Training usually runs with a looser window such as (2, 30).
    """

    kind: str = "SAS"
    k0: int = 5
    k: int = 1
    k_max: int = 15
    window: tuple = (5.0, 10.0)
    global_window: tuple = (10.0, 30.0)
    detail_window: tuple = (2.0, 8.0)
    switch_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown policy kind {self.kind!r}")
        object.__setattr__(self, "window", tuple(float(v) for v in self.window))
        object.__setattr__(self, "global_window", tuple(float(v) for v in self.global_window))
        object.__setattr__(self, "detail_window", tuple(float(v) for v in self.detail_window))
        if self.k < 1 or not 1 <= self.k0 <= self.k_max:
            raise ConfigurationError("need k >= 1 and 1 <= k0 <= k_max")
        if self.kind in ("SAS", "GDS") and (self.k_max - self.k0) % self.k:
            raise ConfigurationError("k_max - k0 must be divisible by k")
        if not 0.0 < self.switch_fraction < 1.0:
            raise ConfigurationError("switch_fraction must lie in (0, 1)")

    def validate(self, geom):
        if self.k_max > geom.num_angles:
            raise ConfigurationError("k_max exceeds the number of candidate views")
        for w in (self.window, self.global_window, self.detail_window):
            if not 0.0 <= w[0] < w[1] <= geom.alpha_max / 2.0:
                raise ConfigurationError(f"window {w} invalid for alpha_max {geom.alpha_max}")

    @property
    def num_steps(self):
        return (self.k_max - self.k0) // self.k


class MeasurementSource:
    """Full set of candidate rows; measuring picks rows out of it.

    Noise, when requested, is applied once to the whole sinogram so that
    repeated measurements of a view return the identical row.
    """

    def __init__(self, full_sinogram, ground_truth=None, roi_mask=None):
        if len(full_sinogram) != full_sinogram.geometry.num_angles:
            raise ConfigurationError("measurement source needs every candidate row")
        self.full = full_sinogram
        self.ground_truth = None if ground_truth is None else np.asarray(ground_truth, np.float64)
        self.roi_mask = roi_mask

    @classmethod
    def from_image(cls, image, geom, photons=None, seed=0, roi_mask=None):
        sino = forward_project(image, geom)
        if photons is not None:
            sino = add_poisson_noise(sino, photons, seed)
        return cls(sino, image, roi_mask)

    @property
    def geometry(self):
        return self.full.geometry

    def measure(self, angles):
        return self.full.subset(angles)

    def evaluate(self, image):
        if self.ground_truth is None:
            nan = math.nan
            return MetricReport(nan, nan, nan)
        return image_metrics(image, self.ground_truth, self.roi_mask)


@dataclass(frozen=True)
class Pick:
    step: int
    angle_index: int
    score: float
    fallback: bool


@dataclass
class EpisodeTrace:
    """Ordered picks plus the metrics of the reconstruction after each step."""

    geometry: object
    picks: list = field(default_factory=list)
    metrics: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    images: list = field(default_factory=list)
    final_image: Optional[np.ndarray] = None

    @property
    def angles(self):
        return AngleSet(p.angle_index for p in self.picks)

    @property
    def order(self):
        return [p.angle_index for p in self.picks]

    @property
    def final_metrics(self):
        return self.metrics[-1]

    @property
    def total_ms(self):
        return float(sum(self.wall_ms))

    def to_csv(self):
        buf = io.StringIO()
        buf.write(TRACE_HEADER + "\n")
        w = csv.writer(buf, lineterminator="\n")
        for p in self.picks:
            m = self.metrics[p.step]
            w.writerow([p.step, p.angle_index, fmt(self.geometry.angle_deg(p.angle_index)),
                        fmt(p.score), int(p.fallback), fmt(m.psnr), fmt(m.ssim), fmt(m.rmse),
                        fmt(self.wall_ms[p.step])])
        return buf.getvalue()


def fmt(x):
    """Shortest round-tripping text for a float; ``inf``/``nan`` literal."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def uniform_angles(k_max, T):
    """``floor(j * T / k_max)`` for ``j = 0 .. k_max - 1``."""
    if not 1 <= k_max <= T:
        raise ConfigurationError(f"cannot place {k_max} views among {T}")
    idx = (np.arange(k_max) * T) // k_max
    if np.unique(idx).size != k_max:
        raise ConfigurationError("uniform angle indices collide")
    return AngleSet(idx, T)


def random_angles(k_max, T, seed):
    """First ``k_max`` entries of a seeded Fisher-Yates shuffle of ``0..T-1``."""
    if not 1 <= k_max <= T:
        raise ConfigurationError(f"cannot place {k_max} views among {T}")
    rng = np.random.default_rng(seed)
    perm = np.arange(T)
    for i in range(k_max):
        j = i + int(rng.integers(T - i))
        perm[i], perm[j] = perm[j], perm[i]
    return AngleSet(perm[:k_max], T)


def run_fixed_episode(source, angles, recon_model=None, sart_cfg=SartConfig()):
    """Reconstruct once from a predetermined view set (US / RS)."""
    geom = source.geometry
    t0 = time.perf_counter()
    img = reconstruct(source.measure(angles), geom, recon_model, sart_cfg)
    ms = (time.perf_counter() - t0) * 1e3
    tr = EpisodeTrace(geom)
    tr.picks = [Pick(0, i, math.nan, False) for i in AngleSet(angles)]
    tr.metrics = [source.evaluate(img)]
    tr.wall_ms = [ms]
    tr.images = [img]
    tr.final_image = img
    return tr


def run_active_episode(source, cfg, recon_model, scorer, geom=None, sart_cfg=SartConfig(),
                       keep_images=False):
    """Alternate reconstruction, scoring and window-constrained selection.

    Starts from ``k0`` uniform views and adds ``k`` views per step until
    ``k_max`` are held; the final image uses every acquired row.  GDS uses
    ``global_window`` for the first ``floor(N * switch_fraction)`` steps and
    ``detail_window`` afterwards.
    """
    geom = source.geometry if geom is None else geom
    if cfg.kind not in ("SAS", "GDS"):
        raise ConfigurationError(f"active episode needs SAS or GDS, got {cfg.kind}")
    cfg.validate(geom)
    n_steps = cfg.num_steps
    switch = math.floor(n_steps * cfg.switch_fraction)

    tr = EpisodeTrace(geom)
    t0 = time.perf_counter()
    sampled = uniform_angles(cfg.k0, geom.num_angles)
    tr.picks.extend(Pick(0, i, math.nan, False) for i in sampled)
    y = source.measure(sampled)
    img = reconstruct(y, geom, recon_model, sart_cfg)
    tr.metrics.append(source.evaluate(img))
    tr.wall_ms.append((time.perf_counter() - t0) * 1e3)
    if keep_images:
        tr.images.append(img)

    last = None
    for n in range(n_steps):
        t0 = time.perf_counter()
        if cfg.kind == "SAS":
            window = cfg.window
        else:
            window = cfg.global_window if n < switch else cfg.detail_window
        scores = score_all_candidates(img, scorer, geom)
        sel = select_topk_in_range(scores, SelectionState(sampled, last, window), cfg.k, geom)
        for i in sel.ranked:
            tr.picks.append(Pick(n + 1, i, float(scores[i]), sel.fallback))
        sampled = sampled.union(sel.angles)
        last = sel.ranked[0]
        y = y.merge(source.measure(sel.angles))
        img = reconstruct(y, geom, recon_model, sart_cfg)
        tr.metrics.append(source.evaluate(img))
        tr.wall_ms.append((time.perf_counter() - t0) * 1e3)
        if keep_images:
            tr.images.append(img)
    tr.final_image = img
    return tr


def greedy_episode(source, k_max, recon_model=None, geom=None, sart_cfg=SartConfig(), start=(0,)):
    """Training-free greedy oracle.

    Starting from ``start`` (view 0), every step reconstructs with each
    unsampled candidate added and keeps the one with the highest PSNR against
    the ground truth (lowest index on ties).
    """
    geom = source.geometry if geom is None else geom
    if source.ground_truth is None:
        raise ConfigurationError("greedy sampling needs the ground-truth image")
    if not len(start) <= k_max <= geom.num_angles:
        raise ConfigurationError("invalid k_max for greedy sampling")
    tr = EpisodeTrace(geom)
    t0 = time.perf_counter()
    S = AngleSet(start, geom.num_angles)
    tr.picks.extend(Pick(0, i, math.nan, False) for i in S)
    img = reconstruct(source.measure(S), geom, recon_model, sart_cfg)
    tr.metrics.append(source.evaluate(img))
    tr.wall_ms.append((time.perf_counter() - t0) * 1e3)
    tr.images.append(img)
    step = 0
    while len(S) < k_max:
        step += 1
        t0 = time.perf_counter()
        best, best_psnr, best_img = None, -math.inf, None
        taken = set(S)
        for c in range(geom.num_angles):
            if c in taken:
                continue
            cand = reconstruct(source.measure(S.union([c])), geom, recon_model, sart_cfg)
            p = psnr(*normalize_pair(cand, source.ground_truth))
            if p > best_psnr:
                best, best_psnr, best_img = c, p, cand
        S = S.union([best])
        tr.picks.append(Pick(step, best, best_psnr, False))
        tr.metrics.append(source.evaluate(best_img))
        tr.wall_ms.append((time.perf_counter() - t0) * 1e3)
        tr.images.append(best_img)
        img = best_img
    tr.final_image = img
    return tr


def run_policy(source, cfg, recon_model=None, scorer=None, sart_cfg=SartConfig()):
    """Dispatch one episode of ``cfg.kind``."""
    geom = source.geometry
    cfg.validate(geom)
    if cfg.kind == "US":
        return run_fixed_episode(source, uniform_angles(cfg.k_max, geom.num_angles), recon_model, sart_cfg)
    if cfg.kind == "RS":
        return run_fixed_episode(source, random_angles(cfg.k_max, geom.num_angles, cfg.seed),
                                 recon_model, sart_cfg)
    if cfg.kind == "GS":
        return greedy_episode(source, cfg.k_max, recon_model, geom, sart_cfg)
    if scorer is None:
        raise ConfigurationError(f"{cfg.kind} needs a scorer")
    return run_active_episode(source, cfg, recon_model, scorer, geom, sart_cfg)
