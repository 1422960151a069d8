"""Losses, Adam, and alternating training of the reconstructor and scorer."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .agent import ScorerModel, reliability_scores, scorer_backward, scorer_forward
from .errors import ConfigurationError, DivergenceError, NumericalError
from .fileio import read_checkpoint, write_checkpoint
from .policies import MeasurementSource, PolicyConfig, run_active_episode, uniform_angles
from .recon import (PostFilterModel, SartConfig, classical_reconstruct, postfilter_backward,
                    postfilter_forward)
from .tomo import forward_project

__all__ = [
    "AdamState",
    "adam_step",
    "loss_recon",
    "loss_recon_roi",
    "loss_agent",
    "TrainConfig",
    "TrainRecord",
    "train_alternating",
    "TRAIN_POLICY",
    "save_models",
    "load_models",
]

DIVERGENCE_LIMIT = 1e6

# looser window while training, tight (5, 10) window at inference
TRAIN_POLICY = PolicyConfig(kind="SAS", k0=5, k=1, k_max=15, window=(2.0, 30.0))


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Bias-corrected Adam update applied to ``params`` in place.

    ``params`` and ``grads`` are name -> array mappings with matching shapes.
    Returns ``params``.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name!r}")
        if params[name].shape != np.shape(g):
            raise ConfigurationError(f"gradient shape mismatch for {name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def loss_recon(u_hat, u_gt):
    """Mean squared error and its gradient with respect to ``u_hat``."""
    u_hat, u_gt = _same_shape(u_hat, u_gt)
    d = u_hat - u_gt
    return float(np.mean(d * d)), 2.0 * d / d.size


def loss_recon_roi(u_hat, u_gt, mask):
    """Mean of ``((1 + M) * (u_hat - u_gt))^2``: RoI pixels weigh four times as much."""
    u_hat, u_gt = _same_shape(u_hat, u_gt)
    w = 1.0 + np.asarray(mask, dtype=np.float64)
    if w.shape != u_hat.shape:
        raise ConfigurationError("mask shape differs from image shape")
    wd = w * (u_hat - u_gt)
    return float(np.mean(wd * wd)), 2.0 * w * wd / wd.size


def loss_agent(scores, targets):
    """Mean squared error between per-view scores and reliability targets."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if s.shape != t.shape:
        raise ConfigurationError("scores and targets differ in length")
    d = s - t
    return float(np.mean(d * d)), 2.0 * d / d.size


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr_r: float = 1e-4
    lr_a: float = 2e-4
    roi: bool = False
    seed: int = 0
    r_warmup_epochs: int = 2
    pretrain_epochs: int = 0
    photons: Optional[float] = None
    sart: SartConfig = SartConfig()

    def __post_init__(self):
        if self.epochs < 2:
            raise ConfigurationError("need at least two epochs (one per module)")

    def phase(self, epoch):
        """``"R"`` on even (0-based) epochs and during warm-up, else ``"A"``."""
        return "R" if epoch < self.r_warmup_epochs or epoch % 2 == 0 else "A"


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    phase: str
    loss_r: float
    loss_a: float
    wall_ms: float

    @property
    def mean_loss(self):
        return self.loss_r if self.phase == "R" else self.loss_a


def log_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "phase", "mean_loss", "wall_ms"])
    for r in records:
        w.writerow([r.epoch, r.phase, repr(r.mean_loss), repr(r.wall_ms)])
    return buf.getvalue()


def _agent_loss_and_grads(scorer, images, geom, gt_rows):
    per_image = [forward_project(im, geom).data for im in images]
    rows = np.concatenate(per_image)
    targets = np.concatenate([reliability_scores(r, gt_rows) for r in per_image])
    scores = scorer_forward(scorer, rows)
    loss, g = loss_agent(scores, targets)
    return loss, scorer_backward(scorer, rows, g)


def _recon_loss_and_grads(model, classical, gt, mask, use_roi):
    u_hat = postfilter_forward(model, classical)
    if use_roi and mask is not None:
        loss, g = loss_recon_roi(u_hat, gt, mask)
    else:
        loss, g = loss_recon(u_hat, gt)
    grads, _ = postfilter_backward(model, classical, g)
    return loss, grads


def _check(loss, epoch):
    if not math.isfinite(loss) or loss > DIVERGENCE_LIMIT:
        raise DivergenceError(f"loss {loss} exceeded divergence limit", epoch)


def train_alternating(dataset, cfg, policy, geom, recon_model=None, scorer=None):
    """Alternating optimization of the post-filter and the scorer.

    Every epoch runs an active episode per training image with the current
    models.  R epochs take one Adam step on the post-filter per image from the
    final reconstruction loss; A epochs take one Adam step on the scorer per
    image from the reliability targets of every intermediate reconstruction
    at all candidate views.  No gradient passes through view selection.
    Both losses are recorded every epoch; only one model changes.

    ``dataset`` is a list of ``(image, mask_or_None)`` pairs.
    Returns ``(recon_model, scorer, records)``.
    """
    if not dataset:
        raise ConfigurationError("training set is empty")
    rng = np.random.default_rng(cfg.seed)
    recon_model = PostFilterModel.create(seed=cfg.seed) if recon_model is None else recon_model.copy()
    sources = []
    for j, (img, mask) in enumerate(dataset):
        sources.append(MeasurementSource.from_image(
            img, geom, cfg.photons, seed=cfg.seed * 1000003 + j,
            roi_mask=None if mask is None else np.asarray(mask)))
    if scorer is None:
        scale = max(float(np.abs(s.full.data).max()) for s in sources) or 1.0
        scorer = ScorerModel.create(geom.num_detectors, seed=cfg.seed + 1, input_scale=scale)
    else:
        scorer = scorer.copy()
    opt_r = AdamState(cfg.lr_r)
    opt_a = AdamState(cfg.lr_a)
    records = []

    for epoch in range(-cfg.pretrain_epochs, 0):
        # scorer warm-up on uniform-view reconstructions
        t0 = time.perf_counter()
        losses = []
        for j in rng.permutation(len(sources)):
            src = sources[j]
            sizes = range(policy.k0, policy.k_max + 1, policy.k)
            images = [postfilter_forward(recon_model, classical_reconstruct(
                src.measure(uniform_angles(m, geom.num_angles)), geom, cfg.sart)) for m in sizes]
            loss, grads = _agent_loss_and_grads(scorer, images, geom, src.full.data)
            _check(loss, epoch)
            adam_step(scorer.params(), grads, opt_a)
            losses.append(loss)
        records.append(TrainRecord(epoch, "P", math.nan, float(np.mean(losses)),
                                   (time.perf_counter() - t0) * 1e3))

    for epoch in range(cfg.epochs):
        phase = cfg.phase(epoch)
        t0 = time.perf_counter()
        lr_vals, la_vals = [], []
        for j in rng.permutation(len(sources)):
            src = sources[j]
            tr = run_active_episode(src, policy, recon_model, scorer, geom, cfg.sart, keep_images=True)
            y = src.measure(tr.angles)
            classical = classical_reconstruct(y, geom, cfg.sart)
            loss_r, grads_r = _recon_loss_and_grads(recon_model, classical, src.ground_truth,
                                                    src.roi_mask, cfg.roi)
            loss_a, grads_a = _agent_loss_and_grads(scorer, tr.images, geom, src.full.data)
            _check(loss_r, epoch)
            _check(loss_a, epoch)
            if phase == "R":
                adam_step(recon_model.params(), grads_r, opt_r)
            else:
                adam_step(scorer.params(), grads_a, opt_a)
            lr_vals.append(loss_r)
            la_vals.append(loss_a)
        records.append(TrainRecord(epoch, phase, float(np.mean(lr_vals)), float(np.mean(la_vals)),
                                   (time.perf_counter() - t0) * 1e3))
    return recon_model, scorer, records


def save_models(path, recon_model=None, scorer=None):
    sections = {}
    if recon_model is not None:
        sections["PFLT"] = recon_model.to_arrays()
    if scorer is not None:
        sections["SCOR"] = scorer.to_arrays()
    write_checkpoint(path, sections)


def load_models(path):
    """Returns ``(recon_model_or_None, scorer_or_None)``."""
    sections = read_checkpoint(path)
    pf = PostFilterModel.from_arrays(sections["PFLT"]) if "PFLT" in sections else None
    sc = ScorerModel.from_arrays(sections["SCOR"]) if "SCOR" in sections else None
    return pf, sc
