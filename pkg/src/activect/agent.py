"""The sampling agent: reliability targets, a per-view scorer and
window-constrained top-k selection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .errors import ConfigurationError, ExhaustionError
from .tomo import AngleSet, angular_distances, forward_project

__all__ = [
    "reliability_score",
    "reliability_scores",
    "ScorerModel",
    "OracleScorer",
    "scorer_forward",
    "scorer_backward",
    "score_all_candidates",
    "SelectionState",
    "Selection",
    "select_topk_in_range",
]

_LOGIT_CLIP = 30.0


def reliability_scores(est_rows, gt_rows):
    """Row-wise ``exp(-||est - gt||^2 / D)`` for ``(N, D)`` arrays.

    The value is 1 exactly when the rows are identical; otherwise it is kept
    strictly below 1 and strictly above 0 even when the float computation
    would round to one of the endpoints.
    """
    est = np.asarray(est_rows, dtype=np.float64)
    gt = np.asarray(gt_rows, dtype=np.float64)
    if est.shape != gt.shape:
        raise ConfigurationError(f"row shape mismatch {est.shape} vs {gt.shape}")
    est2, gt2 = np.atleast_2d(est), np.atleast_2d(gt)
    diff = est2 - gt2
    out = np.exp(-np.einsum("ij,ij->i", diff, diff) / est2.shape[1])
    differs = np.any(est2 != gt2, axis=1)
    out = np.where(differs, np.minimum(out, np.nextafter(1.0, 0.0)), 1.0)
    return np.maximum(out, np.finfo(np.float64).tiny)


def reliability_score(row_est, row_gt):
    """Reliability of one estimated projection row against the true row."""
    row_est, row_gt = np.ravel(row_est), np.ravel(row_gt)
    if row_est.size != row_gt.size:
        raise ConfigurationError("rows must have equal length")
    return float(reliability_scores(row_est[None], row_gt[None])[0])


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ScorerModel:
    """Fully connected scorer ``D -> 64 -> 32 -> 1`` with a sigmoid output.

    Rows are divided by ``input_scale`` before entering the network.
    """

    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)
    input_scale: float = 1.0

    @classmethod
    def create(cls, num_detectors, hidden=(64, 32), seed=0, input_scale=1.0):
        rng = np.random.default_rng(seed)
        sizes = [num_detectors, *hidden, 1]
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            ws.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_out, fan_in)))
            bs.append(np.zeros(fan_out))
        return cls(ws, bs, float(input_scale))

    @classmethod
    def constant(cls, num_detectors, hidden=(64, 32)):
        """All-zero parameters: every row scores exactly 0.5."""
        m = cls.create(num_detectors, hidden)
        return cls([np.zeros_like(w) for w in m.weights], [np.zeros_like(b) for b in m.biases], 1.0)

    @property
    def num_detectors(self):
        return self.weights[0].shape[1]

    def params(self):
        out = {}
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{l}"] = w
            out[f"b{l}"] = b
        return out

    def copy(self):
        return ScorerModel([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                           self.input_scale)

    def score_rows(self, rows):
        return scorer_forward(self, rows)

    def to_arrays(self):
        return [np.array([self.input_scale])] + [a for wb in zip(self.weights, self.biases) for a in wb]

    @classmethod
    def from_arrays(cls, arrays):
        scale = float(np.ravel(arrays[0])[0])
        rest = arrays[1:]
        return cls([np.array(a) for a in rest[0::2]], [np.array(a).reshape(-1) for a in rest[1::2]], scale)


class OracleScorer:
    """Scores rows by their reliability against the true full sinogram.

    Needs the ground truth, so it is only a reference policy component.
    """

    def __init__(self, gt_rows):
        self.gt_rows = np.asarray(gt_rows, dtype=np.float64)

    def score_rows(self, rows):
        return reliability_scores(rows, self.gt_rows)


def _forward_cache(model, rows):
    x = np.atleast_2d(np.asarray(rows, dtype=np.float64)) / model.input_scale
    if x.shape[1] != model.num_detectors:
        raise ConfigurationError(f"scorer expects rows of length {model.num_detectors}")
    acts = [x]
    n = len(model.weights)
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w.T + b
        acts.append(np.maximum(z, 0.0) if l < n - 1 else z)
    logit = acts[-1][:, 0]
    clipped = np.clip(logit, -_LOGIT_CLIP, _LOGIT_CLIP)
    return _sigmoid(clipped), acts, np.abs(logit) < _LOGIT_CLIP


def scorer_forward(model, rows):
    """Confidence in ``(0, 1)`` for each row of an ``(N, D)`` array (or one row)."""
    out, _, _ = _forward_cache(model, rows)
    return out if np.ndim(rows) == 2 else float(out[0])


def scorer_backward(model, rows, upstream):
    """Parameter gradients of ``sum(upstream * scorer_forward(model, rows))``."""
    s, acts, live = _forward_cache(model, rows)
    g = np.atleast_1d(np.asarray(upstream, dtype=np.float64)) * s * (1.0 - s) * live
    g = g[:, None]
    grads = {}
    n = len(model.weights)
    for l in range(n - 1, -1, -1):
        grads[f"w{l}"] = g.T @ acts[l]
        grads[f"b{l}"] = g.sum(axis=0)
        if l > 0:
            g = (g @ model.weights[l]) * (acts[l] > 0.0)
    return grads


def score_all_candidates(u_hat, model, geom):
    """Project the current estimate at all ``T`` views and score each row."""
    rows = forward_project(u_hat, geom).data
    return np.asarray(model.score_rows(rows), dtype=np.float64)


@dataclass(frozen=True)
class SelectionState:
    sampled: AngleSet
    last_selected: Optional[int] = None
    window: tuple = (5.0, 10.0)

    def __post_init__(self):
        ap, aq = self.window
        if not 0.0 <= ap < aq:
            raise ConfigurationError("window needs 0 <= alpha_p < alpha_q")
        if self.last_selected is not None and self.last_selected not in self.sampled:
            raise ConfigurationError("last selected angle must be among the sampled angles")


class Selection(NamedTuple):
    angles: AngleSet
    ranked: tuple        # chosen indices, best score first
    fallback: bool
    window: tuple        # window actually used


def _feasible(state, geom, ap, aq):
    free = np.ones(geom.num_angles, dtype=bool)
    free[state.sampled.indices] = False
    if state.last_selected is None:
        return free
    d = angular_distances(state.last_selected, geom)
    return free & (d >= ap) & (d <= aq)


def select_topk_in_range(scores, state, k, geom):
    """Pick the ``k`` best-scoring unsampled views inside the angular window.

    Candidates must lie between ``alpha_p`` and ``alpha_q`` degrees from the
    last selected view (any unsampled view before the first active pick).
    Ties go to the lower index.  If fewer than ``k`` candidates qualify,
    ``alpha_q`` is doubled until enough do; should even the widest window be
    short because of ``alpha_p``, the lower bound is dropped as well.  Both
    cases set ``fallback``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (geom.num_angles,):
        raise ConfigurationError("need one score per candidate view")
    if not np.all(np.isfinite(scores)):
        raise ConfigurationError("scores must be finite")
    if k < 1:
        raise ConfigurationError("k must be >= 1")
    n_free = geom.num_angles - len(state.sampled)
    if n_free == 0:
        raise ExhaustionError("all candidate views are already sampled")
    if n_free < k:
        raise ExhaustionError(f"only {n_free} unsampled views left, {k} requested")

    ap, aq = state.window
    ok = _feasible(state, geom, ap, aq)
    fallback = False
    half = geom.alpha_max / 2.0
    while ok.sum() < k:
        fallback = True
        if aq >= half:
            ap = 0.0
            ok = _feasible(state, geom, ap, aq)
            break
        aq = min(2.0 * aq, half)
        ok = _feasible(state, geom, ap, aq)

    cand = np.flatnonzero(ok)
    order = np.lexsort((cand, -scores[cand]))
    chosen = cand[order[:k]]
    return Selection(AngleSet(chosen), tuple(int(i) for i in chosen), fallback, (ap, aq))
