"""Central finite-difference checks for every hand-written gradient."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .agent import ScorerModel, scorer_backward, scorer_forward
from .recon import PostFilterModel, postfilter_backward, postfilter_forward
from .training import loss_agent, loss_recon, loss_recon_roi

__all__ = ["GradResult", "relative_error", "numeric_grad", "run_gradcheck", "STEP", "TOLERANCE"]

STEP = 1e-5
TOLERANCE = 1e-4


class GradResult(NamedTuple):
    name: str
    rel_err: float

    @property
    def ok(self):
        return self.rel_err < TOLERANCE


def relative_error(analytic, numeric):
    """``||a - n|| / max(||a|| + ||n||, tiny)``."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), np.finfo(np.float64).tiny)
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(f, x, step=STEP):
    """Central differences of scalar ``f()`` with respect to array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * step)
    return g


def _postfilter_checks(rng):
    model = PostFilterModel.create(seed=int(rng.integers(1 << 31)))
    params = model.params()
    # the last layer starts at zero; move it so every path carries gradient
    params["w1"][...] = rng.normal(0.0, 0.05, params["w1"].shape)
    params["b1"][...] = rng.normal(0.0, 0.05, params["b1"].shape)
    u = rng.random((12, 12))
    r = rng.normal(size=u.shape)

    def f():
        return float(np.sum(r * postfilter_forward(model, u)))

    grads, gin = postfilter_backward(model, u, r)
    out = [GradResult(f"postfilter.{k}", relative_error(grads[k], numeric_grad(f, params[k])))
           for k in sorted(params)]
    out.append(GradResult("postfilter.input", relative_error(gin, numeric_grad(f, u))))
    return out


def _scorer_checks(rng, num_detectors=31):
    model = ScorerModel.create(num_detectors, seed=int(rng.integers(1 << 31)), input_scale=3.0)
    rows = rng.normal(size=(6, num_detectors))
    r = rng.normal(size=6)
    params = model.params()

    def f():
        return float(np.sum(r * scorer_forward(model, rows)))

    grads = scorer_backward(model, rows, r)
    return [GradResult(f"scorer.{k}", relative_error(grads[k], numeric_grad(f, params[k])))
            for k in sorted(params)]


def _loss_checks(rng):
    u = rng.random((10, 10))
    gt = rng.random((10, 10))
    mask = (rng.random((10, 10)) < 0.3).astype(np.uint8)
    s = rng.random(20)
    t = rng.random(20)
    out = []
    _, g = loss_recon(u, gt)
    out.append(GradResult("loss_recon", relative_error(g, numeric_grad(lambda: loss_recon(u, gt)[0], u))))
    _, g = loss_recon_roi(u, gt, mask)
    out.append(GradResult("loss_recon_roi", relative_error(
        g, numeric_grad(lambda: loss_recon_roi(u, gt, mask)[0], u))))
    _, g = loss_agent(s, t)
    out.append(GradResult("loss_agent", relative_error(g, numeric_grad(lambda: loss_agent(s, t)[0], s))))
    return out


def run_gradcheck(seed=0):
    """Check post-filter, scorer and loss gradients; returns a list of :class:`GradResult`."""
    rng = np.random.default_rng(seed)
    return _postfilter_checks(rng) + _scorer_checks(rng) + _loss_checks(rng)
