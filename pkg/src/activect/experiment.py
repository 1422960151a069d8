"""Experiment grid: phantoms x policies x noise levels.

Configuration is JSON.  Top-level keys (all optional except ``policies``)::

    {
      "geometry": {"size": 64, "num_angles": 180, "alpha_max": 180.0,
                   "pixel_size": 1.0},
      "phantoms": [{"kind": "shepp_logan"},
                   {"kind": "family", "index": 2, "seed": 0},
                   {"kind": "feature", "index": 0, "seed": 0, "roi": true},
                   {"kind": "file", "path": "img.raw"},
                   {"kind": "ellipses", "ellipses": [[cx, cy, a, b, rot, value], ...],
                    "roi_ellipse": [cx, cy, a, b, rot]}],
      "policies": [{"kind": "US", "k_max": 15},
                   {"kind": "SAS", "k0": 5, "k": 1, "k_max": 15, "window": [5, 10]}],
      "noise": ["none", "L1", "L2"],
      "scorer": "oracle" | "constant" | "checkpoint",
      "checkpoint": null | "models.bin",
      "sart": {"num_iterations": 20, "relaxation": 0.5, "nonnegativity": true},
      "rs_repeats": 5,
      "timing": false,
      "seed": 0
    }

Noise levels ``L1`` and ``L2`` are 5e5 and 1e5 incident photons per bin.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .agent import OracleScorer, ScorerModel
from .errors import ActiveCTError, ConfigurationError
from .fileio import read_image, write_image, write_pgm
from .metrics import MetricReport
from .phantoms import (SHEPP_LOGAN, Ellipse, EllipsePhantom, EllipseRoI, feature_phantoms,
                       make_roi_mask, render_phantom, shepp_logan_family)
from .policies import MeasurementSource, PolicyConfig, fmt, run_policy
from .recon import SartConfig
from .tomo import default_geometry, forward_project

__all__ = ["NOISE_LEVELS", "ExperimentConfig", "run_experiment", "RESULTS_HEADER", "SUMMARY_HEADER"]

NOISE_LEVELS = {"none": None, "L1": 5e5, "L2": 1e5}

RESULTS_HEADER = "phantom,policy,noise,status,psnr,ssim,rmse,roi_psnr,roi_ssim,roi_rmse,wall_ms"
SUMMARY_HEADER = ("policy,noise,n,psnr_mean,psnr_std,ssim_mean,ssim_std,rmse_mean,rmse_std,"
                  "roi_psnr_mean,roi_psnr_std")

_TOP_KEYS = {"geometry", "phantoms", "policies", "noise", "scorer", "checkpoint", "sart",
             "rs_repeats", "timing", "seed"}
_GEOM_KEYS = {"size", "num_angles", "alpha_max", "pixel_size"}
_PHANTOM_KEYS = {"kind", "index", "seed", "roi", "path", "ellipses", "roi_ellipse", "name"}
_POLICY_KEYS = {"kind", "k0", "k", "k_max", "window", "global_window", "detail_window",
                "switch_fraction", "name"}
_SART_KEYS = {"num_iterations", "relaxation", "nonnegativity"}


def _reject_unknown(d, allowed, where):
    if not isinstance(d, dict):
        raise ConfigurationError(f"{where} must be an object")
    extra = set(d) - allowed
    if extra:
        raise ConfigurationError(f"unknown keys in {where}: {sorted(extra)}")


@dataclass
class ExperimentConfig:
    geometry: dict = field(default_factory=lambda: {"size": 64, "num_angles": 180,
                                                    "alpha_max": 180.0, "pixel_size": 1.0})
    phantoms: list = field(default_factory=lambda: [{"kind": "shepp_logan"}])
    policies: list = field(default_factory=list)
    noise: list = field(default_factory=lambda: ["none"])
    scorer: str = "oracle"
    checkpoint: Optional[str] = None
    sart: dict = field(default_factory=lambda: {"num_iterations": 20, "relaxation": 0.5,
                                                "nonnegativity": True})
    rs_repeats: int = 5
    timing: bool = False
    seed: int = 0

    def __post_init__(self):
        _reject_unknown(self.geometry, _GEOM_KEYS, "geometry")
        for p in self.phantoms:
            _reject_unknown(p, _PHANTOM_KEYS, "phantom entry")
            if p.get("kind") not in ("shepp_logan", "family", "feature", "file", "ellipses"):
                raise ConfigurationError(f"unknown phantom kind {p.get('kind')!r}")
        for p in self.policies:
            _reject_unknown(p, _POLICY_KEYS, "policy entry")
        for n in self.noise:
            if n not in NOISE_LEVELS:
                raise ConfigurationError(f"unknown noise level {n!r}")
        if self.scorer not in ("oracle", "constant", "checkpoint"):
            raise ConfigurationError(f"unknown scorer {self.scorer!r}")
        if self.scorer == "checkpoint" and not self.checkpoint:
            raise ConfigurationError("scorer 'checkpoint' needs a checkpoint path")
        _reject_unknown(self.sart, _SART_KEYS, "sart")
        if self.rs_repeats < 1:
            raise ConfigurationError("rs_repeats must be >= 1")
        # validate eagerly
        self.make_geometry()
        self.policy_configs()
        self.sart_config()

    @classmethod
    def from_dict(cls, d):
        _reject_unknown(d, _TOP_KEYS, "experiment config")
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"invalid JSON config: {e}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_json(f.read())

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def make_geometry(self):
        g = self.geometry
        return default_geometry(int(g.get("size", 64)), num_angles=int(g.get("num_angles", 180)),
                                alpha_max=float(g.get("alpha_max", 180.0)),
                                pixel_size=float(g.get("pixel_size", 1.0)))

    def sart_config(self):
        return SartConfig(**self.sart)

    def policy_configs(self):
        out = []
        for p in self.policies:
            kw = {k: v for k, v in p.items() if k != "name"}
            for key in ("window", "global_window", "detail_window"):
                if key in kw:
                    kw[key] = tuple(kw[key])
            cfg = PolicyConfig(**kw)
            name = p.get("name") or f"{cfg.kind}-{cfg.k_max}"
            out.append((name, cfg))
        names = [n for n, _ in out]
        if len(set(names)) != len(names):
            raise ConfigurationError("policy names must be unique")
        return out


def _phantom_name(i, p):
    if p.get("name"):
        return p["name"]
    kind = p["kind"]
    if kind in ("family", "feature"):
        return f"{kind}{p.get('index', 0)}s{p.get('seed', 0)}"
    if kind == "file":
        return os.path.splitext(os.path.basename(p["path"]))[0]
    return f"{kind}{i}"


def load_phantom(p, size):
    """Returns ``(image, roi_mask_or_None)`` for one phantom entry."""
    kind = p["kind"]
    roi_spec = None
    if kind == "shepp_logan":
        img = render_phantom(SHEPP_LOGAN, size)
    elif kind == "family":
        fam = shepp_logan_family(int(p.get("index", 0)) + 1, int(p.get("seed", 0)))
        img = render_phantom(fam[int(p.get("index", 0))], size)
    elif kind == "feature":
        ph, roi = feature_phantoms(int(p.get("index", 0)) + 1, int(p.get("seed", 0)))[-1]
        img = render_phantom(ph, size)
        if p.get("roi"):
            roi_spec = roi
    elif kind == "file":
        img = read_image(p["path"])
    else:
        img = render_phantom(EllipsePhantom(tuple(Ellipse(*e) for e in p["ellipses"])), size)
    if p.get("roi_ellipse"):
        roi_spec = EllipseRoI(*p["roi_ellipse"])
    if kind != "file" and img.max() > img.min():
        img = (img - img.min()) / (img.max() - img.min())
    mask = None if roi_spec is None else make_roi_mask(roi_spec, img)
    return img, mask


def _cell_seed(master, *parts):
    return int(np.random.SeedSequence([int(master), *parts]).generate_state(1, np.uint64)[0])


def _mean_report(reports):
    def avg(attr):
        vals = [getattr(r, attr) for r in reports]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))
    return MetricReport(avg("psnr"), avg("ssim"), avg("rmse"),
                        avg("roi_psnr"), avg("roi_ssim"), avg("roi_rmse"))


@dataclass
class CellResult:
    phantom: str
    policy: str
    noise: str
    report: Optional[MetricReport] = None
    wall_ms: float = math.nan
    error: Optional[str] = None
    traces: list = field(default_factory=list)
    image: Optional[np.ndarray] = None


def _run_cell(cfg, geom, models, phantom_idx, pname, img, mask, policy_name, pcfg, noise):
    res = CellResult(pname, policy_name, noise)
    try:
        photons = NOISE_LEVELS[noise]
        noise_seed = _cell_seed(cfg.seed, phantom_idx, list(NOISE_LEVELS).index(noise))
        src = MeasurementSource.from_image(img, geom, photons, noise_seed, mask)
        recon_model, ckpt_scorer = models
        if cfg.scorer == "oracle":
            scorer = OracleScorer(forward_project(img, geom).data)
        elif cfg.scorer == "constant":
            scorer = ScorerModel.constant(geom.num_detectors)
        else:
            scorer = ckpt_scorer
        sart_cfg = cfg.sart_config()
        repeats = cfg.rs_repeats if pcfg.kind == "RS" else 1
        reports, walls = [], []
        for r in range(repeats):
            run_cfg = pcfg
            if pcfg.kind == "RS":
                run_cfg = PolicyConfig(**{**asdict(pcfg), "seed": _cell_seed(cfg.seed, phantom_idx, 7919, r)})
            tr = run_policy(src, run_cfg, recon_model, scorer, sart_cfg)
            res.traces.append(tr)
            reports.append(tr.final_metrics)
            walls.append(tr.total_ms)
        res.report = _mean_report(reports)
        res.wall_ms = float(np.mean(walls))
        res.image = res.traces[0].final_image
    except ActiveCTError as e:
        res.error = f"{type(e).__name__}: {e}"
    return res


def _opt(x):
    return "" if x is None else fmt(x)


def _std(vals):
    # unbiased (n - 1) estimator; undefined for a single value
    return float(np.std(vals, ddof=1)) if len(vals) > 1 else math.nan


def run_experiment(cfg, out_dir, threads=1):
    """Run every (phantom, policy, noise) cell and write the result files.

    Writes ``results.csv`` (one row per cell), ``summary.csv`` (mean and
    unbiased std over phantoms per policy and noise level), and for each cell
    the final reconstruction (``images/*.raw`` and ``.pgm``), the episode
    trace(s) (``traces/*.csv``) and the acquired view order
    (``trajectories/*.txt``).  Outputs depend only on the configuration and
    its seed; the thread count only changes scheduling.  Returns the list of
    cell results; failed cells carry an ``error`` string.
    """
    geom = cfg.make_geometry()
    policies = cfg.policy_configs()
    models = (None, None)
    if cfg.checkpoint:
        from .training import load_models
        models = load_models(cfg.checkpoint)
        if cfg.scorer == "checkpoint" and models[1] is None:
            raise ConfigurationError("checkpoint holds no scorer section")
    phantoms = []
    for i, p in enumerate(cfg.phantoms):
        img, mask = load_phantom(p, geom.image_h)
        if img.shape != geom.shape:
            raise ConfigurationError(f"phantom {i} has shape {img.shape}, geometry wants {geom.shape}")
        phantoms.append((i, _phantom_name(i, p), img, mask))

    jobs = [(pi, pname, img, mask, name, pcfg, noise)
            for (pi, pname, img, mask) in phantoms
            for (name, pcfg) in policies
            for noise in cfg.noise]

    def work(job):
        return _run_cell(cfg, geom, models, *job)

    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    results.sort(key=lambda r: (r.phantom, r.policy, r.noise))

    os.makedirs(out_dir, exist_ok=True)
    for sub in ("images", "traces", "trajectories"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)

    buf = io.StringIO()
    buf.write(RESULTS_HEADER + "\n")
    w = csv.writer(buf, lineterminator="\n")
    for r in results:
        rep = r.report
        wall = r.wall_ms if cfg.timing else math.nan
        if rep is None:
            w.writerow([r.phantom, r.policy, r.noise, "failed", "", "", "", "", "", "", ""])
            continue
        w.writerow([r.phantom, r.policy, r.noise, "ok", fmt(rep.psnr), fmt(rep.ssim), fmt(rep.rmse),
                    _opt(rep.roi_psnr), _opt(rep.roi_ssim), _opt(rep.roi_rmse), fmt(wall)])
        stem = f"{r.phantom}_{r.policy}_{r.noise}"
        write_image(os.path.join(out_dir, "images", stem + ".raw"), r.image)
        write_pgm(os.path.join(out_dir, "images", stem + ".pgm"), np.clip(r.image, 0, 1), (0.0, 1.0))
        for k, tr in enumerate(r.traces):
            suffix = f"_r{k}" if len(r.traces) > 1 else ""
            text = tr.to_csv()
            if not cfg.timing:
                text = _blank_timing(text)
            with open(os.path.join(out_dir, "traces", stem + suffix + ".csv"), "w", newline="") as f:
                f.write(text)
            with open(os.path.join(out_dir, "trajectories", stem + suffix + ".txt"), "w") as f:
                f.write(" ".join(str(i) for i in tr.order) + "\n")
    with open(os.path.join(out_dir, "results.csv"), "w", newline="") as f:
        f.write(buf.getvalue())

    sbuf = io.StringIO()
    sbuf.write(SUMMARY_HEADER + "\n")
    w = csv.writer(sbuf, lineterminator="\n")
    for name in sorted(n for n, _ in policies):
        for noise in sorted(cfg.noise):
            reps = [r.report for r in results if r.policy == name and r.noise == noise and r.report]
            if not reps:
                continue
            row = [name, noise, len(reps)]
            for attr in ("psnr", "ssim", "rmse"):
                vals = [getattr(x, attr) for x in reps]
                row += [fmt(np.mean(vals)), fmt(_std(vals))]
            roi = [x.roi_psnr for x in reps if x.roi_psnr is not None]
            row += [fmt(np.mean(roi)), fmt(_std(roi))] if roi else ["", ""]
            w.writerow(row)
    with open(os.path.join(out_dir, "summary.csv"), "w", newline="") as f:
        f.write(sbuf.getvalue())
    return results


def _blank_timing(text):
    lines = text.splitlines()
    out = [lines[0]]
    for line in lines[1:]:
        head, _, _ = line.rpartition(",")
        out.append(head + ",nan")
    return "\n".join(out) + "\n"
