"""Command-line entry point.

``--config`` takes the JSON experiment schema documented in
:mod:`activect.experiment`; subcommands other than ``compare`` read only its
``geometry``, ``sart``, ``checkpoint`` and ``seed`` entries.  Exit status is
0 on success, 1 when experiment cells failed and 2 on configuration or input
errors.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .agent import OracleScorer, ScorerModel
from .errors import ActiveCTError, ConfigurationError
from .experiment import NOISE_LEVELS, ExperimentConfig, load_phantom, run_experiment
from .fileio import read_image, read_sinogram, write_image, write_pgm, write_sinogram
from .gradcheck import run_gradcheck
from .phantoms import feature_phantoms, make_roi_mask, render_phantom, shepp_logan_family
from .policies import MeasurementSource, PolicyConfig, random_angles, run_policy, uniform_angles
from .recon import classical_reconstruct, fbp, reconstruct
from .tomo import AngleSet, add_poisson_noise, default_geometry, forward_project

EXIT_OK, EXIT_CELLS, EXIT_CONFIG = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="activect", description="Active sinogram sampling for sparse-view CT.")
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="write a phantom image")
    s.add_argument("--kind", choices=("shepp_logan", "family", "feature"), default="shepp_logan")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--size", type=int)

    s = sub.add_parser("scan", help="forward-project an image, optionally with Poisson noise")
    s.add_argument("--image", required=True, help="raw image file")
    s.add_argument("--views", default="all", help="'all', 'uniform:K', 'random:K' or comma-separated indices")
    s.add_argument("--noise", choices=tuple(NOISE_LEVELS), default="none")
    s.add_argument("--photons", type=float, help="incident photons per bin (overrides --noise)")

    s = sub.add_parser("reconstruct", help="reconstruct a raw sinogram file")
    s.add_argument("--sinogram", required=True)
    s.add_argument("--method", choices=("fbp", "sart", "model"), default="sart")
    s.add_argument("--filter", choices=("ramp", "hann"), default="ramp")

    s = sub.add_parser("train", help="alternating training of post-filter and scorer")
    s.add_argument("--phantoms", type=int, default=5, help="number of training phantoms")
    s.add_argument("--size", type=int)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--lr-r", type=float, default=1e-4)
    s.add_argument("--lr-a", type=float, default=2e-4)
    s.add_argument("--roi", action="store_true", help="train on feature phantoms with the RoI loss")

    s = sub.add_parser("run-policy", help="run one sampling episode")
    s.add_argument("--image", help="raw image file (default: Shepp-Logan)")
    s.add_argument("--policy", choices=("US", "RS", "SAS", "GDS", "GS"), default="SAS")
    s.add_argument("--k0", type=int, default=5)
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--k-max", type=int, default=15)
    s.add_argument("--window", type=float, nargs=2, default=(5.0, 10.0))
    s.add_argument("--scorer", choices=("oracle", "constant", "checkpoint"), default="oracle")
    s.add_argument("--noise", choices=tuple(NOISE_LEVELS), default="none")

    sub.add_parser("compare", help="run the experiment grid from --config")

    sub.add_parser("gradcheck", help="finite-difference gradient checks")
    return p


def _load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        d = cfg.to_dict()
        d["seed"] = args.seed
        cfg = ExperimentConfig.from_dict(d)
    return cfg


def _save_image(out, stem, img):
    write_image(os.path.join(out, stem + ".raw"), img)
    lo, hi = float(img.min()), float(img.max())
    write_pgm(os.path.join(out, stem + ".pgm"), img, (lo, hi if hi > lo else lo + 1.0))


def _parse_views(text, T, seed):
    if text == "all":
        return AngleSet(range(T), T)
    kind, _, n = text.partition(":")
    if kind == "uniform" and n:
        return uniform_angles(int(n), T)
    if kind == "random" and n:
        return random_angles(int(n), T, seed)
    try:
        return AngleSet([int(v) for v in text.split(",")], T)
    except ValueError:
        raise ConfigurationError(f"cannot parse views {text!r}") from None


def _models(cfg):
    if not cfg.checkpoint:
        return None, None
    from .training import load_models
    return load_models(cfg.checkpoint)


def cmd_phantom(args, cfg):
    size = args.size or cfg.make_geometry().image_h
    if args.kind == "feature":
        img, mask = load_phantom({"kind": "feature", "index": args.index, "seed": cfg.seed, "roi": True}, size)
        write_pgm(os.path.join(args.out, "roi_mask.pgm"), mask.astype(np.float64), (0.0, 1.0))
    elif args.kind == "family":
        img, _ = load_phantom({"kind": "family", "index": args.index, "seed": cfg.seed}, size)
    else:
        img, _ = load_phantom({"kind": "shepp_logan"}, size)
    _save_image(args.out, "phantom", img)
    print(f"wrote {size}x{size} phantom to {args.out}")
    return EXIT_OK


def cmd_scan(args, cfg):
    img = read_image(args.image)
    g = cfg.make_geometry()
    geom = default_geometry(img.shape[0], img.shape[1], g.num_angles, g.alpha_max, g.pixel_size)
    views = _parse_views(args.views, geom.num_angles, cfg.seed)
    sino = forward_project(img, geom, views)
    photons = args.photons if args.photons is not None else NOISE_LEVELS[args.noise]
    if photons is not None:
        sino = add_poisson_noise(sino, photons, cfg.seed)
    write_sinogram(os.path.join(args.out, "sinogram.raw"), sino)
    print(f"wrote {len(sino)} views x {geom.num_detectors} bins to {args.out}")
    return EXIT_OK


def cmd_reconstruct(args, cfg):
    sino = read_sinogram(args.sinogram)
    scfg = cfg.sart_config()
    if args.method == "fbp":
        img = fbp(sino, filter=args.filter)
    elif args.method == "sart":
        img = classical_reconstruct(sino, cfg=scfg, filter=args.filter)
    else:
        model, _ = _models(cfg)
        if model is None:
            raise ConfigurationError("method 'model' needs a checkpoint with a post-filter")
        img = reconstruct(sino, model=model, cfg=scfg, filter=args.filter)
    _save_image(args.out, "recon", img)
    print(f"wrote {img.shape[0]}x{img.shape[1]} reconstruction to {args.out}")
    return EXIT_OK


def cmd_train(args, cfg):
    from .training import TRAIN_POLICY, TrainConfig, log_csv, save_models, train_alternating
    geom = cfg.make_geometry()
    if args.size:
        geom = default_geometry(args.size, num_angles=geom.num_angles, alpha_max=geom.alpha_max)
    size = geom.image_h
    if args.roi:
        data = []
        for ph, roi in feature_phantoms(args.phantoms, cfg.seed):
            img = render_phantom(ph, size)
            data.append((img, make_roi_mask(roi, img)))
    else:
        data = [(render_phantom(ph, size), None) for ph in shepp_logan_family(args.phantoms, cfg.seed)]
    data = [((im - im.min()) / (im.max() - im.min()), m) for im, m in data]
    tcfg = TrainConfig(epochs=args.epochs, lr_r=args.lr_r, lr_a=args.lr_a, roi=args.roi,
                       seed=cfg.seed, sart=cfg.sart_config())
    init_pf, init_sc = _models(cfg)
    pf, sc, records = train_alternating(data, tcfg, TRAIN_POLICY, geom, init_pf, init_sc)
    save_models(os.path.join(args.out, "models.bin"), pf, sc)
    with open(os.path.join(args.out, "train_log.csv"), "w", newline="") as f:
        f.write(log_csv(records))
    for r in records:
        print(f"epoch {r.epoch:3d} {r.phase}  L_R {r.loss_r:.6f}  L_A {r.loss_a:.6f}")
    return EXIT_OK


def cmd_run_policy(args, cfg):
    geom = cfg.make_geometry()
    if args.image:
        img = read_image(args.image)
        if img.shape != geom.shape:
            raise ConfigurationError(f"image shape {img.shape} differs from geometry {geom.shape}")
    else:
        img, _ = load_phantom({"kind": "shepp_logan"}, geom.image_h)
    pcfg = PolicyConfig(kind=args.policy, k0=args.k0, k=args.k, k_max=args.k_max,
                        window=tuple(args.window), seed=cfg.seed)
    src = MeasurementSource.from_image(img, geom, NOISE_LEVELS[args.noise], cfg.seed)
    pf, ckpt_scorer = _models(cfg)
    if args.scorer == "oracle":
        scorer = OracleScorer(forward_project(img, geom).data)
    elif args.scorer == "constant":
        scorer = ScorerModel.constant(geom.num_detectors)
    else:
        if ckpt_scorer is None:
            raise ConfigurationError("scorer 'checkpoint' needs a checkpoint with a scorer")
        scorer = ckpt_scorer
    tr = run_policy(src, pcfg, pf, scorer, cfg.sart_config())
    with open(os.path.join(args.out, "trace.csv"), "w", newline="") as f:
        f.write(tr.to_csv())
    with open(os.path.join(args.out, "trajectory.txt"), "w") as f:
        f.write(" ".join(str(i) for i in tr.order) + "\n")
    _save_image(args.out, "final", tr.final_image)
    m = tr.final_metrics
    print(f"{args.policy}: {len(tr.picks)} views  PSNR {m.psnr:.3f} dB  SSIM {m.ssim:.4f}  "
          f"RMSE {m.rmse:.5f}  {tr.total_ms:.1f} ms")
    return EXIT_OK


def cmd_compare(args, cfg):
    if not args.config:
        raise ConfigurationError("compare needs --config")
    results = run_experiment(cfg, args.out, threads=args.threads)
    failed = [r for r in results if r.error]
    for r in failed:
        print(f"cell {r.phantom}/{r.policy}/{r.noise} failed: {r.error}", file=sys.stderr)
    print(f"{len(results) - len(failed)} of {len(results)} cells completed; results in {args.out}")
    return EXIT_CELLS if failed else EXIT_OK


def cmd_gradcheck(args, cfg):
    results = run_gradcheck(cfg.seed)
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:24s} rel err {r.rel_err:.3e}")
    return EXIT_OK if all(r.ok for r in results) else EXIT_CELLS


_COMMANDS = {
    "phantom": cmd_phantom,
    "scan": cmd_scan,
    "reconstruct": cmd_reconstruct,
    "train": cmd_train,
    "run-policy": cmd_run_policy,
    "compare": cmd_compare,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        cfg = _load_config(args)
        os.makedirs(args.out, exist_ok=True)
        return _COMMANDS[args.command](args, cfg)
    except (ActiveCTError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
