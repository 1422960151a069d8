"""
Alternating training of the reconstructor and the scorer
========================================================

Train the post-filter and the view scorer on a few Shepp-Logan variants,
save them, and use the trained pair on an unseen phantom.
"""

import tempfile
from pathlib import Path

from activect import (MeasurementSource, PolicyConfig, ScorerModel, TrainConfig, run_policy,
                      default_geometry, load_models, render_phantom, save_models,
                      shepp_logan_family, train_alternating)
from activect.training import TRAIN_POLICY, log_csv

size = 32
geom = default_geometry(size)
members = shepp_logan_family(4, seed=0)
images = [render_phantom(p, size) for p in members]
dataset = [((im - im.min()) / (im.max() - im.min()), None) for im in images]

###############################################################################
# Even epochs update the reconstructor, odd epochs update the scorer.  Both
# losses are logged every epoch.

recon_model, scorer, records = train_alternating(
    dataset, TrainConfig(epochs=6, lr_r=1e-3, lr_a=1e-3), TRAIN_POLICY, geom)
for r in records:
    print(f"epoch {r.epoch}  phase {r.phase}  L_R {r.loss_r:.5f}  L_A {r.loss_a:.5f}")
print(log_csv(records).splitlines()[0])

###############################################################################
# Checkpoints are a small binary container holding both models.

path = Path(tempfile.mkdtemp()) / "models.bin"
save_models(path, recon_model, scorer)
recon_model, scorer = load_models(path)
print("checkpoint size:", path.stat().st_size, "bytes")

###############################################################################
# An unseen family member, scanned with the trained scorer and with a scorer
# that rates every view the same.

held = render_phantom(shepp_logan_family(5, seed=0)[4], size)
held = (held - held.min()) / (held.max() - held.min())
source = MeasurementSource.from_image(held, geom)
sas = PolicyConfig(kind="SAS", k0=5, k=1, k_max=15, window=(5.0, 10.0))

for name, sc in (("trained", scorer), ("constant", ScorerModel.constant(geom.num_detectors))):
    print(f"{name:8s} scorer: PSNR {run_policy(source, sas, recon_model, sc).final_metrics.psnr:.2f} dB")
