"""
Comparing sampling policies
===========================

Acquire 15 of 180 views of an off-centre feature phantom with uniform,
random, oracle-guided active and greedy sampling, and look at where each
policy spends its views.
"""

import numpy as np

from activect import (MeasurementSource, OracleScorer, PolicyConfig, default_geometry,
                      feature_phantoms, forward_project, greedy_episode, make_roi_mask,
                      render_phantom, run_policy)

geom = default_geometry(64)
spec, roi = feature_phantoms(1, seed=0)[0]
image = render_phantom(spec, 64)
image = (image - image.min()) / (image.max() - image.min())
mask = make_roi_mask(roi, image)
source = MeasurementSource.from_image(image, geom, roi_mask=mask)

###############################################################################
# The oracle scorer knows the true sinogram, so it rates every candidate view
# by how well the current reconstruction already explains it.

oracle = OracleScorer(forward_project(image, geom).data)

policies = {
    "US": (PolicyConfig(kind="US", k_max=15), None),
    "RS": (PolicyConfig(kind="RS", k_max=15, seed=3), None),
    "SAS": (PolicyConfig(kind="SAS", k0=5, k=1, k_max=15, window=(5.0, 10.0)), oracle),
    "GDS": (PolicyConfig(kind="GDS", k0=5, k=1, k_max=15), oracle),
}
traces = {name: run_policy(source, cfg, None, sc) for name, (cfg, sc) in policies.items()}

###############################################################################
# Greedy sampling tries every remaining view at every step, which makes it
# far slower than the others.  A short budget keeps the demo quick.

traces["GS"] = greedy_episode(source, 8)

for name, tr in traces.items():
    m = tr.final_metrics
    print(f"{name:3s} views {len(tr.order):2d}  PSNR {m.psnr:6.2f} dB  RoI-PSNR {m.roi_psnr:6.2f} dB  "
          f"{tr.total_ms:8.1f} ms")

###############################################################################
# Where the views went
# --------------------
# Active picks stay inside the angular window around the previous pick, so
# they form runs of nearby angles after the uniform start.

for name in ("US", "SAS", "GS"):
    print(f"{name:3s}", sorted(traces[name].order))

###############################################################################
# Per-step quality of the active episode

print("SAS PSNR per step:", np.round([m.psnr for m in traces["SAS"].metrics], 2))
