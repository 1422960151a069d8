"""
Scanning a phantom and reconstructing it
========================================

Render a Shepp-Logan phantom, measure it along a handful of uniformly
spaced views and compare the two classical reconstructors.
"""

import numpy as np

from activect import (default_geometry, fbp, forward_project, image_metrics, sart,
                      shepp_logan, uniform_angles)
from activect.recon import SartConfig

# A 64x64 image, 180 candidate views at 1 degree and a detector that spans
# the image diagonal.
geom = default_geometry(64)
image = shepp_logan(64)
print(geom)

###############################################################################
# Sparse acquisition
# ------------------
# Only 30 of the 180 rows are measured.

views = uniform_angles(30, geom.num_angles)
sino = forward_project(image, geom, views)
print("measured views:", list(views)[:8], "...")
print("sinogram shape:", sino.data.shape)

###############################################################################
# FBP versus SART
# ---------------
# FBP is fast but streaky at this sparsity; SART warm-started from FBP cleans
# most of the streaks up.

u_fbp = fbp(sino)
u_sart = sart(sino, init=u_fbp, cfg=SartConfig(num_iterations=20))
for name, u in (("FBP", u_fbp), ("SART", u_sart)):
    m = image_metrics(u, image)
    print(f"{name:5s} PSNR {m.psnr:6.2f} dB  SSIM {m.ssim:.3f}  RMSE {m.rmse:.4f}")

###############################################################################
# More views help
# ---------------

for k in (15, 30, 60, 90, 180):
    u = fbp(forward_project(image, geom, uniform_angles(k, geom.num_angles)))
    print(f"{k:3d} views: FBP PSNR {image_metrics(u, image).psnr:6.2f} dB")

print("value range of the SART image:", float(np.min(u_sart)), float(np.max(u_sart)))
