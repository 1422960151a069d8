"""Active sinogram sampling for sparse-view CT at desk scale.

The package covers a parallel-beam projector and noise model (:mod:`tomo`),
phantoms and file formats (:mod:`phantoms`, :mod:`fileio`), FBP/SART plus a
trainable post-filter (:mod:`recon`), the view-scoring agent (:mod:`agent`),
sampling policies (:mod:`policies`), alternating training (:mod:`training`)
and the metrics and experiment harness (:mod:`metrics`, :mod:`experiment`).
"""

from .agent import (OracleScorer, ScorerModel, SelectionState, reliability_score,
                    reliability_scores, score_all_candidates, select_topk_in_range)
from .errors import (ActiveCTError, BoundsError, ConfigurationError, DivergenceError,
                     ExhaustionError, FormatError, NumericalError)
from .experiment import ExperimentConfig, run_experiment
from .metrics import MetricReport, image_metrics, psnr, rmse, roi_metrics, ssim
from .phantoms import (SHEPP_LOGAN, Ellipse, EllipsePhantom, EllipseRoI, ThresholdRoI,
                       feature_phantoms, make_roi_mask, render_phantom, shepp_logan,
                       shepp_logan_family)
from .policies import (MeasurementSource, PolicyConfig, greedy_episode, random_angles,
                       run_active_episode, run_policy, uniform_angles)
from .recon import PostFilterModel, SartConfig, classical_reconstruct, fbp, reconstruct, sart
from .tomo import (AngleSet, Geometry, Sinogram, add_poisson_noise, backproject,
                   default_geometry, forward_project)
from .training import TrainConfig, load_models, save_models, train_alternating

__version__ = "0.1.0"
