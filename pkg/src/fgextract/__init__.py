"""Foreground material-signature extraction for bags of intimately mixed patches."""

from .baseline import NmfConfig, NmfResult, benchmark_extract, minvol_nmf
from .datagen import GroundTruth, SynthConfig, generate_bag, snr_grid, snr_to_sigma2
from .epfit import EPFitConfig, EPFitResult, epfit, epfit_detailed
from .errors import *  # noqa: F401,F403
from .io import RunConfig, load_run_config, read_bag, read_cube, write_bag, write_cube
from .metrics import EvalRecord, angle_from_nmse, angular_difference, median_by, nmse, signature_error
from .minvolfit import (
    FitResult,
    MinVolConfig,
    block_gradients,
    minvolfit,
    minvolfit_multistart,
    minvolfit_path,
    objective_g,
    refine_unregularized,
)
from .model import (
    CTUBox,
    ModelParams,
    PatchSet,
    TightnessRatios,
    TransformParams,
    canonical_solution,
    ctu_feasible_box,
    ctu_signature,
    ctu_to_transform,
    feasible_transform_check,
    minvol_gradient_ctu,
    tightness_ratios,
    volume,
)
from .scene import LabeledCube, oracle_reference, sample_patches
from .sweep import run_sweep, write_results

__version__ = "0.1.0"
