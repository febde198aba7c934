"""Explicit dynamic Gaussian splatting toolkit.

Keyframe-interpolated dynamic Gaussians (cubic Hermite positions, Slerp
rotations, two-lobe temporal opacity), a differentiable CPU tile splatting
renderer with analytic gradients, a progressive trainer that separates
static from dynamic points without supervision, and error-backtracking
pruning, plus a synthetic multi-view data harness with ground-truth labels.
"""

from .core import (
    CameraView, DynamicGaussian, DynamicSet, GaussianCommon, KeyframeTrack,
    SceneModel, StaticGaussian, StaticSet, TemporalOpacity,
    effective_covariance, validate_scene,
)
from .interp import (
    TimeQuery, chip, slerp, static_position, temporal_opacity,
    track_position, track_rotation,
)
from .render import (
    RenderOptions, RenderOutput, backtrack_errors, eval_sh, project,
    rasterize_backward, rasterize_forward, realize, render_reference,
    render_view,
)
from .metrics import psnr, ssim
from .trainer import TrainConfig, TrainState, loss, regularization, run, train_step
from .dynamics import (
    MotionScore, PruneRecord, expand_duration, extract_dynamic,
    prune_by_backtracking, score_motion,
)
from .synth import SyntheticSceneSpec, gen_synthetic
from .dataset import DatasetManifest, seed_scene
from .ply import load_pointcloud, save_pointcloud

__version__ = "0.1.0"

__all__ = [
    "CameraView", "DynamicGaussian", "DynamicSet", "GaussianCommon",
    "KeyframeTrack", "SceneModel", "StaticGaussian", "StaticSet",
    "TemporalOpacity", "effective_covariance", "validate_scene",
    "TimeQuery", "chip", "slerp", "static_position", "temporal_opacity",
    "track_position", "track_rotation",
    "RenderOptions", "RenderOutput", "backtrack_errors", "eval_sh", "project",
    "rasterize_backward", "rasterize_forward", "realize", "render_reference",
    "render_view",
    "psnr", "ssim",
    "TrainConfig", "TrainState", "loss", "regularization", "run", "train_step",
    "MotionScore", "PruneRecord", "expand_duration", "extract_dynamic",
    "prune_by_backtracking", "score_motion",
    "SyntheticSceneSpec", "gen_synthetic",
    "DatasetManifest", "seed_scene",
    "load_pointcloud", "save_pointcloud",
]
