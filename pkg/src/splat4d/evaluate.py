"""Held-out evaluation and static/dynamic separation rendering."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .core import SceneModel
from .dataset import DatasetManifest
from .metrics import psnr, ssim
from .render import RenderOptions, render_view


def evaluate_heldout(scene: SceneModel, manifest: DatasetManifest,
                     frames=None, cameras=None) -> dict:
    """PSNR / SSIM1 / SSIM2 averaged over held-out views and timestamps.

    LPIPS needs a pretrained perceptual network and is reported as "n/a".
    """
    cams = cameras if cameras is not None else manifest.heldout_cameras
    if not cams:
        raise ValueError("no held-out cameras to evaluate")
    frames = range(scene.duration_frames) if frames is None else frames
    opts = RenderOptions()
    per_cam = {}
    for cam in cams:
        vals = {"psnr": [], "ssim1": [], "ssim2": []}
        for t in frames:
            img = render_view(scene, cam, t, opts).image
            gt = manifest.load_view(cam.cam_id, t)
            vals["psnr"].append(psnr(img, gt, 1.0))
            vals["ssim1"].append(ssim(img, gt, 1.0)[0])
            vals["ssim2"].append(ssim(img, gt, 2.0)[0])
        per_cam[cam.cam_id] = {k: float(np.mean(v)) for k, v in vals.items()}
    overall = {
        k: float(np.mean([c[k] for c in per_cam.values()]))
        for k in ("psnr", "ssim1", "ssim2")
    }
    overall["lpips"] = "n/a"
    return {"per_camera": per_cam, "overall": overall}


def population_scene(scene: SceneModel, population: str) -> SceneModel:
    """A view of the scene restricted to one population."""
    from .core import DynamicSet, StaticSet
    if population == "static":
        dynamics = DynamicSet.empty(scene.sh_degree, max(scene.dynamics.n_keyframes, 2))
        return SceneModel(scene.statics, dynamics, scene.duration_frames,
                          scene.total_frames, scene.keyframe_interval)
    if population == "dynamic":
        return SceneModel(StaticSet.empty(scene.sh_degree), scene.dynamics,
                          scene.duration_frames, scene.total_frames,
                          scene.keyframe_interval)
    raise ValueError(f"unknown population {population!r}")


def render_separated(scene: SceneModel, cam, frame: int, opts=None):
    """(full, static-only, dynamic-only) images for one view."""
    opts = opts or RenderOptions()
    full = render_view(scene, cam, frame, opts).image
    static_only = render_view(population_scene(scene, "static"), cam, frame, opts).image
    dynamic_only = render_view(population_scene(scene, "dynamic"), cam, frame, opts).image
    return full, static_only, dynamic_only


def positions_at_zero(scene: SceneModel) -> tuple[np.ndarray, np.ndarray]:
    """(positions, is_dynamic) for every Gaussian at frame 0."""
    pts = [scene.statics.pivot]
    flags = [np.zeros(len(scene.statics), bool)]
    if len(scene.dynamics):
        pts.append(scene.dynamics.key_pos[:, 0, :])
        flags.append(np.ones(len(scene.dynamics), bool))
    return np.concatenate(pts, axis=0), np.concatenate(flags)


def label_agreement(scene: SceneModel, labels_doc: dict) -> dict:
    """Match generator Gaussians to the trained scene by nearest neighbor at
    t=0 and measure how many moving-object Gaussians map to dynamics.

    Returns per-family detection rates plus the mover rate the acceptance
    gate uses (families "linear"/"circular").
    """
    gen_pos = np.asarray(labels_doc["positions_t0"], float)
    labels = labels_doc["labels"]
    model_pos, model_dyn = positions_at_zero(scene)
    tree = cKDTree(model_pos)
    _, nn = tree.query(gen_pos)
    matched_dynamic = model_dyn[nn]

    by_family: dict[str, list[bool]] = {}
    for rec, hit in zip(labels, matched_dynamic):
        by_family.setdefault(rec["family"], []).append(bool(hit))
    rates = {fam: float(np.mean(v)) for fam, v in by_family.items()}
    mover = [h for rec, h in zip(labels, matched_dynamic)
             if rec["family"] in ("linear", "circular")]
    return {
        "per_family": rates,
        "mover_dynamic_rate": float(np.mean(mover)) if mover else float("nan"),
        "n_movers": len(mover),
    }
