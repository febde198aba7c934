"""Synthetic multi-view dynamic scenes with ground-truth labels.

A generator scene is built from the spec (static clutter plus a few moving
or appearing objects), rendered with the package's own renderer for every
camera and frame, and written out as a standard dataset: PNG frames, a
camera manifest, a first-frame point cloud (jittered generator means of the
Gaussians visible at frame 0), and a per-Gaussian label file recording
which population and object each generator Gaussian belongs to.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    CameraView, DynamicSet, SceneModel, StaticSet, keyframes_required,
    sh_coeff_count,
)
from .dataset import DatasetManifest, save_image
from .interp import temporal_opacities
from .ply import save_pointcloud
from .render import RenderOptions, render_view
from .sh import C0

MOTION_FAMILIES = ("linear", "circular", "window")


@dataclass
class SyntheticSceneSpec:
    seed: int = 0
    n_static: int = 260
    objects: tuple = ("circular", "circular", "window")
    gaussians_per_object: int = 12
    n_cameras: int = 8
    resolution: int = 64
    frames: int = 60
    keyframe_interval: int = 10
    rig_radius: float = 4.0
    rig_height: float = 1.2
    held_out: tuple = (0,)
    # fraction of the window an appearing object stays fully visible
    window: tuple = (0.3, 0.7)
    motion_scale: float = 1.0

    def validate(self):
        for fam in self.objects:
            if fam not in MOTION_FAMILIES:
                raise ValueError(f"unknown motion family {fam!r}")


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """world_to_camera for an x-right / y-down / z-forward camera."""
    eye = np.asarray(eye, float)
    z = np.asarray(target, float) - eye
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, float))
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    w2c = np.eye(4)
    w2c[:3, :3] = np.stack([x, y, z])
    w2c[:3, 3] = -w2c[:3, :3] @ eye
    return w2c


def camera_ring(spec: SyntheticSceneSpec) -> list[CameraView]:
    res = spec.resolution
    cams = []
    for k in range(spec.n_cameras):
        ang = 2.0 * math.pi * k / spec.n_cameras
        eye = (spec.rig_radius * math.cos(ang), spec.rig_radius * math.sin(ang), spec.rig_height)
        cams.append(CameraView(
            fx=float(res), fy=float(res), cx=res / 2.0, cy=res / 2.0,
            width=res, height=res, world_to_camera=look_at(eye, (0.0, 0.0, 0.0)),
            cam_id=k,
        ))
    return cams


def _random_colors(rng, n):
    return rng.uniform(0.25, 0.9, (n, 3))


def _sh_from_colors(colors, sh_degree, rng, view_dep=0.04):
    n = colors.shape[0]
    k = sh_coeff_count(sh_degree)
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = (colors - 0.5) / C0
    if k > 1:
        sh[:, 1:, :] = rng.normal(0.0, view_dep, (n, k - 1, 3))
    return sh


def _object_path(family, rng, t_norm, scale):
    """Object-center trajectory sampled at normalized times (K,)."""
    ang0 = rng.uniform(0, 2 * math.pi)
    r = rng.uniform(0.55, 0.95)
    center = np.array([r * math.cos(ang0), r * math.sin(ang0), rng.uniform(-0.2, 0.3)])
    if family == "window":
        return np.repeat(center[None, :], len(t_norm), axis=0)
    if family == "linear":
        vel = rng.normal(0.0, 1.0, 3)
        vel[2] *= 0.2
        vel = vel / np.linalg.norm(vel) * 1.1 * scale
        return center[None, :] + t_norm[:, None] * vel[None, :]
    # circular: arc around the rig axis through the start point
    arc = rng.uniform(2.4, 3.6) * scale           # radians swept over the video
    direction = rng.choice([-1.0, 1.0])
    ang = ang0 + direction * arc * t_norm
    out = np.stack([r * np.cos(ang), r * np.sin(ang),
                    np.full_like(ang, center[2])], axis=-1)
    return out


def build_generator_scene(spec: SyntheticSceneSpec):
    """Returns (SceneModel, labels) where labels lists one record per
    generator Gaussian: {population, object, family}."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    sh_degree = 1

    ns = spec.n_static
    pos = np.stack([
        rng.uniform(-1.4, 1.4, ns),
        rng.uniform(-1.4, 1.4, ns),
        rng.uniform(-0.6, 0.6, ns),
    ], axis=-1)
    rot = np.zeros((ns, 4))
    rot[:, 0] = 1.0
    opac = rng.uniform(0.65, 0.95, ns)
    statics = StaticSet(
        pivot=pos,
        translation=np.zeros((ns, 3)),
        log_scale=np.log(rng.uniform(0.05, 0.12, (ns, 3))),
        rotation=rot,
        opacity_logit=np.log(opac / (1 - opac)),
        sh=_sh_from_colors(_random_colors(rng, ns), sh_degree, rng),
    )
    labels = [{"population": "static", "object": "static", "family": "static"}
              for _ in range(ns)]

    n_kf = keyframes_required(spec.frames, spec.keyframe_interval)
    kf_norm = np.arange(n_kf) * spec.keyframe_interval / spec.frames
    dyn_parts = []
    for obj_id, family in enumerate(spec.objects):
        m = spec.gaussians_per_object
        path = _object_path(family, rng, kf_norm, spec.motion_scale)
        radius = 0.16 if family == "window" else 0.22
        offsets = rng.normal(0.0, radius / 2.0, (m, 3))
        key_pos = path[None, :, :] + offsets[:, None, :]
        key_rot = np.zeros((m, n_kf, 4))
        key_rot[:, :, 0] = 1.0
        if family == "window":
            a_s, a_f = spec.window
            width = 0.06
        else:
            a_s, a_f, width = 0.0, 1.0, 0.5
        op = rng.uniform(0.7, 0.95, m)
        dyn_parts.append(DynamicSet(
            key_pos=key_pos,
            key_rot=key_rot,
            log_scale=np.log(rng.uniform(0.05, 0.1, (m, 3))),
            opacity_logit=np.log(op / (1 - op)),
            sh=_sh_from_colors(_random_colors(rng, m), sh_degree, rng),
            appear_mean=np.full(m, a_s),
            appear_log_width=np.full(m, math.log(width)),
            vanish_mean=np.full(m, a_f),
            vanish_log_width=np.full(m, math.log(width)),
        ))
        labels.extend(
            {"population": "dynamic", "object": f"object{obj_id}", "family": family}
            for _ in range(m))

    dynamics = DynamicSet.empty(sh_degree, n_kf)
    for part in dyn_parts:
        dynamics = dynamics.append(part)
    scene = SceneModel(
        statics=statics, dynamics=dynamics,
        duration_frames=spec.frames, total_frames=spec.frames,
        keyframe_interval=spec.keyframe_interval,
    )
    return scene, labels


def first_frame_pointcloud(scene: SceneModel, labels, rng, jitter=0.01):
    """Generator means visible at frame 0, with small positional jitter.

    Dynamics whose temporal opacity at t=0 is below one half (not yet
    appeared) are excluded, like a first-frame reconstruction would be.
    """
    pts = [scene.statics.pivot]
    cols = [np.clip(C0 * scene.statics.sh[:, 0, :] + 0.5, 0, 1)]
    dy = scene.dynamics
    if len(dy):
        sigma0 = temporal_opacities(
            dy.appear_mean, np.exp(dy.appear_log_width),
            dy.vanish_mean, np.exp(dy.vanish_log_width), 0.0)
        vis = sigma0 >= 0.5
        pts.append(dy.key_pos[vis, 0, :])
        cols.append(np.clip(C0 * dy.sh[vis, 0, :] + 0.5, 0, 1))
    pos = np.concatenate(pts, axis=0)
    col = np.concatenate(cols, axis=0)
    return pos + rng.normal(0.0, jitter, pos.shape), col


def gen_synthetic(spec: SyntheticSceneSpec, out_dir) -> DatasetManifest:
    """Build, render, and write a full synthetic dataset."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene, labels = build_generator_scene(spec)
    cams = camera_ring(spec)
    rng = np.random.default_rng(spec.seed + 1)

    opts = RenderOptions()
    for cam in cams:
        cam_dir = out / f"cam_{cam.cam_id}"
        cam_dir.mkdir(exist_ok=True)
        for t in range(spec.frames):
            img = render_view(scene, cam, t, opts).image
            save_image(cam_dir / f"frame_{t}.png", img)

    pos, col = first_frame_pointcloud(scene, labels, rng)
    save_pointcloud(out / "points.ply", pos, col)

    with open(out / "labels.json", "w") as f:
        json.dump({
            "labels": labels,
            "positions_t0": _positions_at_zero(scene).tolist(),
            "spec": {"objects": list(spec.objects), "seed": spec.seed},
        }, f)

    manifest = DatasetManifest(
        root=out, cameras=cams, frames=spec.frames,
        pointcloud_path=out / "points.ply",
        held_out=list(spec.held_out),
        labels_path=out / "labels.json",
    )
    manifest.save()
    return manifest


def _positions_at_zero(scene: SceneModel) -> np.ndarray:
    pts = [scene.statics.pivot]
    if len(scene.dynamics):
        pts.append(scene.dynamics.key_pos[:, 0, :])
    return np.concatenate(pts, axis=0)
