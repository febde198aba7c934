"""Dataset manifest, image IO, and scene seeding from a point cloud.

Layout on disk::

    <root>/manifest.json
    <root>/points.ply            first-frame point cloud
    <root>/labels.json           optional ground-truth population labels
    <root>/cam_{c}/frame_{t}.png

Camera records in the manifest carry {fx, fy, cx, cy, width, height,
w2c: [16 floats row-major], id}.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from . import runtime
from .core import CameraView, DynamicSet, SceneModel, StaticSet, keyframes_required, sh_coeff_count
from .errors import ConfigError
from .ply import load_pointcloud
from .sh import C0

IMAGE_LAYOUT = "cam_{c}/frame_{t}.png"


def camera_to_record(cam: CameraView) -> dict:
    return {
        "fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy,
        "width": cam.width, "height": cam.height,
        "w2c": [float(v) for v in cam.world_to_camera.reshape(-1)],
        "id": cam.cam_id,
    }


def camera_from_record(rec: dict) -> CameraView:
    return CameraView(
        fx=rec["fx"], fy=rec["fy"], cx=rec["cx"], cy=rec["cy"],
        width=int(rec["width"]), height=int(rec["height"]),
        world_to_camera=np.array(rec["w2c"], dtype=np.float64).reshape(4, 4),
        cam_id=int(rec["id"]),
    )


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_image(path, image: np.ndarray):
    arr = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr).save(path)


@dataclass
class DatasetManifest:
    root: Path
    cameras: list[CameraView]
    frames: int
    pointcloud_path: Path
    held_out: list[int] = field(default_factory=list)
    labels_path: Path | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        root = path if path.is_dir() else path.parent
        with open(root / "manifest.json") as f:
            doc = json.load(f)
        labels = root / doc["labels"] if doc.get("labels") else None
        return cls(
            root=root,
            cameras=[camera_from_record(r) for r in doc["cameras"]],
            frames=int(doc["frames"]),
            pointcloud_path=root / doc["pointcloud"],
            held_out=[int(c) for c in doc.get("held_out", [])],
            labels_path=labels,
        )

    def save(self):
        doc = {
            "frames": self.frames,
            "image_layout": IMAGE_LAYOUT,
            "pointcloud": self.pointcloud_path.name,
            "held_out": self.held_out,
            "labels": self.labels_path.name if self.labels_path else None,
            "cameras": [camera_to_record(c) for c in self.cameras],
        }
        with open(self.root / "manifest.json", "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)

    # ------------------------------------------------------------------

    def image_path(self, cam_id: int, frame: int) -> Path:
        return self.root / IMAGE_LAYOUT.format(c=cam_id, t=frame)

    def validate_images(self):
        """Fail fast before training if any referenced image is missing."""
        missing = []
        for cam in self.cameras:
            for t in range(self.frames):
                p = self.image_path(cam.cam_id, t)
                if not p.exists():
                    missing.append(str(p))
        if missing:
            head = ", ".join(missing[:4])
            raise ConfigError(f"{len(missing)} dataset images missing (e.g. {head})")
        if not self.pointcloud_path.exists():
            raise ConfigError(f"point cloud missing: {self.pointcloud_path}")

    def load_view(self, cam_id: int, frame: int) -> np.ndarray:
        key = (cam_id, frame)
        if key not in self._cache:
            self._cache[key] = load_image(self.image_path(cam_id, frame))
        return self._cache[key]

    def preload(self, cam_ids=None):
        """Read-only parallel image load into the cache."""
        cams = [c.cam_id for c in self.cameras] if cam_ids is None else list(cam_ids)
        keys = [(c, t) for c in cams for t in range(self.frames)]
        with ThreadPoolExecutor(max_workers=runtime.num_threads()) as pool:
            for key, img in zip(keys, pool.map(lambda k: load_image(self.image_path(*k)), keys)):
                self._cache[key] = img

    @property
    def train_cameras(self) -> list[CameraView]:
        held = set(self.held_out)
        return [c for c in self.cameras if c.cam_id not in held]

    @property
    def heldout_cameras(self) -> list[CameraView]:
        held = set(self.held_out)
        return [c for c in self.cameras if c.cam_id in held]

    def load_labels(self):
        if self.labels_path is None or not Path(self.labels_path).exists():
            return None
        with open(self.labels_path) as f:
            return json.load(f)

    def camera_extent(self) -> float:
        centers = np.stack([c.center for c in self.cameras])
        rad = np.linalg.norm(centers - centers.mean(axis=0), axis=-1).max()
        return float(1.1 * max(rad, 1e-3))


# ---------------------------------------------------------------------------
# seeding
# ---------------------------------------------------------------------------

def knn_mean_distance(points: np.ndarray, k: int = 3) -> np.ndarray:
    """Mean distance to the k nearest neighbors (capped at N-1 of them)."""
    n = points.shape[0]
    if n == 1:
        return np.full(1, 0.1)
    kk = min(k, n - 1)
    tree = cKDTree(points)
    dist, _ = tree.query(points, k=kk + 1)  # first hit is the point itself
    return dist[:, 1:].mean(axis=1)


def seed_scene(positions: np.ndarray, colors: np.ndarray, *,
               total_frames: int, initial_duration: int,
               keyframe_interval: int, sh_degree: int = 1) -> SceneModel:
    """All-static scene from a point cloud.

    Scales come from the mean distance to the 3 nearest neighbors
    (isotropic), translations start at zero, rotations at identity, and
    opacity at an effective 0.1.  Colors seed the SH DC band.
    """
    n = positions.shape[0]
    k = sh_coeff_count(sh_degree)
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = (np.asarray(colors) - 0.5) / C0
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    mean_d = np.maximum(knn_mean_distance(positions), 1e-4)
    statics = StaticSet(
        pivot=np.asarray(positions, np.float64),
        translation=np.zeros((n, 3)),
        log_scale=np.log(mean_d)[:, None].repeat(3, axis=1),
        rotation=rot,
        opacity_logit=np.full(n, math.log(0.1 / 0.9)),
        sh=sh,
    )
    return SceneModel(
        statics=statics,
        dynamics=DynamicSet.empty(sh_degree, keyframes_required(initial_duration, keyframe_interval)),
        duration_frames=int(initial_duration),
        total_frames=int(total_frames),
        keyframe_interval=int(keyframe_interval),
    )


def seed_from_dataset(manifest: DatasetManifest, *, initial_duration: int,
                      keyframe_interval: int, sh_degree: int = 1) -> SceneModel:
    pos, col = load_pointcloud(manifest.pointcloud_path)
    return seed_scene(
        pos, col,
        total_frames=manifest.frames,
        initial_duration=initial_duration,
        keyframe_interval=keyframe_interval,
        sh_degree=sh_degree,
    )
