"""Scene representation: Gaussian populations, cameras, and their invariants.

Conventions used throughout the package:

* quaternions are (w, x, y, z) and kept unit-norm by projection after
  every parameter update;
* scales and temporal-opacity widths are stored in log domain, opacity in
  logit domain, so plain gradient descent stays unconstrained;
* time is normalized by the *current* training duration: t' = frame / l.

All containers are plain numpy struct-of-arrays.  Readers treat them as
immutable snapshots; only the trainer's exclusive update phase mutates
them, so concurrent reads need no synchronization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

WIDTH_FLOOR = 1e-4
LOG_WIDTH_FLOOR = math.log(WIDTH_FLOOR)


# ---------------------------------------------------------------------------
# quaternion / covariance math
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return q / |q| along the last axis."""
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices (..., 3, 3) from unit quaternions (..., 4)."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_backward(q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. the rotation matrix back to the unit quaternion.

    `q` must already be unit-norm; the normalization chain is applied
    separately by :func:`normalize_backward`.
    """
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    g = np.empty_like(q)
    # dR/dw : 2 * [[0,-z,y],[z,0,-x],[-y,x,0]]
    g[..., 0] = 2 * (
        -z * dR[..., 0, 1] + y * dR[..., 0, 2]
        + z * dR[..., 1, 0] - x * dR[..., 1, 2]
        - y * dR[..., 2, 0] + x * dR[..., 2, 1]
    )
    # dR/dx : 2 * [[0,y,z],[y,-2x,-w],[z,w,-2x]]
    g[..., 1] = 2 * (
        y * dR[..., 0, 1] + z * dR[..., 0, 2]
        + y * dR[..., 1, 0] - 2 * x * dR[..., 1, 1] - w * dR[..., 1, 2]
        + z * dR[..., 2, 0] + w * dR[..., 2, 1] - 2 * x * dR[..., 2, 2]
    )
    # dR/dy : 2 * [[-2y,x,w],[x,0,z],[-w,z,-2y]]
    g[..., 2] = 2 * (
        -2 * y * dR[..., 0, 0] + x * dR[..., 0, 1] + w * dR[..., 0, 2]
        + x * dR[..., 1, 0] + z * dR[..., 1, 2]
        - w * dR[..., 2, 0] + z * dR[..., 2, 1] - 2 * y * dR[..., 2, 2]
    )
    # dR/dz : 2 * [[-2z,-w,x],[w,-2z,y],[x,y,0]]
    g[..., 3] = 2 * (
        -2 * z * dR[..., 0, 0] - w * dR[..., 0, 1] + x * dR[..., 0, 2]
        + w * dR[..., 1, 0] - 2 * z * dR[..., 1, 1] + y * dR[..., 1, 2]
        + x * dR[..., 2, 0] + y * dR[..., 2, 1]
    )
    return g


def normalize_backward(raw: np.ndarray, d_unit: np.ndarray) -> np.ndarray:
    """Chain a gradient through v -> v/|v| back to the raw vector."""
    norm = np.linalg.norm(raw, axis=-1, keepdims=True)
    unit = raw / norm
    proj = np.sum(unit * d_unit, axis=-1, keepdims=True)
    return (d_unit - unit * proj) / norm


def covariance_from(log_scale: np.ndarray, quat: np.ndarray) -> np.ndarray:
    """Sigma = R S S^T R^T with S = diag(exp(log_scale)), R from `quat`.

    `quat` is normalized internally; output is symmetric PSD by construction.
    """
    R = quat_to_rotmat(quat_normalize(quat))
    S = np.exp(log_scale)
    L = R * S[..., None, :]  # R @ diag(S)
    return L @ np.swapaxes(L, -1, -2)


def covariance_backward(log_scale, quat_raw, d_cov):
    """Gradients of Sigma = R S S^T R^T w.r.t. log-scales and raw quaternion.

    `d_cov` is the symmetric-matrix gradient (..., 3, 3).  Returns
    (d_log_scale, d_quat_raw) with the normalization chain included.
    """
    q = quat_normalize(quat_raw)
    R = quat_to_rotmat(q)
    S = np.exp(log_scale)
    L = R * S[..., None, :]
    # Sigma = L L^T  ->  dL = (G + G^T) L = 2 G L for symmetric G
    dL = 2.0 * (d_cov @ L)
    # L = R diag(S): dS_k = sum_i R[i,k] dL[i,k];  dR = dL diag(S)
    dS = np.sum(R * dL, axis=-2)
    d_log_scale = dS * S  # chain through exp
    dR = dL * S[..., None, :]
    d_unit = rotmat_backward(q, dR)
    return d_log_scale, normalize_backward(quat_raw, d_unit)


def align_quaternion_signs(quats: np.ndarray) -> np.ndarray:
    """Flip signs along axis -2 so consecutive keyframe rotations have
    non-negative dot products (Slerp then always takes the short arc)."""
    out = quats.copy()
    n = out.shape[-2]
    for k in range(1, n):
        dots = np.sum(out[..., k, :] * out[..., k - 1, :], axis=-1)
        out[..., k, :] = np.where((dots < 0)[..., None], -out[..., k, :], out[..., k, :])
    return out


# ---------------------------------------------------------------------------
# per-Gaussian value types
# ---------------------------------------------------------------------------

def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


@dataclass
class GaussianCommon:
    """Shape/appearance attributes shared by both populations.

    scale is log-domain (effective scale = exp(scale) > 0), opacity_base is
    logit-domain (effective opacity = sigmoid in (0,1)), sh_coeffs has shape
    ((D+1)^2, 3) for degree D in 0..3.
    """

    scale: np.ndarray
    rotation_base: np.ndarray
    opacity_base: float
    sh_coeffs: np.ndarray

    @property
    def effective_scale(self) -> np.ndarray:
        return np.exp(self.scale)

    @property
    def effective_opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_base)))

    def violations(self, where: str) -> list[str]:
        out = []
        if abs(np.linalg.norm(self.rotation_base) - 1.0) > 1e-6:
            out.append(f"{where}: rotation_base not unit norm")
        deg = math.isqrt(self.sh_coeffs.shape[0]) - 1
        if deg not in (0, 1, 2, 3) or sh_coeff_count(deg) != self.sh_coeffs.shape[0]:
            out.append(f"{where}: sh_coeffs count {self.sh_coeffs.shape[0]} not (D+1)^2 for D in 0..3")
        if not np.all(np.isfinite(self.scale)):
            out.append(f"{where}: non-finite scale")
        return out


@dataclass
class StaticGaussian:
    """Pivot position plus one linear translation over normalized time."""

    common: GaussianCommon
    pivot: np.ndarray
    translation: np.ndarray

    def violations(self, where: str) -> list[str]:
        out = self.common.violations(where)
        if not np.all(np.isfinite(self.pivot)) or not np.all(np.isfinite(self.translation)):
            out.append(f"{where}: non-finite position parameters")
        return out


@dataclass
class KeyframeTrack:
    """Explicit keyframe samples of position and rotation, uniform interval."""

    positions: np.ndarray  # (N+1, 3)
    rotations: np.ndarray  # (N+1, 4), unit, consecutive sign-aligned
    interval: int

    @property
    def n_keyframes(self) -> int:
        return self.positions.shape[0]

    def violations(self, where: str) -> list[str]:
        out = []
        if self.positions.shape[0] != self.rotations.shape[0]:
            out.append(f"{where}: positions/rotations length mismatch")
        if self.positions.shape[0] < 2:
            out.append(f"{where}: track needs at least 2 keyframes")
        if self.interval < 1:
            out.append(f"{where}: keyframe interval must be positive")
        norms = np.linalg.norm(self.rotations, axis=-1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            out.append(f"{where}: non-unit keyframe rotation")
        dots = np.sum(self.rotations[1:] * self.rotations[:-1], axis=-1)
        if np.any(dots < -1e-12):
            out.append(f"{where}: consecutive keyframe rotations not sign-aligned")
        return out


@dataclass
class TemporalOpacity:
    """Two Gaussian lobes with a unit plateau between their means.

    Means live in normalized time; widths are stored in log domain and
    floored at 1e-4.
    """

    appear_mean: float      # a_s
    appear_log_width: float
    vanish_mean: float      # a_f
    vanish_log_width: float

    @property
    def appear_width(self) -> float:
        return math.exp(self.appear_log_width)

    @property
    def vanish_width(self) -> float:
        return math.exp(self.vanish_log_width)

    def violations(self, where: str) -> list[str]:
        out = []
        if self.appear_mean > self.vanish_mean:
            out.append(f"{where}: appear_mean > vanish_mean")
        if self.appear_log_width < LOG_WIDTH_FLOOR - 1e-12 or self.vanish_log_width < LOG_WIDTH_FLOOR - 1e-12:
            out.append(f"{where}: temporal width below floor {WIDTH_FLOOR}")
        return out


@dataclass
class DynamicGaussian:
    common: GaussianCommon
    track: KeyframeTrack
    temporal_opacity: TemporalOpacity

    def violations(self, where: str) -> list[str]:
        return (
            self.common.violations(where)
            + self.track.violations(where)
            + self.temporal_opacity.violations(where)
        )


# ---------------------------------------------------------------------------
# populations (struct-of-arrays)
# ---------------------------------------------------------------------------

class StaticSet:
    """All static Gaussians, one array per attribute."""

    FIELDS = ("pivot", "translation", "log_scale", "rotation", "opacity_logit", "sh")

    def __init__(self, pivot, translation, log_scale, rotation, opacity_logit, sh):
        self.pivot = np.asarray(pivot, dtype=np.float64).reshape(-1, 3)
        self.translation = np.asarray(translation, dtype=np.float64).reshape(-1, 3)
        self.log_scale = np.asarray(log_scale, dtype=np.float64).reshape(-1, 3)
        self.rotation = np.asarray(rotation, dtype=np.float64).reshape(-1, 4)
        self.opacity_logit = np.asarray(opacity_logit, dtype=np.float64).reshape(-1)
        self.sh = np.asarray(sh, dtype=np.float64)

    @classmethod
    def empty(cls, sh_degree: int) -> "StaticSet":
        k = sh_coeff_count(sh_degree)
        return cls(
            np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)),
            np.zeros((0, 4)), np.zeros(0), np.zeros((0, k, 3)),
        )

    def __len__(self):
        return self.pivot.shape[0]

    def __getitem__(self, i: int) -> StaticGaussian:
        return StaticGaussian(
            common=GaussianCommon(
                scale=self.log_scale[i].copy(),
                rotation_base=self.rotation[i].copy(),
                opacity_base=float(self.opacity_logit[i]),
                sh_coeffs=self.sh[i].copy(),
            ),
            pivot=self.pivot[i].copy(),
            translation=self.translation[i].copy(),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.FIELDS}

    def select(self, idx) -> "StaticSet":
        return StaticSet(**{k: v[idx] for k, v in self.arrays().items()})

    def append(self, other: "StaticSet") -> "StaticSet":
        return StaticSet(**{
            k: np.concatenate([v, getattr(other, k)], axis=0) for k, v in self.arrays().items()
        })


class DynamicSet:
    """All dynamic Gaussians.  The base rotation of a dynamic point is its
    first keyframe rotation; only the track is rendered."""

    FIELDS = (
        "key_pos", "key_rot", "log_scale", "opacity_logit", "sh",
        "appear_mean", "appear_log_width", "vanish_mean", "vanish_log_width",
    )

    def __init__(self, key_pos, key_rot, log_scale, opacity_logit, sh,
                 appear_mean, appear_log_width, vanish_mean, vanish_log_width):
        self.key_pos = np.asarray(key_pos, dtype=np.float64)
        self.key_rot = np.asarray(key_rot, dtype=np.float64)
        self.log_scale = np.asarray(log_scale, dtype=np.float64).reshape(-1, 3)
        self.opacity_logit = np.asarray(opacity_logit, dtype=np.float64).reshape(-1)
        self.sh = np.asarray(sh, dtype=np.float64)
        self.appear_mean = np.asarray(appear_mean, dtype=np.float64).reshape(-1)
        self.appear_log_width = np.asarray(appear_log_width, dtype=np.float64).reshape(-1)
        self.vanish_mean = np.asarray(vanish_mean, dtype=np.float64).reshape(-1)
        self.vanish_log_width = np.asarray(vanish_log_width, dtype=np.float64).reshape(-1)

    @classmethod
    def empty(cls, sh_degree: int, n_keyframes: int = 2) -> "DynamicSet":
        k = sh_coeff_count(sh_degree)
        return cls(
            np.zeros((0, n_keyframes, 3)), np.zeros((0, n_keyframes, 4)),
            np.zeros((0, 3)), np.zeros(0), np.zeros((0, k, 3)),
            np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0),
        )

    def __len__(self):
        return self.key_pos.shape[0]

    @property
    def n_keyframes(self) -> int:
        return self.key_pos.shape[1]

    def view(self, i: int, interval: int = 1) -> DynamicGaussian:
        track = KeyframeTrack(
            positions=self.key_pos[i].copy(),
            rotations=self.key_rot[i].copy(),
            interval=int(interval),
        )
        return DynamicGaussian(
            common=GaussianCommon(
                scale=self.log_scale[i].copy(),
                rotation_base=self.key_rot[i, 0].copy(),
                opacity_base=float(self.opacity_logit[i]),
                sh_coeffs=self.sh[i].copy(),
            ),
            track=track,
            temporal_opacity=TemporalOpacity(
                appear_mean=float(self.appear_mean[i]),
                appear_log_width=float(self.appear_log_width[i]),
                vanish_mean=float(self.vanish_mean[i]),
                vanish_log_width=float(self.vanish_log_width[i]),
            ),
        )

    def __getitem__(self, i: int) -> DynamicGaussian:
        return self.view(i)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.FIELDS}

    def select(self, idx) -> "DynamicSet":
        return DynamicSet(**{k: v[idx] for k, v in self.arrays().items()})

    def append(self, other: "DynamicSet") -> "DynamicSet":
        return DynamicSet(**{
            k: np.concatenate([v, getattr(other, k)], axis=0) for k, v in self.arrays().items()
        })


# ---------------------------------------------------------------------------
# scene + camera
# ---------------------------------------------------------------------------

def keyframes_required(duration_frames: int, interval: int) -> int:
    """Minimum keyframe count so every frame < duration sits in a covered segment."""
    return math.ceil(duration_frames / interval) + 1


@dataclass
class SceneModel:
    statics: StaticSet
    dynamics: DynamicSet
    duration_frames: int
    total_frames: int
    keyframe_interval: int

    @property
    def sh_degree(self) -> int:
        return math.isqrt(self.statics.sh.shape[1]) - 1

    def dynamic(self, i: int) -> DynamicGaussian:
        return self.dynamics.view(i, interval=self.keyframe_interval)

    def validate(self) -> list[str]:
        return validate_scene(self)


@dataclass
class CameraView:
    """Pinhole camera: intrinsics in pixels, world_to_camera row-major 4x4,
    camera space is x-right / y-down / z-forward."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray
    timestamp: int = 0
    image_path: str | None = None
    cam_id: int = -1

    def __post_init__(self):
        self.world_to_camera = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        R = self.world_to_camera[:3, :3]
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6:
            raise ValueError("world_to_camera rotation block is not orthonormal within 1e-6")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def at(self, timestamp: int, image_path=None) -> "CameraView":
        return CameraView(
            fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
            width=self.width, height=self.height,
            world_to_camera=self.world_to_camera.copy(),
            timestamp=timestamp, image_path=image_path, cam_id=self.cam_id,
        )


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def effective_covariance(g: GaussianCommon) -> np.ndarray:
    """Sigma = R S S^T R^T for one Gaussian; symmetric PSD."""
    return covariance_from(g.scale, g.rotation_base)


def validate_scene(scene: SceneModel) -> list[str]:
    """Every violated invariant as a human-readable string; empty when clean."""
    out: list[str] = []
    if scene.duration_frames > scene.total_frames:
        out.append("scene: duration_frames exceeds total_frames")
    if scene.keyframe_interval < 1:
        out.append("scene: keyframe_interval must be >= 1")

    st = scene.statics
    norms = np.linalg.norm(st.rotation, axis=-1)
    for i in np.nonzero(np.abs(norms - 1.0) > 1e-6)[0]:
        out.append(f"static[{i}]: rotation_base not unit norm")
    for i in np.nonzero(~np.all(np.isfinite(st.pivot), axis=-1))[0]:
        out.append(f"static[{i}]: non-finite pivot")
    for i in np.nonzero(~np.all(np.isfinite(st.translation), axis=-1))[0]:
        out.append(f"static[{i}]: non-finite translation")
    for i in np.nonzero(~np.all(np.isfinite(st.log_scale), axis=-1))[0]:
        out.append(f"static[{i}]: non-finite scale")

    dy = scene.dynamics
    need = keyframes_required(scene.duration_frames, scene.keyframe_interval)
    if len(dy) and dy.n_keyframes < need:
        out.append(f"dynamics: track has {dy.n_keyframes} keyframes, needs >= {need}")
    knorm = np.linalg.norm(dy.key_rot, axis=-1)
    for i in np.nonzero(np.any(np.abs(knorm - 1.0) > 1e-6, axis=-1))[0]:
        out.append(f"dynamic[{i}]: non-unit keyframe rotation")
    if dy.n_keyframes >= 2:
        dots = np.sum(dy.key_rot[:, 1:] * dy.key_rot[:, :-1], axis=-1)
        for i in np.nonzero(np.any(dots < -1e-12, axis=-1))[0]:
            out.append(f"dynamic[{i}]: keyframe rotations not sign-aligned")
    for i in np.nonzero(dy.appear_mean > dy.vanish_mean)[0]:
        out.append(f"dynamic[{i}]: appear_mean > vanish_mean")
    low = (dy.appear_log_width < LOG_WIDTH_FLOOR - 1e-12) | (dy.vanish_log_width < LOG_WIDTH_FLOOR - 1e-12)
    for i in np.nonzero(low)[0]:
        out.append(f"dynamic[{i}]: temporal width below floor {WIDTH_FLOOR}")
    for i in np.nonzero(~np.all(np.isfinite(dy.key_pos), axis=(1, 2)))[0]:
        out.append(f"dynamic[{i}]: non-finite keyframe position")
    return out
