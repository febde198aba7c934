"""Differentiable tile splatting renderer.

Pipeline: realize (scene at a frame) -> project (EWA perspective) ->
rasterize_forward (front-to-back alpha blending over 16x16 tiles) ->
rasterize_backward (analytic gradients back to every scene parameter) and
backtrack_errors (blending-weighted error attribution per Gaussian).

A naive reference path (global depth sort, per-pixel loop over all splats,
no early termination, no alpha floor, no bounding-box truncation) is kept
as the oracle for the tile path.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels, runtime
from .core import (
    CameraView, SceneModel, covariance_backward, covariance_from,
    normalize_backward, quat_normalize,
)
from .errors import OutOfRangeError, ShapeError, StateError
from .interp import (
    CULL_OPACITY, TimeQuery, _keyframe_weights, slerp_batch,
    slerp_batch_backward, static_positions, temporal_opacities,
    temporal_opacity_grads, track_positions,
)
from .sh import eval_sh, eval_sh_backward, eval_sh_batch  # noqa: F401  (eval_sh re-exported)

TILE = kernels.TILE
DILATION = 0.3          # px^2 added to the projected covariance diagonal
NEAR_PLANE = 0.01
ALPHA_MIN = 1.0 / 255.0
T_STOP = 1e-4
RADIUS_MULT = 3.0


@dataclass
class RenderOptions:
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    alpha_min: float = ALPHA_MIN
    t_stop: float = T_STOP
    radius_mult: float = RADIUS_MULT

    @classmethod
    def exact(cls, background=None, radius_mult=6.0) -> "RenderOptions":
        """Thresholds disabled: used by oracle comparisons and grad checks."""
        bg = np.zeros(3) if background is None else np.asarray(background, float)
        return cls(background=bg, alpha_min=0.0, t_stop=0.0, radius_mult=radius_mult)


@dataclass
class RealizedGaussian:
    mean_world: np.ndarray
    cov_world: np.ndarray
    opacity_eff: float
    color: np.ndarray
    source_id: int
    population: str  # "static" | "dynamic"


class Realization:
    """All Gaussians of a scene instantiated at one frame (SoA)."""

    def __init__(self, scene: SceneModel, frame: int, cam: CameraView | None):
        q = TimeQuery.at(frame, scene.duration_frames, scene.keyframe_interval)
        self.scene = scene
        self.query = q
        st, dy = scene.statics, scene.dynamics

        means_s = static_positions(st.pivot, st.translation, q.normalized)
        quats_s = quat_normalize(st.rotation) if len(st) else st.rotation.copy()
        sig_s = expit(st.opacity_logit)

        sigma_t = temporal_opacities(
            dy.appear_mean, np.exp(dy.appear_log_width),
            dy.vanish_mean, np.exp(dy.vanish_log_width), q.normalized,
        ) if len(dy) else np.zeros(0)
        keep_d = sigma_t >= CULL_OPACITY
        self.dyn_idx = np.nonzero(keep_d)[0]
        self.dyn_sigma_t = sigma_t[self.dyn_idx]
        if len(self.dyn_idx):
            means_d = track_positions(dy.key_pos[self.dyn_idx], q.segment, q.local)
            quats_d = slerp_batch(
                quat_normalize(dy.key_rot[self.dyn_idx, q.segment, :]),
                quat_normalize(dy.key_rot[self.dyn_idx, q.segment + 1, :]),
                q.local,
            )
        else:
            means_d = np.zeros((0, 3))
            quats_d = np.zeros((0, 4))
        sig_d = expit(dy.opacity_logit[self.dyn_idx])

        self.means = np.concatenate([means_s, means_d], axis=0)
        self.quats = np.concatenate([quats_s, quats_d], axis=0)
        self.log_scales = np.concatenate([st.log_scale, dy.log_scale[self.dyn_idx]], axis=0)
        self.covs = covariance_from(self.log_scales, self.quats)
        self.opacities = np.concatenate([sig_s, sig_d * self.dyn_sigma_t])
        self.static_sig = sig_s
        self.dyn_sig = sig_d
        self.n_static = len(st)
        self.src_idx = np.concatenate([np.arange(len(st)), self.dyn_idx]).astype(np.int64)
        sh_all = np.concatenate([st.sh, dy.sh[self.dyn_idx]], axis=0)
        self.sh = sh_all

        self.cam = cam
        if cam is not None and len(self.means):
            rel = self.means - cam.center[None, :]
            self.view_dirs = rel / np.linalg.norm(rel, axis=-1, keepdims=True)
            self.colors, self.color_active = eval_sh_batch(sh_all, self.view_dirs)
        else:
            # view-independent part only; full colors need a camera
            base = sh_all[:, 0, :] * 0.28209479177387814 + 0.5
            self.colors = np.clip(base, 0.0, 1.0)
            self.color_active = (base > 0) & (base < 1)
            self.view_dirs = None

    def __len__(self):
        return self.means.shape[0]

    def population(self, i: int) -> str:
        return "static" if i < self.n_static else "dynamic"

    def __getitem__(self, i: int) -> RealizedGaussian:
        return RealizedGaussian(
            mean_world=self.means[i].copy(),
            cov_world=self.covs[i].copy(),
            opacity_eff=float(self.opacities[i]),
            color=self.colors[i].copy(),
            source_id=int(self.src_idx[i]),
            population=self.population(i),
        )


def realize(scene: SceneModel, frame: int, cam: CameraView | None = None) -> Realization:
    """Instantiate every visible Gaussian at `frame`.

    Statics move linearly; dynamics take CHip positions and Slerp rotations
    from their keyframe segment, with opacity scaled by temporal opacity.
    Dynamics whose temporal opacity falls below 0.005 are culled.  Colors
    are evaluated against `cam`'s view direction when given.
    """
    return Realization(scene, frame, cam)


@dataclass
class Splat2D:
    mean_px: np.ndarray
    cov2d: np.ndarray
    depth: float
    conic: np.ndarray
    radius_px: float


class Projection:
    """Realized Gaussians projected into one camera (kept subset only)."""

    def __init__(self, real: Realization, cam: CameraView, radius_mult: float):
        self.real = real
        self.cam = cam
        self.radius_mult = radius_mult
        R = cam.rotation
        t = cam.translation
        p_cam = real.means @ R.T + t[None, :]
        z_ok = p_cam[:, 2] > NEAR_PLANE

        # work on the z-kept subset, then apply the viewport test
        idx0 = np.nonzero(z_ok)[0]
        pc = p_cam[idx0]
        x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
        fx, fy = cam.fx, cam.fy
        inv_z = 1.0 / z

        J = np.zeros((len(idx0), 2, 3))
        J[:, 0, 0] = fx * inv_z
        J[:, 0, 2] = -fx * x * inv_z**2
        J[:, 1, 1] = fy * inv_z
        J[:, 1, 2] = -fy * y * inv_z**2
        M = J @ R[None, :, :]
        cov = M @ real.covs[idx0] @ np.swapaxes(M, 1, 2)
        a = cov[:, 0, 0] + DILATION
        b = cov[:, 0, 1]
        c = cov[:, 1, 1] + DILATION

        mean_px = np.stack([fx * x * inv_z + cam.cx, fy * y * inv_z + cam.cy], axis=-1)
        det = a * c - b * b
        mid = 0.5 * (a + c)
        lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        radius = np.ceil(radius_mult * np.sqrt(lam_max))

        vis = (
            (mean_px[:, 0] + radius > 0.0) & (mean_px[:, 0] - radius < cam.width)
            & (mean_px[:, 1] + radius > 0.0) & (mean_px[:, 1] - radius < cam.height)
            & (det > 0)
        )
        sel = np.nonzero(vis)[0]
        self.kept = idx0[sel]            # indices into the realization
        self.p_cam = pc[sel]
        self.M = M[sel]
        self.mean_px = np.ascontiguousarray(mean_px[sel])
        self.depth = np.ascontiguousarray(z[sel])
        self.cov2d = np.stack([a[sel], b[sel], c[sel]], axis=-1)
        d = det[sel]
        self.conic = np.ascontiguousarray(
            np.stack([c[sel] / d, -b[sel] / d, a[sel] / d], axis=-1))
        self.radius = radius[sel]
        self.colors = np.ascontiguousarray(real.colors[self.kept])
        self.opacities = np.ascontiguousarray(real.opacities[self.kept])

    def __len__(self):
        return self.kept.shape[0]


def project_scene(real: Realization, cam: CameraView, radius_mult: float = RADIUS_MULT) -> Projection:
    return Projection(real, cam, radius_mult)


def project(g: RealizedGaussian, cam: CameraView, radius_mult: float = RADIUS_MULT) -> Splat2D | None:
    """Project one realized Gaussian; None means culled (behind the near
    plane or its 3-sigma ellipse misses the viewport)."""
    real = _SingleRealization(g)
    proj = Projection(real, cam, radius_mult)
    if len(proj) == 0:
        return None
    a, b, c = proj.cov2d[0]
    return Splat2D(
        mean_px=proj.mean_px[0],
        cov2d=np.array([[a, b], [b, c]]),
        depth=float(proj.depth[0]),
        conic=proj.conic[0],
        radius_px=float(proj.radius[0]),
    )


class _SingleRealization:
    """Minimal realization-like wrapper so `project` can reuse Projection."""

    def __init__(self, g: RealizedGaussian):
        self.means = g.mean_world[None, :]
        self.covs = g.cov_world[None, :, :]
        self.colors = g.color[None, :]
        self.opacities = np.array([g.opacity_eff])
        self.src_idx = np.array([g.source_id])
        self.n_static = 1 if g.population == "static" else 0


# ---------------------------------------------------------------------------
# tile binning + forward
# ---------------------------------------------------------------------------

def _bin_splats(proj: Projection, width: int, height: int):
    tiles_x = math.ceil(width / TILE)
    tiles_y = math.ceil(height / TILE)
    n_tiles = tiles_x * tiles_y
    p = len(proj)
    if p == 0:
        return tiles_x, n_tiles, np.zeros(n_tiles + 1, np.int64), np.zeros(0, np.int64)

    mx, my = proj.mean_px[:, 0], proj.mean_px[:, 1]
    r = proj.radius
    x_lo = np.clip(np.floor((mx - r) / TILE), 0, tiles_x - 1).astype(np.int64)
    x_hi = np.clip(np.floor((mx + r) / TILE), 0, tiles_x - 1).astype(np.int64)
    y_lo = np.clip(np.floor((my - r) / TILE), 0, tiles_y - 1).astype(np.int64)
    y_hi = np.clip(np.floor((my + r) / TILE), 0, tiles_y - 1).astype(np.int64)
    counts = (x_hi - x_lo + 1) * (y_hi - y_lo + 1)
    total = int(counts.sum())

    rep = np.repeat(np.arange(p, dtype=np.int64), counts)
    base = np.concatenate([[0], np.cumsum(counts)[:-1]])
    off = np.arange(total, dtype=np.int64) - np.repeat(base, counts)
    nx = (x_hi - x_lo + 1)[rep]
    tile = (y_lo[rep] + off // nx) * tiles_x + (x_lo[rep] + off % nx)

    # per tile: front-to-back by depth, ties broken by realized order
    order = np.lexsort((rep, proj.depth[rep], tile))
    pair_splat = np.ascontiguousarray(rep[order])
    tile_counts = np.bincount(tile[order], minlength=n_tiles)
    tile_offsets = np.concatenate([[0], np.cumsum(tile_counts)]).astype(np.int64)
    return tiles_x, n_tiles, tile_offsets, pair_splat


class RenderOutput:
    """Image plus the per-Gaussian auxiliaries the trainer consumes.

    per_gaussian_* arrays align with the realization (culled entries stay
    zero); `gradients` is filled by rasterize_backward.
    """

    def __init__(self, image, alpha, real: Realization, proj: Projection,
                 opts: RenderOptions, final_t, n_contrib, tiles_x, tile_offsets,
                 pair_splat, pair_wsum, skip_power):
        self.image = image
        self.alpha = alpha
        self.real = real
        self.proj = proj
        self.opts = opts
        self.final_t = final_t
        self.n_contrib = n_contrib
        self.tiles_x = tiles_x
        self.tile_offsets = tile_offsets
        self.pair_splat = pair_splat
        self.pair_wsum = pair_wsum
        self.skip_power = skip_power

        m = len(real) if real is not None else len(proj)
        self.per_gaussian_weight_sum = np.zeros(m)
        if len(proj):
            w_per_splat = np.zeros(len(proj))
            np.add.at(w_per_splat, pair_splat, pair_wsum)
            self.per_gaussian_weight_sum[proj.kept] = w_per_splat
        self.visible = self.per_gaussian_weight_sum > 0.0
        self.per_gaussian_error_sum = None
        self.gradients = None
        self.screen_grad = None
        self.timings: dict[str, float] = {}


def rasterize_forward(proj: Projection, cam: CameraView,
                      opts: RenderOptions | None = None) -> RenderOutput:
    """Depth-sorted front-to-back alpha compositing over 16x16 tiles."""
    opts = opts or RenderOptions()
    w, h = cam.width, cam.height
    t0 = time.perf_counter()
    tiles_x, n_tiles, tile_offsets, pair_splat = _bin_splats(proj, w, h)

    image = np.zeros((h, w, 3))
    final_t = np.ones((h, w))
    n_contrib = np.zeros((h, w), np.int64)
    pair_wsum = np.zeros(len(pair_splat))
    bg = np.ascontiguousarray(opts.background, dtype=np.float64)

    # power below which alpha must fall under alpha_min: skip the exp early
    if opts.alpha_min > 0.0:
        skip_power = np.log(opts.alpha_min / np.maximum(proj.opacities, 1e-300))
    else:
        skip_power = np.full(len(proj), -np.inf)

    if len(proj):
        runtime.run_tiled(
            kernels.forward_range, n_tiles,
            tile_offsets, pair_splat,
            proj.mean_px, proj.conic, proj.colors, proj.opacities, skip_power,
            w, h, tiles_x, bg, opts.alpha_min, opts.t_stop,
            image, final_t, n_contrib, pair_wsum,
        )
    else:
        image[:] = bg[None, None, :]

    out = RenderOutput(image, 1.0 - final_t, proj.real, proj, opts,
                       final_t, n_contrib, tiles_x, tile_offsets, pair_splat,
                       pair_wsum, skip_power)
    out.timings["forward_s"] = time.perf_counter() - t0
    return out


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

@dataclass
class SceneGrads:
    """Gradient arrays parallel to the scene's parameter arrays."""

    static: dict[str, np.ndarray]
    dynamic: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, scene: SceneModel) -> "SceneGrads":
        return cls(
            static={k: np.zeros_like(v) for k, v in scene.statics.arrays().items()},
            dynamic={k: np.zeros_like(v) for k, v in scene.dynamics.arrays().items()},
        )

    def add(self, other: "SceneGrads"):
        for k, v in other.static.items():
            self.static[k] += v
        for k, v in other.dynamic.items():
            self.dynamic[k] += v


def _conic_to_cov_grad(conic, d_conic):
    """Chain (A,B,C) gradients of the inverse back to (a,b,c) of cov2d."""
    n = conic.shape[0]
    Sinv = np.empty((n, 2, 2))
    Sinv[:, 0, 0] = conic[:, 0]
    Sinv[:, 0, 1] = Sinv[:, 1, 0] = conic[:, 1]
    Sinv[:, 1, 1] = conic[:, 2]
    G = np.empty((n, 2, 2))
    G[:, 0, 0] = d_conic[:, 0]
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * d_conic[:, 1]
    G[:, 1, 1] = d_conic[:, 2]
    Gc = -Sinv @ G @ Sinv
    return Gc  # symmetric (per-entry) gradient of cov2d as a matrix


def rasterize_backward(out: RenderOutput, d_image: np.ndarray) -> SceneGrads:
    """Pull dL/dimage back to every scene parameter.

    Covers the full chain: compositing -> conic -> projected covariance ->
    world covariance/means (including the perspective Jacobian's dependence
    on camera-space position and the SH view direction) -> population
    parameters (pivot/translation, keyframe positions and rotations,
    log-scales, base rotations, opacity logits, temporal opacity, SH).
    """
    if out.final_t is None or out.proj is None:
        raise StateError("forward buffers absent; run rasterize_forward first")
    if d_image.shape != out.image.shape:
        raise ShapeError(f"d_image shape {d_image.shape} != image {out.image.shape}")
    if out.real.view_dirs is None:
        raise StateError("realization lacks a camera; colors are not differentiable")

    proj = out.proj
    real = out.real
    cam = proj.cam
    scene = real.scene
    grads = SceneGrads.zeros_like(scene)
    out.gradients = grads
    out.screen_grad = np.zeros(len(real))
    if len(proj) == 0:
        return grads

    n_pairs = len(out.pair_splat)
    pair_dmean = np.zeros((n_pairs, 2))
    pair_dconic = np.zeros((n_pairs, 3))
    pair_dcolor = np.zeros((n_pairs, 3))
    pair_dopac = np.zeros(n_pairs)
    n_tiles = out.tile_offsets.shape[0] - 1
    runtime.run_tiled(
        kernels.backward_range, n_tiles,
        out.tile_offsets, out.pair_splat,
        proj.mean_px, proj.conic, proj.colors, proj.opacities, out.skip_power,
        cam.width, cam.height, out.tiles_x,
        np.ascontiguousarray(out.opts.background, dtype=np.float64),
        out.opts.alpha_min,
        np.ascontiguousarray(d_image), out.final_t, out.n_contrib,
        pair_dmean, pair_dconic, pair_dcolor, pair_dopac,
    )

    p = len(proj)
    d_mean_px = np.zeros((p, 2))
    d_conic = np.zeros((p, 3))
    d_color = np.zeros((p, 3))
    d_opac = np.zeros(p)
    np.add.at(d_mean_px, out.pair_splat, pair_dmean)
    np.add.at(d_conic, out.pair_splat, pair_dconic)
    np.add.at(d_color, out.pair_splat, pair_dcolor)
    np.add.at(d_opac, out.pair_splat, pair_dopac)

    # densification signal: screen-space positional gradient, scaled to a
    # half-viewport (NDC-like) unit so thresholds match splatting practice
    out.screen_grad[proj.kept] = np.linalg.norm(d_mean_px, axis=-1) * 0.5 * max(cam.width, cam.height)

    # ---- conic -> cov2d -> (M, Sigma_world) -> camera-space position ----
    Gc = _conic_to_cov_grad(proj.conic, d_conic)
    M = proj.M
    covs = real.covs[proj.kept]
    d_cov_world = np.swapaxes(M, 1, 2) @ Gc @ M
    dM = 2.0 * (Gc @ M @ covs)
    R = cam.rotation
    dJ = dM @ R.T[None, :, :]

    x, y, z = proj.p_cam[:, 0], proj.p_cam[:, 1], proj.p_cam[:, 2]
    fx, fy = cam.fx, cam.fy
    inv_z = 1.0 / z
    inv_z2 = inv_z * inv_z
    gu, gv = d_mean_px[:, 0], d_mean_px[:, 1]
    gx = gu * fx * inv_z + dJ[:, 0, 2] * (-fx * inv_z2)
    gy = gv * fy * inv_z + dJ[:, 1, 2] * (-fy * inv_z2)
    gz = (
        -gu * fx * x * inv_z2 - gv * fy * y * inv_z2
        + dJ[:, 0, 0] * (-fx * inv_z2) + dJ[:, 0, 2] * (2 * fx * x * inv_z2 * inv_z)
        + dJ[:, 1, 1] * (-fy * inv_z2) + dJ[:, 1, 2] * (2 * fy * y * inv_z2 * inv_z)
    )
    d_mean_world = np.stack([gx, gy, gz], axis=-1) @ R

    # ---- SH color (clamp mask + view-direction term) ----
    kept = proj.kept
    d_sh_kept, d_dirs = eval_sh_backward(
        real.sh[kept], real.view_dirs[kept], real.color_active[kept], d_color)
    rel = real.means[kept] - cam.center[None, :]
    d_mean_world = d_mean_world + normalize_backward(rel, d_dirs)

    # ---- split by population and chain to parameters ----
    is_static = kept < real.n_static
    _static_chain(scene, real, grads, kept[is_static],
                  d_mean_world[is_static], d_cov_world[is_static],
                  d_opac[is_static], d_sh_kept[is_static])
    is_dyn = ~is_static
    _dynamic_chain(scene, real, grads, kept[is_dyn],
                   d_mean_world[is_dyn], d_cov_world[is_dyn],
                   d_opac[is_dyn], d_sh_kept[is_dyn])
    return grads


def _static_chain(scene, real, grads, ridx, d_mean, d_cov, d_opac, d_sh):
    if len(ridx) == 0:
        return
    st = scene.statics
    sidx = real.src_idx[ridx]
    g = grads.static
    np.add.at(g["pivot"], sidx, d_mean)
    np.add.at(g["translation"], sidx, real.query.normalized * d_mean)
    d_ls, d_rot = covariance_backward(st.log_scale[sidx], st.rotation[sidx], d_cov)
    np.add.at(g["log_scale"], sidx, d_ls)
    np.add.at(g["rotation"], sidx, d_rot)
    sig = real.static_sig[sidx]
    np.add.at(g["opacity_logit"], sidx, d_opac * sig * (1.0 - sig))
    np.add.at(g["sh"], sidx, d_sh)


def _dynamic_chain(scene, real, grads, ridx, d_mean, d_cov, d_opac, d_sh):
    if len(ridx) == 0:
        return
    dy = scene.dynamics
    q = real.query
    pos_in_dyn = ridx - real.n_static          # rows of real.dyn_idx
    didx = real.src_idx[ridx]                  # rows of the dynamic set
    g = grads.dynamic

    # positions: the CHip value is a fixed linear blend of <= 4 keyframes
    cols, wts = _keyframe_weights(dy.n_keyframes, q.segment, q.local)
    for col, wt in zip(cols, wts):
        np.add.at(g["key_pos"], (didx, np.full_like(didx, col)), wt * d_mean)

    # covariance -> log scale + effective quaternion -> both segment keyframes
    d_ls, d_qeff = covariance_backward(dy.log_scale[didx], _dyn_quats(real, pos_in_dyn), d_cov)
    np.add.at(g["log_scale"], didx, d_ls)
    d_r0, d_r1 = slerp_batch_backward(
        dy.key_rot[didx, q.segment, :], dy.key_rot[didx, q.segment + 1, :], q.local, d_qeff)
    np.add.at(g["key_rot"], (didx, np.full_like(didx, q.segment)), d_r0)
    np.add.at(g["key_rot"], (didx, np.full_like(didx, q.segment + 1)), d_r1)

    # opacity: effective = sigmoid(logit) * sigma_t
    sig = real.dyn_sig[pos_in_dyn]
    sigma_t = real.dyn_sigma_t[pos_in_dyn]
    np.add.at(g["opacity_logit"], didx, d_opac * sigma_t * sig * (1.0 - sig))
    d_as, d_bsl, d_af, d_bfl = temporal_opacity_grads(
        dy.appear_mean[didx], dy.appear_log_width[didx],
        dy.vanish_mean[didx], dy.vanish_log_width[didx],
        q.normalized, d_opac * sig,
    )
    np.add.at(g["appear_mean"], didx, d_as)
    np.add.at(g["appear_log_width"], didx, d_bsl)
    np.add.at(g["vanish_mean"], didx, d_af)
    np.add.at(g["vanish_log_width"], didx, d_bfl)
    np.add.at(g["sh"], didx, d_sh)


def _dyn_quats(real: Realization, rows):
    return real.quats[real.n_static + rows]


# ---------------------------------------------------------------------------
# error backtracking (per-Gaussian error attribution)
# ---------------------------------------------------------------------------

def backtrack_errors(out: RenderOutput, error_map: np.ndarray):
    """Blending-weight-normalized mean of the per-pixel error per Gaussian.

    Returns (errors, visible): arrays aligned with the realization.
    Gaussians with zero accumulated blending weight get error 0 and are
    flagged invisible.  Also stores the numerator on the output as
    per_gaussian_error_sum.
    """
    if error_map.shape != out.image.shape[:2]:
        raise ShapeError(f"error map {error_map.shape} != image {out.image.shape[:2]}")
    proj = out.proj
    m = len(out.real) if out.real is not None else len(proj)
    num = np.zeros(m)
    den = np.zeros(m)
    if len(proj):
        pair_err = np.zeros(len(out.pair_splat))
        pair_w = np.zeros(len(out.pair_splat))
        n_tiles = out.tile_offsets.shape[0] - 1
        runtime.run_tiled(
            kernels.backtrack_range, n_tiles,
            out.tile_offsets, out.pair_splat,
            proj.mean_px, proj.conic, proj.opacities, out.skip_power,
            proj.cam.width, proj.cam.height, out.tiles_x,
            out.opts.alpha_min, out.opts.t_stop,
            np.ascontiguousarray(error_map, dtype=np.float64),
            pair_err, pair_w,
        )
        num_p = np.zeros(len(proj))
        den_p = np.zeros(len(proj))
        np.add.at(num_p, out.pair_splat, pair_err)
        np.add.at(den_p, out.pair_splat, pair_w)
        num[proj.kept] = num_p
        den[proj.kept] = den_p
    out.per_gaussian_error_sum = num
    visible = den > 0.0
    errors = np.where(visible, num / np.where(visible, den, 1.0), 0.0)
    return errors, visible


# ---------------------------------------------------------------------------
# naive reference path (oracle)
# ---------------------------------------------------------------------------

def render_reference(proj: Projection, cam: CameraView,
                     background=None) -> np.ndarray:
    """Per-pixel loop over every projected splat, globally depth sorted.

    No bounding boxes, no alpha floor, no early termination: the oracle the
    tile path is checked against.
    """
    bg = np.zeros(3) if background is None else np.asarray(background, float)
    h, w = cam.height, cam.width
    image = np.zeros((h, w, 3))
    T = np.ones((h, w))
    if len(proj) == 0:
        return image + bg[None, None, :]

    order = np.lexsort((np.arange(len(proj)), proj.depth))
    ys, xs = np.mgrid[0:h, 0:w]
    pxc = xs + 0.5
    pyc = ys + 0.5
    for s in order:
        dx = pxc - proj.mean_px[s, 0]
        dy = pyc - proj.mean_px[s, 1]
        A, B, C = proj.conic[s]
        power = -0.5 * (A * dx * dx + C * dy * dy) - B * dx * dy
        alpha = np.minimum(proj.opacities[s] * np.exp(power), kernels.ALPHA_CLAMP)
        alpha = np.where(power > 0.0, 0.0, alpha)  # same guard as the tile kernel
        image += (T * alpha)[:, :, None] * proj.colors[s][None, None, :]
        T = T * (1.0 - alpha)
    return image + T[:, :, None] * bg[None, None, :]


# ---------------------------------------------------------------------------
# convenience facade
# ---------------------------------------------------------------------------

def render_view(scene: SceneModel, cam: CameraView, frame: int,
                opts: RenderOptions | None = None) -> RenderOutput:
    """realize -> project -> rasterize_forward for one (camera, frame)."""
    if frame >= scene.duration_frames:
        raise OutOfRangeError(f"frame {frame} beyond trained duration {scene.duration_frames}")
    opts = opts or RenderOptions()
    real = realize(scene, frame, cam)
    proj = project_scene(real, cam, radius_mult=opts.radius_mult)
    return rasterize_forward(proj, cam, opts)
