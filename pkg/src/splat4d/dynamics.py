"""Population lifecycle: motion scoring, static-to-dynamic extraction,
duration expansion with keyframe extrapolation, and error-driven pruning.

Scoring reads an immutable scene snapshot; the mutating operations
(extract/expand/prune) replace whole population arrays and report the index
maps the trainer needs to keep optimizer state parallel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DynamicSet, SceneModel, CameraView, keyframes_required, quat_normalize,
)
from .errors import CapacityError, DegenerateGeometryError


@dataclass
class MotionScore:
    """Image-space motion proxy for one static Gaussian: |d| / lambda^2,
    with lambda the camera-to-point distance at the last trained frame."""

    gaussian_id: int
    score: float


@dataclass
class PruneRecord:
    """Accumulated view-averaged backtracking error for one Gaussian."""

    gaussian_id: int
    population: str          # "static" | "dynamic"
    e_total: float           # mean error over contributing views
    views_seen: int


@dataclass
class ConversionReport:
    n_converted: int
    converted_ids: np.ndarray          # former static indices, ascending
    static_keep: np.ndarray            # surviving static indices, ascending
    eta_percent: float


@dataclass
class ExpansionReport:
    old_duration: int
    new_duration: int
    keyframes_added: int


@dataclass
class PruneReport:
    threshold: float
    median: float
    static_keep: np.ndarray
    dynamic_keep: np.ndarray
    n_pruned_static: int = 0
    n_pruned_dynamic: int = 0


def score_motion(scene: SceneModel, reference_cam: CameraView) -> list[MotionScore]:
    """Score every static Gaussian by apparent image-space motion.

    lambda is measured at the final frame of the *current* duration so that
    points about to leave the frustum still score sensibly.
    """
    st = scene.statics
    t_norm = (scene.duration_frames - 1) / scene.duration_frames
    pos = st.pivot + t_norm * st.translation
    lam = np.linalg.norm(pos - reference_cam.center[None, :], axis=-1)
    if np.any(lam < 1e-6):
        bad = int(np.argmin(lam))
        raise DegenerateGeometryError(f"static[{bad}] coincides with the reference camera")
    scores = np.linalg.norm(st.translation, axis=-1) / (lam * lam)
    return [MotionScore(int(i), float(s)) for i, s in enumerate(scores)]


def extract_dynamic(scene: SceneModel, scores: list[MotionScore],
                    eta_percent: float) -> ConversionReport:
    """Convert the top-eta-percent statics (by score) into dynamic Gaussians.

    Converted points sample their linear motion at the keyframe times,
    duplicate their base rotation into every keyframe, and start fully
    visible (plateau spanning the whole normalized window).  Percentile
    ties break toward the lower Gaussian id.
    """
    st = scene.statics
    n = len(st)
    k = int(n * eta_percent / 100.0)
    if k <= 0 or n == 0:
        return ConversionReport(0, np.zeros(0, np.int64), np.arange(n), eta_percent)

    ids = np.array([s.gaussian_id for s in scores], dtype=np.int64)
    vals = np.array([s.score for s in scores])
    order = np.lexsort((ids, -vals))          # descending score, then ascending id
    chosen = np.sort(ids[order[:k]])
    keep = np.setdiff1d(np.arange(n), chosen)

    l = scene.duration_frames
    interval = scene.keyframe_interval
    n_kf = scene.dynamics.n_keyframes if len(scene.dynamics) else keyframes_required(l, interval)
    times = np.arange(n_kf) * interval / l                  # normalized keyframe times
    key_pos = st.pivot[chosen, None, :] + times[None, :, None] * st.translation[chosen, None, :]
    base_rot = quat_normalize(st.rotation[chosen])
    key_rot = np.repeat(base_rot[:, None, :], n_kf, axis=1)
    width = interval / l

    converted = DynamicSet(
        key_pos=key_pos,
        key_rot=key_rot,
        log_scale=st.log_scale[chosen].copy(),
        opacity_logit=st.opacity_logit[chosen].copy(),
        sh=st.sh[chosen].copy(),
        appear_mean=np.zeros(k),
        appear_log_width=np.full(k, math.log(width)),
        vanish_mean=np.ones(k),
        vanish_log_width=np.full(k, math.log(width)),
    )
    scene.statics = st.select(keep)
    scene.dynamics = scene.dynamics.append(converted) if len(scene.dynamics) else converted
    return ConversionReport(k, chosen, keep, eta_percent)


def _linear_extrapolate(series: np.ndarray, rho: int) -> np.ndarray:
    """Least-squares line through the last min(rho, K) samples, evaluated one
    step ahead.  series is (N, K, D); returns (N, D)."""
    k = series.shape[1]
    m = min(max(rho, 2), k)
    y = series[:, k - m:, :]
    x = np.arange(m, dtype=np.float64)
    xbar = x.mean()
    ybar = y.mean(axis=1)
    denom = np.sum((x - xbar) ** 2)
    slope = np.einsum("k,nkd->nd", x - xbar, y - ybar[:, None, :]) / denom
    return ybar + slope * (m - xbar)  # next index is m relative to the window


def expand_duration(scene: SceneModel, new_duration: int, rho: int = 3) -> ExpansionReport:
    """Grow the training window; extrapolate the keyframes that now become
    reachable and rescale time-normalized parameters so that everything
    already trained renders identically at its absolute frame times.
    """
    if new_duration > scene.total_frames:
        raise CapacityError(f"duration {new_duration} exceeds total {scene.total_frames}")
    if new_duration < scene.duration_frames:
        raise CapacityError("duration cannot shrink")
    old = scene.duration_frames
    dy = scene.dynamics
    added = 0
    if len(dy):
        need = keyframes_required(new_duration, scene.keyframe_interval)
        while dy.n_keyframes < need:
            new_pos = _linear_extrapolate(dy.key_pos, rho)
            raw_rot = _linear_extrapolate(dy.key_rot, rho)
            norms = np.linalg.norm(raw_rot, axis=-1, keepdims=True)
            degenerate = norms[:, 0] < 1e-8
            raw_rot[degenerate] = dy.key_rot[degenerate, -1, :]
            new_rot = quat_normalize(raw_rot)
            # keep the short-arc convention against the previous keyframe
            flip = np.sum(new_rot * dy.key_rot[:, -1, :], axis=-1) < 0
            new_rot[flip] = -new_rot[flip]
            dy.key_pos = np.concatenate([dy.key_pos, new_pos[:, None, :]], axis=1)
            dy.key_rot = np.concatenate([dy.key_rot, new_rot[:, None, :]], axis=1)
            added += 1

    # normalized-time rescaling: points in time shrink by old/new, the
    # per-normalized-time velocity grows by new/old
    factor = old / new_duration
    scene.statics.translation = scene.statics.translation / factor
    dy.appear_mean = dy.appear_mean * factor
    dy.vanish_mean = dy.vanish_mean * factor
    dy.appear_log_width = dy.appear_log_width + math.log(factor)
    dy.vanish_log_width = dy.vanish_log_width + math.log(factor)
    scene.duration_frames = int(new_duration)
    return ExpansionReport(old, int(new_duration), added)


PRUNE_CAP_FRACTION = 0.10


def prune_by_backtracking(scene: SceneModel, records: list[PruneRecord],
                          kappa: float) -> PruneReport:
    """Remove Gaussians whose view-averaged error exceeds kappa x median.

    The median is taken over every record (records exist only for Gaussians
    seen in at least one view).  At most 10% of either population goes in
    one invocation; when more exceed the threshold, the worst offenders are
    removed and the rest kept.
    """
    ns, nd = len(scene.statics), len(scene.dynamics)
    report = PruneReport(threshold=np.inf, median=0.0,
                         static_keep=np.arange(ns), dynamic_keep=np.arange(nd))
    visible = [r for r in records if r.views_seen >= 1]
    if not visible:
        return report
    errs = np.array([r.e_total for r in visible])
    med = float(np.median(errs))
    thr = kappa * med
    report.median = med
    report.threshold = thr

    for pop, size in (("static", ns), ("dynamic", nd)):
        cand = [(r.e_total, r.gaussian_id) for r in visible
                if r.population == pop and r.e_total > thr]
        cap = int(PRUNE_CAP_FRACTION * size)
        if not cand or cap == 0:
            continue
        cand.sort(key=lambda t: (-t[0], t[1]))  # worst error first, low id on ties
        doomed = np.array(sorted(gid for _, gid in cand[:cap]), dtype=np.int64)
        keep = np.setdiff1d(np.arange(size), doomed)
        if pop == "static":
            scene.statics = scene.statics.select(keep)
            report.static_keep = keep
            report.n_pruned_static = len(doomed)
        else:
            scene.dynamics = scene.dynamics.select(keep)
            report.dynamic_keep = keep
            report.n_pruned_dynamic = len(doomed)
    return report
