"""Progressive optimization loop.

Starts on a short initial duration and repeatedly extends it by one
keyframe interval, extrapolating new keyframes; converts the most mobile
statics into dynamics at every extension (and periodically in between);
densifies and prunes like standard splatting practice; and prunes by
accumulated backtracking error on its own cadence.  Identical config, seed
and dataset reproduce bit-identical parameters: every reduction runs in a
fixed order and all sampling comes from one seeded generator.
"""

from __future__ import annotations

import json
import math
import queue
import threading
import time
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import checkpoint as ckpt_io
from .core import (
    LOG_WIDTH_FLOOR, SceneModel, align_quaternion_signs, quat_normalize,
    quat_to_rotmat,
)
from .dataset import DatasetManifest, seed_from_dataset
from .dynamics import (
    expand_duration, extract_dynamic, prune_by_backtracking, score_motion,
    PruneRecord,
)
from .errors import ConfigError, ShapeError, TrainingDivergedError
from .metrics import psnr, ssim, ssim_backward
from .optim import RAdam
from .render import RenderOptions, SceneGrads, backtrack_errors, rasterize_backward, render_view


@dataclass
class TrainConfig:
    keyframe_interval: int = 10
    initial_duration: int = 10
    extend_every: int = 400
    total_iterations: int = 30000
    reg_static: float = 1e-4
    reg_dynamic: float = 1e-4
    eta_percent: float = 2.0
    rho: int = 3
    ssim_weight: float = 0.2
    prune_kappa: float = 2.0
    prune_every: int = 500
    extract_every: int = 2000
    densify_from: int = 500
    densify_until: int = 15000
    densify_every: int = 100
    densify_grad_threshold: float = 2e-4
    densify_size_fraction: float = 0.01
    opacity_cull: float = 0.005
    lr_position: float = 1.6e-4
    lr_position_final: float = 1.6e-6
    lr_opacity: float = 0.05
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_sh: float = 2.5e-3
    lr_temporal: float = 5e-3
    sh_degree: int = 1
    seed: int = 0

    def validate(self, total_frames: int | None = None):
        if self.initial_duration < self.keyframe_interval:
            raise ConfigError("initial_duration must be >= keyframe_interval")
        if self.keyframe_interval < 1 or self.extend_every < 1 or self.total_iterations < 1:
            raise ConfigError("schedule values must be positive")
        for name in ("lr_position", "lr_opacity", "lr_scale", "lr_rotation", "lr_sh", "lr_temporal"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be > 0")
        if not 0.0 <= self.ssim_weight <= 1.0:
            raise ConfigError("ssim_weight must lie in [0, 1]")
        if not 0.0 < self.eta_percent < 100.0:
            raise ConfigError("eta_percent must lie in (0, 100)")
        if total_frames is not None and self.initial_duration > total_frames:
            raise ConfigError("initial_duration exceeds the dataset length")


def extension_iterations(cfg: TrainConfig, total_frames: int) -> list[int]:
    """Iterations at which the duration grows; the k-th extension lands at
    k * extend_every and adds one keyframe interval (clamped at the end)."""
    n_ext = max(0, math.ceil((total_frames - cfg.initial_duration) / cfg.keyframe_interval))
    return [k * cfg.extend_every for k in range(1, n_ext + 1)]


# ---------------------------------------------------------------------------
# loss + regularization
# ---------------------------------------------------------------------------

def loss(rendered: np.ndarray, ground_truth: np.ndarray, ssim_weight: float = 0.2,
         data_range: float = 1.0):
    """(1 - w) L1 + w (1 - SSIM), its image gradient, and the per-pixel
    error map q used for error backtracking.

    q blends the channel-mean absolute error and the SSIM dissimilarity map
    half-and-half.
    """
    if rendered.shape != ground_truth.shape:
        raise ShapeError(f"loss shapes differ: {rendered.shape} vs {ground_truth.shape}")
    diff = rendered - ground_truth
    l1 = float(np.mean(np.abs(diff)))
    w = ssim_weight
    if w > 0.0:
        s_mean, s_map = ssim(rendered, ground_truth, data_range)
        value = (1.0 - w) * l1 + w * (1.0 - s_mean)
        d_img = (1.0 - w) * np.sign(diff) / diff.size - w * ssim_backward(rendered, ground_truth, data_range)
    else:
        s_map = np.ones(rendered.shape[:2])
        value = l1
        d_img = np.sign(diff) / diff.size
    q = 0.5 * np.mean(np.abs(diff), axis=-1) + 0.5 * (1.0 - s_map)
    return value, d_img, q


def regularization(scene: SceneModel, reg_static: float, reg_dynamic: float) -> float:
    """reg_static * sum |d|  +  reg_dynamic * sum |p_{n+1} - p_n|."""
    val = reg_static * float(np.sum(np.linalg.norm(scene.statics.translation, axis=-1)))
    if len(scene.dynamics):
        seg = np.diff(scene.dynamics.key_pos, axis=1)
        val += reg_dynamic * float(np.sum(np.linalg.norm(seg, axis=-1)))
    return val


def add_regularization_grads(scene: SceneModel, grads: SceneGrads,
                             reg_static: float, reg_dynamic: float) -> float:
    """Accumulate the regularizer's analytic gradient; returns its value."""
    d = scene.statics.translation
    norms = np.linalg.norm(d, axis=-1, keepdims=True)
    grads.static["translation"] += reg_static * d / np.maximum(norms, 1e-12)
    val = reg_static * float(norms.sum())
    if len(scene.dynamics):
        seg = np.diff(scene.dynamics.key_pos, axis=1)
        snorm = np.linalg.norm(seg, axis=-1, keepdims=True)
        unit = seg / np.maximum(snorm, 1e-12)
        g = grads.dynamic["key_pos"]
        g[:, 1:, :] += reg_dynamic * unit
        g[:, :-1, :] -= reg_dynamic * unit
        val += reg_dynamic * float(snorm.sum())
    return val


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

_LR_GROUP = {
    ("static", "pivot"): "position",
    ("static", "translation"): "position",
    ("static", "log_scale"): "scale",
    ("static", "rotation"): "rotation",
    ("static", "opacity_logit"): "opacity",
    ("static", "sh"): "sh",
    ("dynamic", "key_pos"): "position",
    ("dynamic", "key_rot"): "rotation",
    ("dynamic", "log_scale"): "scale",
    ("dynamic", "opacity_logit"): "opacity",
    ("dynamic", "sh"): "sh",
    ("dynamic", "appear_mean"): "temporal",
    ("dynamic", "appear_log_width"): "temporal",
    ("dynamic", "vanish_mean"): "temporal",
    ("dynamic", "vanish_log_width"): "temporal",
}


class TrainState:
    def __init__(self, scene: SceneModel, config: TrainConfig, extent: float = 1.0):
        config.validate(scene.total_frames)
        self.scene = scene
        self.config = config
        self.extent = float(extent)
        self.optimizer = RAdam()
        self.iteration = 0
        self.rng = np.random.default_rng(config.seed)
        self.render_opts = RenderOptions()
        self._alloc_buffers()

    def _alloc_buffers(self):
        ns, nd = len(self.scene.statics), len(self.scene.dynamics)
        self.screen_sum = {"static": np.zeros(ns), "dynamic": np.zeros(nd)}
        self.screen_cnt = {"static": np.zeros(ns), "dynamic": np.zeros(nd)}
        self.bt_err = {"static": np.zeros(ns), "dynamic": np.zeros(nd)}
        self.bt_views = {"static": np.zeros(ns, np.int64), "dynamic": np.zeros(nd, np.int64)}

    # -- learning rates -------------------------------------------------

    def lr(self, group: str) -> float:
        c = self.config
        if group == "position":
            lr0 = c.lr_position * self.extent
            lrf = c.lr_position_final * self.extent
            frac = min(self.iteration / max(c.total_iterations, 1), 1.0)
            return lr0 * (lrf / lr0) ** frac
        return {
            "opacity": c.lr_opacity, "scale": c.lr_scale, "rotation": c.lr_rotation,
            "sh": c.lr_sh, "temporal": c.lr_temporal,
        }[group]

    # -- structural bookkeeping -----------------------------------------

    def _remap(self, pop: str, keep_idx: np.ndarray, n_new: int):
        arrays = self.scene.statics.arrays() if pop == "static" else self.scene.dynamics.arrays()
        for name in arrays:
            self.optimizer.remap_rows(f"{pop}/{name}", keep_idx, n_new)
        for buf in (self.screen_sum, self.screen_cnt, self.bt_err, self.bt_views):
            kept = buf[pop][keep_idx]
            if n_new:
                kept = np.concatenate([kept, np.zeros(n_new, dtype=kept.dtype)])
            buf[pop] = kept

    def moments_parallel(self) -> bool:
        """True when every moment buffer matches its parameter's shape."""
        for pop, arrays in (("static", self.scene.statics.arrays()),
                            ("dynamic", self.scene.dynamics.arrays())):
            for name, arr in arrays.items():
                key = f"{pop}/{name}"
                if key in self.optimizer.m and self.optimizer.m[key].shape != arr.shape:
                    return False
        return True


# ---------------------------------------------------------------------------
# one optimization step
# ---------------------------------------------------------------------------

def train_step(state: TrainState, view, ground_truth: np.ndarray) -> dict:
    """Render the view, backprop the loss, apply the rectified-moment update
    and constraint projections, and accumulate densification/backtracking
    statistics.  Returns step metrics."""
    scene = state.scene
    cfg = state.config
    t0 = time.perf_counter()

    out = render_view(scene, view, view.timestamp, state.render_opts)
    lval, d_img, q = loss(out.image, ground_truth, cfg.ssim_weight)
    grads = rasterize_backward(out, d_img)
    rval = add_regularization_grads(scene, grads, cfg.reg_static, cfg.reg_dynamic)
    total = lval + rval
    if not math.isfinite(total):
        raise TrainingDivergedError(
            f"non-finite loss {total} at iteration {state.iteration + 1}")

    opt = state.optimizer
    opt.begin_step()
    for (pop, name), group in _LR_GROUP.items():
        params = getattr(scene.statics if pop == "static" else scene.dynamics, name)
        g = grads.static[name] if pop == "static" else grads.dynamic[name]
        if params.size:
            opt.update(f"{pop}/{name}", params, g, state.lr(group))

    _project_constraints(scene)

    # densification statistics (screen-space positional gradients)
    real = out.real
    vis = out.visible
    sg = out.screen_grad
    ns = real.n_static
    np.add.at(state.screen_sum["static"], real.src_idx[:ns][vis[:ns]], sg[:ns][vis[:ns]])
    np.add.at(state.screen_cnt["static"], real.src_idx[:ns][vis[:ns]], 1.0)
    dyn_vis = vis[ns:]
    np.add.at(state.screen_sum["dynamic"], real.src_idx[ns:][dyn_vis], sg[ns:][dyn_vis])
    np.add.at(state.screen_cnt["dynamic"], real.src_idx[ns:][dyn_vis], 1.0)

    # backtracking records
    errs, evis = backtrack_errors(out, q)
    np.add.at(state.bt_err["static"], real.src_idx[:ns][evis[:ns]], errs[:ns][evis[:ns]])
    np.add.at(state.bt_views["static"], real.src_idx[:ns][evis[:ns]], 1)
    np.add.at(state.bt_err["dynamic"], real.src_idx[ns:][evis[ns:]], errs[ns:][evis[ns:]])
    np.add.at(state.bt_views["dynamic"], real.src_idx[ns:][evis[ns:]], 1)

    state.iteration += 1
    return {
        "iteration": state.iteration,
        "loss": total,
        "image_loss": lval,
        "psnr_train": psnr(out.image, ground_truth),
        "duration": scene.duration_frames,
        "n_static": len(scene.statics),
        "n_dynamic": len(scene.dynamics),
        "step_s": time.perf_counter() - t0,
    }


def _project_constraints(scene: SceneModel):
    st, dy = scene.statics, scene.dynamics
    if len(st):
        norms = np.linalg.norm(st.rotation, axis=-1, keepdims=True)
        bad = norms[:, 0] < 1e-12
        st.rotation[bad] = (1.0, 0.0, 0.0, 0.0)
        st.rotation = quat_normalize(st.rotation)
    if len(dy):
        norms = np.linalg.norm(dy.key_rot, axis=-1, keepdims=True)
        bad = norms[..., 0] < 1e-12
        dy.key_rot[bad] = (1.0, 0.0, 0.0, 0.0)
        dy.key_rot = align_quaternion_signs(quat_normalize(dy.key_rot))
        swap = dy.appear_mean > dy.vanish_mean
        if np.any(swap):
            a, b = dy.appear_mean[swap].copy(), dy.vanish_mean[swap].copy()
            dy.appear_mean[swap], dy.vanish_mean[swap] = b, a
            la, lb = dy.appear_log_width[swap].copy(), dy.vanish_log_width[swap].copy()
            dy.appear_log_width[swap], dy.vanish_log_width[swap] = lb, la
        np.maximum(dy.appear_log_width, LOG_WIDTH_FLOOR, out=dy.appear_log_width)
        np.maximum(dy.vanish_log_width, LOG_WIDTH_FLOOR, out=dy.vanish_log_width)


# ---------------------------------------------------------------------------
# densification
# ---------------------------------------------------------------------------

def _clone_opacity(logit: np.ndarray) -> np.ndarray:
    """Split o into two stacked copies o' with 1 - (1-o')^2 == o."""
    o = expit(logit)
    o2 = np.clip(1.0 - np.sqrt(1.0 - o), 1e-6, 1.0 - 1e-6)
    return np.log(o2 / (1.0 - o2))


def densify_and_prune(state: TrainState) -> dict:
    """Clone small high-gradient Gaussians, split large ones (scale / 1.6),
    and drop those with effective opacity below the cull threshold."""
    cfg = state.config
    report = {}
    size_thr = cfg.densify_size_fraction * state.extent

    for pop in ("static", "dynamic"):
        pset = state.scene.statics if pop == "static" else state.scene.dynamics
        n = len(pset)
        if n == 0:
            report[pop] = {"clones": 0, "splits": 0, "removed": 0}
            continue
        cnt = np.maximum(state.screen_cnt[pop], 1.0)
        mean_grad = state.screen_sum[pop] / cnt
        high = (mean_grad > cfg.densify_grad_threshold) & (state.screen_cnt[pop] > 0)
        max_scale = np.exp(pset.log_scale).max(axis=1)
        clone = high & (max_scale < size_thr)
        split = high & (max_scale >= size_thr)
        low_opacity = expit(pset.opacity_logit) < cfg.opacity_cull

        keep_mask = ~split & ~low_opacity
        keep_idx = np.nonzero(keep_mask)[0]
        clone_idx = np.nonzero(clone & keep_mask)[0]
        split_idx = np.nonzero(split & ~low_opacity)[0]

        new_sets = []
        if len(clone_idx):
            dup = pset.select(clone_idx)
            adjusted = _clone_opacity(pset.opacity_logit[clone_idx])
            dup.opacity_logit = adjusted.copy()
            new_sets.append(dup)
        if len(split_idx):
            for _ in range(2):
                child = pset.select(split_idx)
                rot0 = child.rotation if pop == "static" else child.key_rot[:, 0, :]
                R = quat_to_rotmat(quat_normalize(rot0))
                local = state.rng.normal(0.0, 1.0, (len(split_idx), 3)) * np.exp(child.log_scale)
                offset = np.einsum("nij,nj->ni", R, local)
                if pop == "static":
                    child.pivot = child.pivot + offset
                else:
                    child.key_pos = child.key_pos + offset[:, None, :]
                child.log_scale = child.log_scale - math.log(1.6)
                new_sets.append(child)

        base = pset.select(keep_idx)
        if len(clone_idx):
            # parent of a clone gets the same adjusted opacity as its copy
            pos_in_keep = np.searchsorted(keep_idx, clone_idx)
            base.opacity_logit[pos_in_keep] = _clone_opacity(pset.opacity_logit[clone_idx])
        merged = base
        for s in new_sets:
            merged = merged.append(s)
        n_new = sum(len(s) for s in new_sets)
        state._remap(pop, keep_idx, n_new)
        if pop == "static":
            state.scene.statics = merged
        else:
            state.scene.dynamics = merged
        report[pop] = {
            "clones": int(len(clone_idx)),
            "splits": int(len(split_idx)),
            "removed": int(n - len(keep_idx) - len(split_idx)),
        }
        state.screen_sum[pop] = np.zeros(len(merged))
        state.screen_cnt[pop] = np.zeros(len(merged))
    return report


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

class MetricsLogger:
    """Line-delimited JSON log with a buffered writer thread; the trainer
    never blocks on flushes."""

    def __init__(self, path=None):
        self.records: list[dict] = []
        self._queue: queue.Queue | None = None
        self._thread = None
        if path is not None:
            self._queue = queue.Queue()
            self._file = open(path, "w")
            self._thread = threading.Thread(target=self._drain, daemon=True)
            self._thread.start()

    def _drain(self):
        while True:
            rec = self._queue.get()
            if rec is None:
                break
            self._file.write(json.dumps(rec) + "\n")

    def write(self, rec: dict):
        self.records.append(rec)
        if self._queue is not None:
            self._queue.put(rec)

    def close(self):
        if self._thread is not None:
            self._queue.put(None)
            self._thread.join()
            self._file.close()
            self._thread = None


def _reference_camera(scene: SceneModel, cameras):
    pts = [scene.statics.pivot]
    if len(scene.dynamics):
        pts.append(scene.dynamics.key_pos[:, 0, :])
    centroid = np.concatenate(pts, axis=0).mean(axis=0)
    dists = [float(np.linalg.norm(c.center - centroid)) for c in cameras]
    return cameras[int(np.argmin(dists))]


def _gather_records(state: TrainState) -> list[PruneRecord]:
    records = []
    for pop in ("static", "dynamic"):
        views = state.bt_views[pop]
        errs = state.bt_err[pop]
        for gid in np.nonzero(views > 0)[0]:
            records.append(PruneRecord(
                gaussian_id=int(gid), population=pop,
                e_total=float(errs[gid] / views[gid]), views_seen=int(views[gid]),
            ))
    return records


def _clear_backtracking(state: TrainState):
    for pop in ("static", "dynamic"):
        state.bt_err[pop][:] = 0.0
        state.bt_views[pop][:] = 0


def _extract_event(state: TrainState, cameras) -> int:
    scene = state.scene
    if len(scene.statics) == 0:
        return 0
    ref = _reference_camera(scene, cameras)
    scores = score_motion(scene, ref)
    nd_old = len(scene.dynamics)
    rep = extract_dynamic(scene, scores, state.config.eta_percent)
    if rep.n_converted:
        state._remap("static", rep.static_keep, 0)
        state._remap("dynamic", np.arange(nd_old), rep.n_converted)
    return rep.n_converted


def run(config: TrainConfig, dataset: DatasetManifest, out_dir=None,
        *, scene: SceneModel | None = None, progress=False):
    """Full progressive training on a dataset.

    Returns (scene, metrics records).  Writes metrics.jsonl plus
    per-extension and final checkpoints when out_dir is given.
    """
    config.validate(dataset.frames)
    dataset.validate_images()
    if scene is None:
        scene = seed_from_dataset(
            dataset, initial_duration=config.initial_duration,
            keyframe_interval=config.keyframe_interval, sh_degree=config.sh_degree)
    state = TrainState(scene, config, extent=dataset.camera_extent())

    out_path = None
    if out_dir is not None:
        from pathlib import Path
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
    logger = MetricsLogger(out_path / "metrics.jsonl" if out_path else None)

    train_cams = dataset.train_cameras
    if not train_cams:
        raise ConfigError("no training cameras (all held out)")
    extensions = set(extension_iterations(config, dataset.frames))

    def save_ckpt(tag):
        if out_path is not None:
            ckpt_io.save(out_path / f"checkpoint_{tag}.ckpt", scene,
                         config=config, iteration=state.iteration,
                         optimizer=state.optimizer)

    try:
        for it in range(1, config.total_iterations + 1):
            cam_t = train_cams[state.rng.integers(len(train_cams))]
            frame = int(state.rng.integers(scene.duration_frames))
            view = cam_t.at(frame)
            gt = dataset.load_view(cam_t.cam_id, frame)
            rec = train_step(state, view, gt)
            events = []

            if it in extensions and scene.duration_frames < scene.total_frames:
                new_dur = min(scene.duration_frames + config.keyframe_interval,
                              scene.total_frames)
                exp = expand_duration(scene, new_dur, config.rho)
                state.optimizer.expand_columns("dynamic/key_pos", exp.keyframes_added)
                state.optimizer.expand_columns("dynamic/key_rot", exp.keyframes_added)
                events.append(f"extend:{exp.old_duration}->{exp.new_duration}")
                n_conv = _extract_event(state, train_cams)
                events.append(f"extract:{n_conv}")
                save_ckpt(f"{it:06d}")
            elif config.extract_every and it % config.extract_every == 0:
                n_conv = _extract_event(state, train_cams)
                events.append(f"extract:{n_conv}")

            if (config.densify_from <= it <= config.densify_until
                    and it % config.densify_every == 0):
                dp = densify_and_prune(state)
                events.append(
                    "densify:" + ",".join(
                        f"{p}+{v['clones'] + 2 * v['splits']}-{v['removed'] + v['splits']}"
                        for p, v in dp.items()))

            if config.prune_every and it % config.prune_every == 0:
                records = _gather_records(state)
                rep = prune_by_backtracking(scene, records, config.prune_kappa)
                if rep.n_pruned_static or rep.n_pruned_dynamic:
                    state._remap("static", rep.static_keep, 0)
                    state._remap("dynamic", rep.dynamic_keep, 0)
                    events.append(f"backtrack_prune:{rep.n_pruned_static}+{rep.n_pruned_dynamic}")
                _clear_backtracking(state)

            if events:
                rec["events"] = events
            logger.write(rec)
            if progress and (it % 200 == 0 or events):
                print(f"[{it}] loss={rec['loss']:.5f} psnr={rec['psnr_train']:.2f} "
                      f"dur={rec['duration']} ns={rec['n_static']} nd={rec['n_dynamic']} "
                      f"{' '.join(events)}", flush=True)
        save_ckpt("final")
    finally:
        logger.close()
    return scene, logger.records
