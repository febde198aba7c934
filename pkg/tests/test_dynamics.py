import math

import numpy as np
import pytest

from splat4d.core import CameraView
from splat4d.dynamics import (
    MotionScore, PruneRecord, expand_duration, extract_dynamic,
    prune_by_backtracking, score_motion,
)
from splat4d.errors import CapacityError, DegenerateGeometryError
from splat4d.interp import TimeQuery, track_position
from splat4d.render import RenderOptions, render_view
from conftest import make_camera, make_scene, make_static_set, rel_err

from splat4d.core import DynamicSet, SceneModel


def _static_scene(rng, n=100, duration=20, total=60, interval=10):
    scene = SceneModel(
        statics=make_static_set(rng, n),
        dynamics=DynamicSet.empty(1, 3),
        duration_frames=duration, total_frames=total, keyframe_interval=interval,
    )
    return scene


# ---------------------------------------------------------------------------
# motion scoring
# ---------------------------------------------------------------------------

def test_score_zero_translation(rng):
    scene = _static_scene(rng, 10)
    scene.statics.translation[:] = 0.0
    scores = score_motion(scene, make_camera(dist=4.0))
    assert all(s.score == 0.0 for s in scores)


def test_score_arithmetic():
    # |d| = 0.1 at distance 2 -> 0.1 / 4 = 0.025
    rng = np.random.default_rng(0)
    scene = _static_scene(rng, 1)
    cam = make_camera(dist=2.0)  # camera center (0, 0, -2)
    t_last = (scene.duration_frames - 1) / scene.duration_frames
    d = np.array([0.1, 0.0, 0.0])
    scene.statics.translation[0] = d
    scene.statics.pivot[0] = -t_last * d  # last-frame position at the origin
    scores = score_motion(scene, cam)
    assert rel_err(scores[0].score, 0.1 / 4.0) < 1e-12


def test_score_inverse_square(rng):
    scene = _static_scene(rng, 2)
    cam = make_camera(dist=0.0)  # camera at the origin
    t_last = (scene.duration_frames - 1) / scene.duration_frames
    d = np.array([0.05, 0.0, 0.0])
    scene.statics.translation[:] = d
    scene.statics.pivot[0] = np.array([0.0, 0.0, 1.0]) - t_last * d
    scene.statics.pivot[1] = np.array([0.0, 0.0, 2.0]) - t_last * d
    scores = score_motion(scene, cam)
    assert rel_err(scores[0].score / scores[1].score, 4.0) < 1e-12


def test_score_degenerate_geometry(rng):
    scene = _static_scene(rng, 3)
    cam = make_camera(dist=4.0)
    t_last = (scene.duration_frames - 1) / scene.duration_frames
    scene.statics.translation[1] = 0.0
    scene.statics.pivot[1] = cam.center
    with pytest.raises(DegenerateGeometryError):
        score_motion(scene, cam)


def test_score_scale_covariance(rng):
    # scaling every d by c scales every score by c at fixed last-frame
    # geometry, so the top-percentile set is unchanged
    scene = _static_scene(rng, 50)
    cam = make_camera(dist=4.0)
    t_last = (scene.duration_frames - 1) / scene.duration_frames
    finals = rng.normal(0, 0.8, (50, 3))
    d = rng.normal(0, 0.3, (50, 3))
    scene.statics.translation[:] = d
    scene.statics.pivot[:] = finals - t_last * d
    base = np.array([s.score for s in score_motion(scene, cam)])
    scene.statics.translation[:] = 3.0 * d
    scene.statics.pivot[:] = finals - t_last * 3.0 * d
    scaled = np.array([s.score for s in score_motion(scene, cam)])
    assert np.allclose(scaled, 3.0 * base, rtol=1e-12)
    assert np.array_equal(np.argsort(-scaled), np.argsort(-base))


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

def test_extract_top_two_of_hundred(rng):
    scene = _static_scene(rng, 100)
    cam = make_camera(dist=4.0)
    scene.statics.translation[:] = 0.0
    scene.statics.translation[17] = [1.0, 0, 0]
    scene.statics.translation[42] = [0.8, 0, 0]
    scores = score_motion(scene, cam)
    rep = extract_dynamic(scene, scores, 2.0)
    assert rep.n_converted == 2
    assert set(rep.converted_ids.tolist()) == {17, 42}
    assert len(scene.statics) == 98
    assert len(scene.dynamics) == 2


def test_extract_conserves_count(rng):
    scene = make_scene(rng, n_static=50, n_dynamic=7, n_keyframes=4, duration=30)
    total = len(scene.statics) + len(scene.dynamics)
    scores = score_motion(scene, make_camera(dist=4.0))
    extract_dynamic(scene, scores, 10.0)
    assert len(scene.statics) + len(scene.dynamics) == total


def test_extract_empty_or_tiny_noop(rng):
    scene = _static_scene(rng, 10)
    scores = score_motion(scene, make_camera(dist=4.0))
    rep = extract_dynamic(scene, scores, 2.0)  # 10 * 2% -> 0
    assert rep.n_converted == 0
    assert len(scene.statics) == 10


def test_extract_keyframes_sample_linear_motion(rng):
    scene = _static_scene(rng, 50, duration=20, interval=10)
    scene.statics.translation[:] = 0.0
    scene.statics.pivot[3] = [0.0, 0.0, 0.0]
    scene.statics.translation[3] = [1.0, 0.0, 0.0]
    scores = score_motion(scene, make_camera(dist=4.0))
    rep = extract_dynamic(scene, scores, 2.0)
    assert rep.converted_ids.tolist() == [3]
    # keyframe positions are x + (nI/l) d: I/l = 0.5 here
    kp = scene.dynamics.key_pos[0]
    assert np.allclose(kp[:, 0], [0.0, 0.5, 1.0])
    # rotation identical in all keyframes; opacity plateau spans [0, 1]
    assert np.allclose(scene.dynamics.key_rot[0], scene.dynamics.key_rot[0, 0][None])
    assert scene.dynamics.appear_mean[0] == 0.0
    assert scene.dynamics.vanish_mean[0] == 1.0
    assert np.allclose(np.exp(scene.dynamics.appear_log_width[0]), 0.5)


def test_extract_tie_breaks_by_lower_id(rng):
    scene = _static_scene(rng, 100)
    scene.statics.translation[:] = 0.0
    t_last = (scene.duration_frames - 1) / scene.duration_frames
    cam = make_camera(dist=4.0)
    # equal scores for ids 30, 31, 32 (same |d|, same last-frame position);
    # the 2% cut keeps the two lowest ids
    d = np.array([0.5, 0.0, 0.0])
    for gid in (30, 31, 32):
        scene.statics.translation[gid] = d
        scene.statics.pivot[gid] = -t_last * d
    scores = score_motion(scene, cam)
    rep = extract_dynamic(scene, scores, 2.0)
    assert rep.converted_ids.tolist() == [30, 31]


def test_conversion_roundtrip_fidelity(rng):
    # converted track positions equal the former static positions at every
    # keyframe time within 1e-9
    scene = _static_scene(rng, 50, duration=20, interval=10)
    scores = score_motion(scene, make_camera(dist=4.0))
    gid = int(np.argmax([s.score for s in scores]))
    x = scene.statics.pivot[gid].copy()
    d = scene.statics.translation[gid].copy()
    rep = extract_dynamic(scene, scores, 2.0)
    assert gid in rep.converted_ids.tolist()
    row = rep.converted_ids.tolist().index(gid)
    track = scene.dynamic(row).track
    l = scene.duration_frames
    for n in range(track.n_keyframes):
        frame = n * scene.keyframe_interval
        expected = x + (frame / l) * d
        if frame < l:
            q = TimeQuery.at(frame, l, scene.keyframe_interval)
            got = track_position(track, q)
            assert np.max(np.abs(got - expected)) < 1e-9
        assert np.max(np.abs(track.positions[n] - expected)) < 1e-12


# ---------------------------------------------------------------------------
# duration expansion
# ---------------------------------------------------------------------------

def _dyn_scene(rng, n=5, n_kf=3, duration=20, total=60, interval=10):
    return make_scene(rng, n_static=4, n_dynamic=n, n_keyframes=n_kf,
                      duration=duration, total=total, interval=interval)


def test_expand_collinear_exact(rng):
    scene = _dyn_scene(rng)
    v = np.array([0.2, -0.1, 0.05])
    scene.dynamics.key_pos[:] = np.arange(3)[None, :, None] * v[None, None, :]
    expand_duration(scene, 30, rho=3)
    assert scene.dynamics.n_keyframes == 4
    assert np.allclose(scene.dynamics.key_pos[:, 3, :], 3 * v, atol=1e-12)


def test_expand_constant_track(rng):
    scene = _dyn_scene(rng)
    scene.dynamics.key_pos[:] = scene.dynamics.key_pos[:, :1, :]
    expand_duration(scene, 30, rho=2)
    assert np.allclose(scene.dynamics.key_pos[:, 3, :], scene.dynamics.key_pos[:, 0, :])


def test_expand_least_squares_oracle(rng):
    # closed form over x in {0,1,2}, y = (0, 1, 2.2): slope 1.1,
    # intercept -1/30, extrapolation 49/15 = 3.2666...
    scene = _dyn_scene(rng, n=1)
    scene.dynamics.key_pos[0, :, 0] = [0.0, 1.0, 2.2]
    scene.dynamics.key_pos[0, :, 1:] = 0.0
    expand_duration(scene, 30, rho=3)
    assert abs(scene.dynamics.key_pos[0, 3, 0] - 49.0 / 15.0) < 1e-9


def test_expand_rescales_normalized_time(rng):
    scene = _dyn_scene(rng, duration=20)
    d_before = scene.statics.translation.copy()
    a_before = scene.dynamics.appear_mean.copy()
    w_before = np.exp(scene.dynamics.appear_log_width.copy())
    expand_duration(scene, 30, rho=3)
    assert np.allclose(scene.statics.translation, d_before * 30 / 20)
    assert np.allclose(scene.dynamics.appear_mean, a_before * 20 / 30)
    assert np.allclose(np.exp(scene.dynamics.appear_log_width), w_before * 20 / 30)


def test_expand_preserves_previous_renders(rng):
    scene = _dyn_scene(rng, duration=20, total=60)
    cam = make_camera(width=24, height=24)
    before = {t: render_view(scene, cam, t).image for t in (0, 7, 19)}
    expand_duration(scene, 30, rho=3)
    for t, img in before.items():
        after = render_view(scene, cam, t).image
        assert np.max(np.abs(after - img)) < 1e-6


def test_expand_capacity_error(rng):
    scene = _dyn_scene(rng, duration=20, total=25)
    with pytest.raises(CapacityError):
        expand_duration(scene, 30)


def test_expand_duration_monotone(rng):
    scene = _dyn_scene(rng, duration=20, total=25)
    with pytest.raises(CapacityError):
        expand_duration(scene, 10)


# ---------------------------------------------------------------------------
# backtracking prune
# ---------------------------------------------------------------------------

def _records(values, pop="static"):
    return [PruneRecord(gaussian_id=i, population=pop, e_total=float(v), views_seen=3)
            for i, v in enumerate(values)]


def test_prune_all_equal_no_removal(rng):
    scene = _static_scene(rng, 20)
    rep = prune_by_backtracking(scene, _records(np.full(20, 0.5)), kappa=1.5)
    assert rep.n_pruned_static == 0
    assert len(scene.statics) == 20


def test_prune_single_outlier(rng):
    scene = _static_scene(rng, 20)
    vals = np.full(20, 0.1)
    vals[7] = 1.0  # 10x the median
    rep = prune_by_backtracking(scene, _records(vals), kappa=2.0)
    assert rep.n_pruned_static == 1
    assert 7 not in rep.static_keep
    assert len(scene.statics) == 19


def test_prune_cap_ten_percent(rng):
    scene = _static_scene(rng, 1000)
    vals = np.full(1000, 0.1)
    vals[:200] = 10.0  # 200 above threshold
    vals[:100] += np.arange(100)[::-1] * 0.01  # make the first 100 the worst
    rep = prune_by_backtracking(scene, _records(vals), kappa=2.0)
    assert rep.n_pruned_static == 100
    assert len(scene.statics) == 900
    assert all(g < 100 for g in np.setdiff1d(np.arange(1000), rep.static_keep))


def test_prune_idempotent_on_survivors(rng):
    # bulk + outliers: removing the outliers once converges
    scene = _static_scene(rng, 60)
    vals = np.concatenate([np.full(55, 0.2) + rng.uniform(-0.02, 0.02, 55),
                           np.full(5, 3.0)])
    rep = prune_by_backtracking(scene, _records(vals), kappa=2.0)
    assert rep.n_pruned_static == 5
    survivors = vals[rep.static_keep]
    rep2 = prune_by_backtracking(
        scene,
        [PruneRecord(int(i), "static", float(v), 3) for i, v in enumerate(survivors)],
        kappa=2.0)
    assert rep2.n_pruned_static == 0


def test_prune_ignores_unseen(rng):
    scene = _static_scene(rng, 20)
    recs = _records(np.full(20, 0.1))
    recs.append(PruneRecord(5, "static", 100.0, views_seen=0))  # not prunable
    rep = prune_by_backtracking(scene, recs, kappa=2.0)
    assert rep.n_pruned_static == 0


def test_prune_both_populations(rng):
    scene = make_scene(rng, n_static=30, n_dynamic=30, n_keyframes=3, duration=20)
    recs = _records(np.full(30, 0.1), "static") + _records(np.full(30, 0.1), "dynamic")
    recs[3] = PruneRecord(3, "static", 5.0, 2)
    recs[33] = PruneRecord(3, "dynamic", 5.0, 2)
    rep = prune_by_backtracking(scene, recs, kappa=2.0)
    assert rep.n_pruned_static == 1 and rep.n_pruned_dynamic == 1
    assert len(scene.statics) == 29 and len(scene.dynamics) == 29
