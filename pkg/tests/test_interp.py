import math

import numpy as np
import pytest

from splat4d.core import KeyframeTrack, StaticGaussian, GaussianCommon, TemporalOpacity, quat_normalize
from splat4d.errors import OutOfRangeError
from splat4d.interp import (
    TimeQuery, chip, chip_grads, hermite_basis, slerp, slerp_batch,
    slerp_batch_backward, static_position, static_position_grads,
    temporal_opacity, temporal_opacities, temporal_opacity_grads,
    track_position, track_position_grads, track_rotation,
)
from conftest import rel_err


def _track(positions, interval=10, rotations=None):
    positions = np.asarray(positions, float)
    n = positions.shape[0]
    if rotations is None:
        rotations = np.zeros((n, 4))
        rotations[:, 0] = 1.0
    return KeyframeTrack(positions=positions, rotations=np.asarray(rotations, float),
                         interval=interval)


def _static(x, d):
    return StaticGaussian(
        common=GaussianCommon(scale=np.zeros(3), rotation_base=np.array([1.0, 0, 0, 0]),
                              opacity_base=0.0, sh_coeffs=np.zeros((1, 3))),
        pivot=np.asarray(x, float), translation=np.asarray(d, float),
    )


def _query(frame, duration, interval):
    return TimeQuery.at(frame, duration, interval)


# ---------------------------------------------------------------------------
# static linear motion
# ---------------------------------------------------------------------------

def test_static_position_endpoints():
    g = _static([1, 2, 3], [1, 0, 0])
    q0 = TimeQuery(frame=0, normalized=0.0, segment=0, local=0.0)
    q1 = TimeQuery(frame=0, normalized=1.0, segment=0, local=0.0)
    assert np.allclose(static_position(g, q0), [1, 2, 3])
    assert np.allclose(static_position(g, q1), [2, 2, 3])


def test_static_position_midpoint():
    g = _static([0, 0, 0], [2, -2, 0])
    q = TimeQuery(frame=0, normalized=0.5, segment=0, local=0.0)
    assert np.allclose(static_position(g, q), [1, -1, 0])


def test_static_position_grads():
    q = TimeQuery(frame=3, normalized=0.3, segment=0, local=0.3)
    dx, dd = static_position_grads(q)
    assert np.allclose(dx, np.eye(3))
    assert np.allclose(dd, 0.3 * np.eye(3))


def test_timequery_fields():
    q = TimeQuery.at(17, 30, 10)
    assert q.segment == 1 and abs(q.local - 0.7) < 1e-15
    assert abs(q.normalized - 17 / 30) < 1e-15
    with pytest.raises(OutOfRangeError):
        TimeQuery.at(30, 30, 10)


# ---------------------------------------------------------------------------
# cubic Hermite
# ---------------------------------------------------------------------------

def test_chip_endpoints(rng):
    p0, m0, p1, m1 = rng.normal(0, 1, (4, 3))
    assert np.allclose(chip(p0, m0, p1, m1, 0.0), p0)
    assert np.allclose(chip(p0, m0, p1, m1, 1.0), p1)


def test_chip_midpoint_matches_basis_oracle():
    # independent evaluation of the four basis polynomials at t = 0.5
    t = 0.5
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    assert abs((h00 * 0.0 + h10 * 0.0 + h01 * 1.0 + h11 * 0.0) - 0.5) < 1e-15
    assert abs(chip(0.0, 0.0, 1.0, 0.0, 0.5) - 0.5) < 1e-15
    assert np.allclose(hermite_basis(0.5), (h00, h10, h01, h11))


def test_track_exact_at_keyframes(rng):
    pos = rng.normal(0, 1, (5, 3))
    track = _track(pos, interval=10)
    for n in range(4):
        q = _query(n * 10, 50, 10)
        assert np.max(np.abs(track_position(track, q) - pos[n])) < 1e-14


def test_track_linear_precision():
    # collinear keyframes p_n = n v: central tangents reproduce the line
    v = np.array([0.3, -0.2, 0.1])
    pos = np.arange(6)[:, None] * v[None, :]
    track = _track(pos, interval=10)
    for frame in range(50):
        q = _query(frame, 50, 10)
        expected = (frame / 10.0) * v
        assert np.max(np.abs(track_position(track, q) - expected)) < 1e-12


def test_track_beats_linear_interp_on_cubic():
    # keyframes sampled from a cubic; mid-segment error must undercut
    # piecewise-linear interpolation of the same samples (dense comparison)
    def poly(t):
        return np.stack([0.02 * t**3 - 0.3 * t**2 + t,
                         -0.01 * t**3 + 0.2 * t,
                         0.05 * t**2], axis=-1)

    interval = 10
    keys = poly(np.arange(4, dtype=float) * interval)
    track = _track(keys, interval=interval)
    frames = np.arange(interval, 2 * interval)  # interior segment
    chip_err = 0.0
    lin_err = 0.0
    for f in frames:
        q = _query(int(f), 40, interval)
        truth = poly(float(f))
        chip_err = max(chip_err, float(np.max(np.abs(track_position(track, q) - truth))))
        n = int(f) // interval
        u = (f - n * interval) / interval
        lin = (1 - u) * keys[n] + u * keys[n + 1]
        lin_err = max(lin_err, float(np.max(np.abs(lin - truth))))
    assert chip_err < lin_err


def test_track_c1_continuity(rng):
    pos = rng.normal(0, 1, (6, 3))
    track = _track(pos, interval=10)

    def eval_at(tf):  # continuous-time evaluation for derivative probing
        n = min(int(tf // 10), 4)
        u = (tf - n * 10) / 10
        idx, w = track_position_grads(track, TimeQuery(0, 0.0, n, u))
        return np.einsum("k,kd->d", w, pos[idx])

    h = 1e-6
    for boundary in (10.0, 20.0, 30.0, 40.0):
        left = (eval_at(boundary - h) - eval_at(boundary - 2 * h)) / h
        right = (eval_at(boundary + 2 * h) - eval_at(boundary + h)) / h
        assert np.max(np.abs(left - right)) < 1e-4


def test_track_out_of_range():
    track = _track(np.zeros((3, 3)), interval=10)
    with pytest.raises(OutOfRangeError):
        track_position(track, TimeQuery(frame=25, normalized=0.9, segment=2, local=0.5))


def test_chip_grads_vs_fd(rng):
    for _ in range(200):
        args = rng.normal(0, 1, (4, 3))
        t = rng.uniform(0, 1)
        w = chip_grads(t)
        h = 1e-5
        for i in range(4):
            for c in range(3):
                plus = args.copy(); plus[i, c] += h
                minus = args.copy(); minus[i, c] -= h
                fd = (chip(*plus, t)[c] - chip(*minus, t)[c]) / (2 * h)
                assert rel_err(fd, w[i]) < 1e-5


def test_track_position_grads_vs_fd(rng):
    for _ in range(100):
        pos = rng.normal(0, 1, (5, 3))
        track = _track(pos, interval=10)
        frame = int(rng.integers(0, 40))
        q = _query(frame, 40, 10)
        idx, w = track_position_grads(track, q)
        h = 1e-5
        g = np.zeros(5)
        for k in range(5):
            plus = pos.copy(); plus[k, 0] += h
            minus = pos.copy(); minus[k, 0] -= h
            g[k] = (track_position(_track(plus), q)[0]
                    - track_position(_track(minus), q)[0]) / (2 * h)
        dense = np.zeros(5)
        dense[idx] = w
        assert np.max(np.abs(dense - g)) < 1e-9


# ---------------------------------------------------------------------------
# slerp
# ---------------------------------------------------------------------------

def test_slerp_endpoints(rng):
    x0 = quat_normalize(rng.normal(0, 1, 4))
    x1 = quat_normalize(rng.normal(0, 1, 4))
    if np.dot(x0, x1) < 0:
        x1 = -x1
    assert np.allclose(slerp(x0, x1, 0.0), x0, atol=1e-12)
    assert np.allclose(slerp(x0, x1, 1.0), x1, atol=1e-12)


def test_slerp_degenerate_equal_inputs(rng):
    x = quat_normalize(rng.normal(0, 1, 4))
    for t in (0.0, 0.3, 0.7, 1.0):
        assert np.allclose(slerp(x, x, t), x, atol=1e-12)


def test_slerp_quarter_arc():
    # cos(Omega) = 0 -> Omega = pi/2; at t = 1/2 both weights are
    # sin(pi/4)/sin(pi/2) = sqrt(2)/2
    x0 = np.array([1.0, 0.0, 0.0, 0.0])
    x1 = np.array([0.0, 1.0, 0.0, 0.0])
    out = slerp(x0, x1, 0.5)
    s2 = math.sqrt(2) / 2
    assert np.allclose(out, [s2, s2, 0, 0], atol=1e-12)


def test_slerp_unit_norm_and_constant_velocity(rng):
    for _ in range(100):
        x0 = quat_normalize(rng.normal(0, 1, 4))
        x1 = quat_normalize(rng.normal(0, 1, 4))
        if np.dot(x0, x1) < 0:
            x1 = -x1
        omega = math.acos(np.clip(np.dot(x0, x1), -1, 1))
        for t in rng.uniform(0, 1, 5):
            q = slerp(x0, x1, float(t))
            assert abs(np.linalg.norm(q) - 1.0) < 1e-10
            ang = math.acos(np.clip(np.dot(q, x0), -1, 1))
            assert abs(ang - t * omega) < 1e-8


def test_track_rotation_boundaries_and_identity():
    rots = quat_normalize(np.array([[1, 0, 0, 0], [1, 0, 0, 1.0], [0, 0, 0, 1.0]]))
    track = _track(np.zeros((3, 3)), rotations=rots, interval=10)
    assert np.allclose(track_rotation(track, _query(10, 20, 10)), rots[1], atol=1e-12)
    same = _track(np.zeros((3, 3)), rotations=np.tile(rots[0], (3, 1)), interval=10)
    for f in (0, 5, 11, 19):
        assert np.allclose(track_rotation(same, _query(f, 20, 10)), rots[0], atol=1e-12)


def test_track_rotation_halfway_45deg():
    ident = np.array([1.0, 0, 0, 0])
    rot90z = np.array([math.cos(math.pi / 4), 0, 0, math.sin(math.pi / 4)])
    rot45z = np.array([math.cos(math.pi / 8), 0, 0, math.sin(math.pi / 8)])
    track = _track(np.zeros((2, 3)), rotations=np.stack([ident, rot90z]), interval=10)
    assert np.allclose(track_rotation(track, _query(5, 10, 10)), rot45z, atol=1e-12)


def test_slerp_batch_matches_scalar(rng):
    x0 = quat_normalize(rng.normal(0, 1, (50, 4)))
    x1 = quat_normalize(rng.normal(0, 1, (50, 4)))
    flip = np.sum(x0 * x1, axis=-1) < 0
    x1[flip] = -x1[flip]
    out = slerp_batch(x0, x1, 0.37)
    for i in range(50):
        assert np.allclose(out[i], slerp(x0[i], x1[i], 0.37), atol=1e-12)


def test_slerp_backward_vs_fd(rng):
    h = 1e-6
    for _ in range(50):
        x0 = rng.normal(0, 1, (1, 4))
        x1 = rng.normal(0, 1, (1, 4))
        if np.sum(quat_normalize(x0) * quat_normalize(x1)) < 0:
            x1 = -x1
        t = float(rng.uniform(0, 1))
        w = rng.normal(0, 1, (1, 4))

        def f():
            return float(np.sum(slerp_batch(quat_normalize(x0), quat_normalize(x1), t) * w))

        g0, g1 = slerp_batch_backward(x0, x1, t, w)
        for arr, g in ((x0, g0), (x1, g1)):
            for i in range(4):
                orig = arr[0, i]
                arr[0, i] = orig + h
                fp = f()
                arr[0, i] = orig - h
                fm = f()
                arr[0, i] = orig
                assert rel_err((fp - fm) / (2 * h), g[0, i], floor=1e-7) < 1e-4


def test_slerp_backward_fallback_regime(rng):
    # nearly identical endpoints: lerp fallback gradient
    x0 = quat_normalize(rng.normal(0, 1, (1, 4)))
    x1 = x0 + 1e-9
    w = rng.normal(0, 1, (1, 4))
    g0, g1 = slerp_batch_backward(x0, x1, 0.3, w)
    assert np.all(np.isfinite(g0)) and np.all(np.isfinite(g1))


# ---------------------------------------------------------------------------
# temporal opacity
# ---------------------------------------------------------------------------

def _topac(a_s=0.3, b_s=0.1, a_f=0.7, b_f=0.2):
    return TemporalOpacity(
        appear_mean=a_s, appear_log_width=math.log(b_s),
        vanish_mean=a_f, vanish_log_width=math.log(b_f),
    )


def test_temporal_opacity_plateau():
    o = _topac()
    assert temporal_opacity(o, 0.5) == 1.0
    assert temporal_opacity(o, 0.3) == 1.0
    assert temporal_opacity(o, 0.7) == 1.0


def test_temporal_opacity_one_width_out():
    # substitute t = a_s - b_s in the rising branch: exp(-1)
    o = _topac(a_s=0.3, b_s=0.1)
    assert abs(temporal_opacity(o, 0.2) - math.exp(-1.0)) < 1e-12
    o2 = _topac(a_f=0.7, b_f=0.2)
    assert abs(temporal_opacity(o2, 0.9) - math.exp(-1.0)) < 1e-12


def test_temporal_opacity_tails_vanish():
    o = _topac(a_s=0.3, b_s=0.05, a_f=0.7, b_f=0.05)
    assert temporal_opacity(o, 0.3 - 6 * 0.05) < 1e-12
    assert temporal_opacity(o, 0.7 + 6 * 0.05) < 1e-12


def test_temporal_opacity_monotonicity_and_range(rng):
    o = _topac()
    ts = np.linspace(-1, 2, 601)
    vals = np.array([temporal_opacity(o, float(t)) for t in ts])
    assert np.all(vals > 0) and np.all(vals <= 1)
    rising = ts < o.appear_mean
    falling = ts > o.vanish_mean
    assert np.all(np.diff(vals[rising]) >= 0)
    assert np.all(np.diff(vals[falling]) <= 0)
    plateau = (ts >= o.appear_mean) & (ts <= o.vanish_mean)
    assert np.all(vals[plateau] == 1.0)


def test_temporal_opacity_continuity():
    o = _topac()
    eps = 1e-9
    for brk in (o.appear_mean, o.vanish_mean):
        lo = temporal_opacity(o, brk - eps)
        hi = temporal_opacity(o, brk + eps)
        assert abs(lo - 1.0) < 1e-6 and abs(hi - 1.0) < 1e-6


def test_temporal_opacity_grads_vs_fd(rng):
    h = 1e-6
    for _ in range(300):
        a_s = rng.uniform(0.1, 0.4)
        a_f = rng.uniform(0.5, 0.9)
        bl_s = math.log(rng.uniform(0.05, 0.3))
        bl_f = math.log(rng.uniform(0.05, 0.3))
        t = rng.uniform(-0.5, 1.5)
        if min(abs(t - a_s), abs(t - a_f)) < 1e-3:
            continue  # FD invalid at the breakpoints (subgradient convention)
        params = np.array([a_s, bl_s, a_f, bl_f])

        def f(p):
            o = TemporalOpacity(appear_mean=p[0], appear_log_width=p[1],
                                vanish_mean=p[2], vanish_log_width=p[3])
            return temporal_opacity(o, t)

        g = temporal_opacity_grads(
            np.array([a_s]), np.array([bl_s]), np.array([a_f]), np.array([bl_f]),
            t, np.array([1.0]))
        for i in range(4):
            plus = params.copy(); plus[i] += h
            minus = params.copy(); minus[i] -= h
            fd = (f(plus) - f(minus)) / (2 * h)
            assert rel_err(fd, float(g[i][0]), floor=1e-9) < 1e-4


def test_temporal_opacity_grad_zero_at_breakpoints():
    g = temporal_opacity_grads(np.array([0.3]), np.array([math.log(0.1)]),
                               np.array([0.7]), np.array([math.log(0.1)]),
                               0.3, np.array([1.0]))
    assert all(float(x[0]) == 0.0 for x in g)
