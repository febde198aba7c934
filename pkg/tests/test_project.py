import numpy as np
import pytest

from splat4d.render import (
    DILATION, RealizedGaussian, Projection, project, project_scene, realize,
)
from conftest import make_camera, make_scene


def _realized(mean, cov, opacity=0.8, color=(0.5, 0.5, 0.5), pop="static"):
    return RealizedGaussian(
        mean_world=np.asarray(mean, float),
        cov_world=np.asarray(cov, float),
        opacity_eff=opacity,
        color=np.asarray(color, float),
        source_id=0,
        population=pop,
    )


def test_isotropic_on_axis_matches_hand_projection():
    # independent script: J W Sigma W^T J^T with W = I, mean on the optical
    # axis at depth z, Sigma = s^2 I ->  diag((fx s / z)^2, (fy s / z)^2)
    cam = make_camera(width=32, height=32, focal=40.0, dist=4.0)
    s = 0.2
    z = 4.0
    g = _realized([0, 0, 0], (s ** 2) * np.eye(3))
    sp = project(g, cam)
    expected = np.diag([(cam.fx * s / z) ** 2, (cam.fy * s / z) ** 2]) + DILATION * np.eye(2)
    assert np.allclose(sp.cov2d, expected, atol=1e-12)
    assert np.allclose(sp.mean_px, [16.0, 16.0])
    assert abs(sp.depth - 4.0) < 1e-12

    # full J W Sigma W^T J^T oracle with the exact Jacobian rows
    J = np.array([[cam.fx / z, 0, 0], [0, cam.fy / z, 0]])
    W = cam.rotation
    oracle = J @ W @ g.cov_world @ W.T @ J.T + DILATION * np.eye(2)
    assert np.allclose(sp.cov2d, oracle, atol=1e-12)


def test_behind_camera_culled():
    cam = make_camera(dist=4.0)
    g = _realized([0, 0, -10.0], 0.01 * np.eye(3))  # behind the camera plane
    assert project(g, cam) is None


def test_offscreen_culled():
    cam = make_camera(width=32, height=32, focal=40.0, dist=4.0)
    g = _realized([100.0, 0, 0], 0.0001 * np.eye(3))
    assert project(g, cam) is None


def test_double_distance_halves_radius():
    cam = make_camera(width=64, height=64, focal=40.0, dist=0.0)
    s = 0.05
    near = _realized([0, 0, 2.0], (s ** 2) * np.eye(3))
    far = _realized([0, 0, 4.0], (s ** 2) * np.eye(3))
    # compare pre-floor projected sigma: sqrt(cov - dilation)
    r_near = np.sqrt(project(near, cam).cov2d[0, 0] - DILATION)
    r_far = np.sqrt(project(far, cam).cov2d[0, 0] - DILATION)
    assert abs(r_near / r_far - 2.0) < 0.01


def test_conic_is_inverse(rng):
    scene = make_scene(rng)
    cam = make_camera()
    proj = project_scene(realize(scene, 3, cam), cam)
    for i in range(len(proj)):
        a, b, c = proj.cov2d[i]
        S = np.array([[a, b], [b, c]])
        A, B, C = proj.conic[i]
        assert np.allclose(np.linalg.inv(S), [[A, B], [B, C]], atol=1e-10)


def test_projection_keeps_realization_indices(rng):
    scene = make_scene(rng, n_static=5, n_dynamic=4)
    cam = make_camera()
    real = realize(scene, 3, cam)
    proj = project_scene(real, cam)
    assert len(proj) <= len(real)
    assert np.all(np.diff(proj.kept) > 0)


def test_realize_culls_expired_dynamics(rng):
    scene = make_scene(rng, n_dynamic=4)
    # push one dynamic point's window far into the past (6+ widths out)
    scene.dynamics.vanish_mean[0] = -2.0
    scene.dynamics.appear_mean[0] = -3.0
    real = realize(scene, 29, make_camera())
    assert len(real) == len(scene.statics) + len(scene.dynamics) - 1
    assert 0 not in real.src_idx[real.n_static:]


def test_realize_static_scene_time_invariant(rng):
    scene = make_scene(rng, n_dynamic=0)
    scene.statics.translation[:] = 0.0
    cam = make_camera()
    r0 = realize(scene, 0, cam)
    r1 = realize(scene, 29, cam)
    assert np.allclose(r0.means, r1.means)
    assert np.allclose(r0.covs, r1.covs)
    assert np.allclose(r0.opacities, r1.opacities)


def test_realize_counts(rng):
    scene = make_scene(rng, n_static=5, n_dynamic=4)
    real = realize(scene, 3, make_camera())
    assert len(real) == 5 + 4  # plateau covers t' in [0,1): nothing culled
    g = real[6]
    assert g.population == "dynamic"
    assert 0 < g.opacity_eff < 1
