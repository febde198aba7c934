import numpy as np
import pytest

from splat4d.core import (
    CameraView, DynamicSet, SceneModel, StaticSet, align_quaternion_signs,
    quat_normalize,
)


def make_static_set(rng, n, sh_degree=1, opacity_range=(-0.5, 1.0)):
    k = (sh_degree + 1) ** 2
    return StaticSet(
        pivot=rng.normal(0, 0.5, (n, 3)),
        translation=rng.normal(0, 0.2, (n, 3)),
        log_scale=np.log(rng.uniform(0.1, 0.3, (n, 3))),
        rotation=quat_normalize(rng.normal(0, 1, (n, 4))),
        opacity_logit=rng.uniform(*opacity_range, n),
        sh=rng.normal(0, 0.15, (n, k, 3)),
    )


def make_dynamic_set(rng, n, n_keyframes=4, sh_degree=1):
    k = (sh_degree + 1) ** 2
    key_rot = align_quaternion_signs(quat_normalize(rng.normal(0, 1, (n, n_keyframes, 4))))
    return DynamicSet(
        key_pos=rng.normal(0, 0.5, (n, n_keyframes, 3)),
        key_rot=key_rot,
        log_scale=np.log(rng.uniform(0.1, 0.3, (n, 3))),
        opacity_logit=rng.uniform(-0.5, 1.0, n),
        sh=rng.normal(0, 0.15, (n, k, 3)),
        appear_mean=rng.uniform(-0.2, 0.1, n),
        appear_log_width=np.log(rng.uniform(0.1, 0.3, n)),
        vanish_mean=rng.uniform(0.6, 1.2, n),
        vanish_log_width=np.log(rng.uniform(0.1, 0.3, n)),
    )


def make_scene(rng, n_static=3, n_dynamic=3, n_keyframes=4, sh_degree=1,
               duration=30, total=30, interval=10):
    return SceneModel(
        statics=make_static_set(rng, n_static, sh_degree),
        dynamics=make_dynamic_set(rng, n_dynamic, n_keyframes, sh_degree),
        duration_frames=duration,
        total_frames=total,
        keyframe_interval=interval,
    )


def make_camera(width=32, height=32, focal=40.0, dist=4.0, timestamp=0):
    """Camera on the -z axis looking toward +z at the origin."""
    w2c = np.eye(4)
    w2c[2, 3] = dist
    return CameraView(
        fx=focal, fy=focal, cx=width / 2.0, cy=height / 2.0,
        width=width, height=height, world_to_camera=w2c, timestamp=timestamp,
    )


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
