"""The numba kernels and their numpy fallbacks must agree."""

import numpy as np
import pytest

from scene123 import _accel
from scene123.field import VoxelRadianceField, march_rays, render_image, render_rays_backward
from scene123.geometry import CameraIntrinsics, Pose, warp_view

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")


def _both(monkeypatch, fn):
    monkeypatch.setattr(_accel, "USE_NUMBA", True)
    a = fn()
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    b = fn()
    return a, b


def test_render_and_backward_agree(monkeypatch):
    rng = np.random.default_rng(0)
    f = VoxelRadianceField(rng.normal(0, 2, (9, 9, 9)), rng.normal(size=(9, 9, 9, 3)), (-1, -1, -1), (1, 1, 1))
    o = rng.uniform(-1.2, 1.2, (200, 3))
    d = rng.normal(size=(200, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    gc, gd, gt = rng.normal(size=(200, 3)), rng.normal(size=200), rng.normal(size=(200, 32))

    def run():
        r = march_rays(f, o, d, 0.0, 2.0, 32, stratified=True, rng=1, background=(0.1, 0.2, 0.3))
        g = render_rays_backward(f, r, gc, gd, gt)
        return r.color, r.depth, r.final_transmittance, g

    for x, y in zip(*_both(monkeypatch, run)):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


def test_render_image_agrees(monkeypatch, scene):
    K = CameraIntrinsics.from_fov(24, 20, 60)
    pose = Pose.from_yaw_pitch(10, 5)
    a, b = _both(monkeypatch, lambda: render_image(scene.field, pose, K, 48, t_far=scene.t_far))
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-10, atol=1e-12)


def test_warp_agrees(monkeypatch, origin_view):
    target = Pose.from_yaw_pitch(25, -5)
    a, b = _both(monkeypatch, lambda: warp_view(origin_view, target))
    np.testing.assert_array_equal(a.mask, b.mask)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.depth, b.depth)
