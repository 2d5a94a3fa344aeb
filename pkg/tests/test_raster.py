import numpy as np
import pytest
import torch

from hybridgs import gaussmath as gm
from hybridgs.raster import (Camera, RenderOptions, density_map, look_at, preprocess, project_3d, rasterize,
                             reference_render, scene_tensors, slice_project_4d)
from hybridgs.raster import kernels
from hybridgs.raster.project import LOW_PASS
from hybridgs.scene import DynamicPool, HybridScene, StaticPool

from helpers import random_camera, random_scene


def front_camera(width=64, height=64, f=60.0):
    return look_at([0.0, 0.0, -4.0], [0.0, 0.0, 0.0], f, f, width, height)


def single_static(mean, log_scales=(-1.5, -1.5, -1.5), opacity=3.0, rgb=(1.0, 0.5, 0.25)):
    scene = HybridScene.empty(0.5, sh_degree=0)
    scene.statics = StaticPool(np.array([mean], dtype=float), np.array([[1.0, 0, 0, 0]]),
                               np.array([log_scales], dtype=float), np.array([opacity]),
                               ((np.array(rgb) - 0.5) / 0.28209479177387814).reshape(1, 1, 3))
    return scene


# ---------------------------------------------------------------- camera and projection

def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(0.0, 1.0, 0, 0, np.eye(3), np.zeros(3), 4, 4)
    with pytest.raises(ValueError):
        Camera(1.0, 1.0, 0, 0, 2 * np.eye(3), np.zeros(3), 4, 4)
    with pytest.raises(ValueError):
        Camera(1.0, 1.0, 0, 0, np.eye(3), np.zeros(3), 4, 4, near=1.0, far=0.5)


def test_look_at_centers_target():
    cam = front_camera(65, 33)
    uv = cam.project(np.array([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(uv, [32.0, 16.0], atol=1e-12)
    np.testing.assert_allclose(cam.center, [0.0, 0.0, -4.0], atol=1e-12)


def numeric_cov2d(mean3, cov3, camera, h=1e-6):
    """Project with a finite-difference Jacobian of the pinhole map (world -> pixels)."""
    J = np.zeros((2, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        J[:, k] = (camera.project(mean3 + e) - camera.project(mean3 - e)) / (2 * h)
    return J @ cov3 @ J.T + LOW_PASS * np.eye(2)


def test_ewa_matches_numeric_jacobian(rng):
    for _ in range(50):
        cam = random_camera(rng)
        mean3 = rng.normal(scale=0.5, size=3)
        R = gm.quat_to_rot3(gm.normalize_quat(rng.normal(size=4)))
        cov3 = gm.build_cov(R, rng.uniform(-2.5, -1.0, 3))
        prim = project_3d(mean3, cov3, cam)
        if prim is None:
            continue
        ref = numeric_cov2d(mean3, cov3, cam)
        assert np.abs(prim.cov2d - ref).max() / np.abs(ref).max() < 1e-6
        np.testing.assert_allclose(prim.screen_mean, cam.project(mean3), atol=1e-9)
        np.testing.assert_allclose(prim.conic, np.linalg.inv(prim.cov2d), rtol=1e-9)
        assert prim.radius == int(np.ceil(3 * np.sqrt(np.linalg.eigvalsh(prim.cov2d).max())))


def test_project_culls_behind_camera():
    cam = front_camera()
    assert project_3d(np.array([0.0, 0.0, -5.0]), 0.01 * np.eye(3), cam) is None
    assert project_3d(np.array([50.0, 0.0, 0.0]), 0.01 * np.eye(3), cam) is None
    assert project_3d(np.array([0.0, 0.0, 0.0]), 0.01 * np.eye(3), cam) is not None


def test_slice_project_matches_batched(rng):
    scene = random_scene(rng, 0, 40, sh_degree=1)
    cam = random_camera(rng)
    t = 0.37
    with torch.no_grad():
        sp = preprocess(scene_tensors(scene), cam, t, 1)
    rows = {int(i): k for k, i in enumerate(sp.index)}
    for i in range(len(scene.dynamics)):
        prim = slice_project_4d(scene.dynamics[i], t, cam)
        if prim is None:
            assert i not in rows
            continue
        k = rows[i]
        np.testing.assert_allclose(prim.screen_mean, sp.means2d[k].numpy(), atol=1e-9)
        a, b, c = sp.conics[k].numpy()
        np.testing.assert_allclose(prim.conic, [[a, b], [b, c]], rtol=1e-8, atol=1e-12)
        assert prim.alpha == pytest.approx(float(sp.alphas[k]), abs=1e-12)
        np.testing.assert_allclose(prim.rgb, sp.colors[k].numpy(), atol=1e-12)


def test_temporal_weight_cutoff_culls():
    scene = HybridScene.empty(0.5, sh_degree=0)
    scene.dynamics = DynamicPool(np.array([[0.0, 0.0, 0.0, 0.5]]), np.array([[1.0, 0, 0, 0]]),
                                 np.array([[1.0, 0, 0, 0]]), np.array([[-1.5, -1.5, -1.5, np.log(0.1)]]),
                                 np.array([2.0]), np.zeros((1, 1, 3)))
    cam = front_camera()
    assert rasterize(scene, cam, 0.5).stats.temporal_weight == 0
    # weight at t = 0: exp(-0.5 * 25) < 0.05
    out = rasterize(scene, cam, 0.0)
    assert out.stats.temporal_weight == 1
    np.testing.assert_array_equal(out.rgb, 0.0)


@pytest.mark.parametrize("delta", [-0.2, 0.05, 0.15])
def test_sliced_screen_mean_shift(rng, delta):
    from helpers import random_rot4
    scene = random_scene(rng, 0, 1, sh_degree=0)
    g = scene.dynamics[0]
    g.mean4[3] = 0.5
    g.log_scales = np.array([-1.5, -1.7, -1.3, np.log(0.4)])
    g.rot_left, g.rot_right = gm.pair_from_rot4(random_rot4(rng))
    cov = gm.build_cov(gm.rot4_from_pair(g.rot_left, g.rot_right), g.log_scales)
    cam = random_camera(rng)

    def pinhole(x):
        p = cam.R @ x + cam.T
        return np.array([cam.fx * p[0] / p[2] + cam.cx, cam.fy * p[1] / p[2] + cam.cy])

    prim = slice_project_4d(g, 0.5 + delta, cam, weight_cutoff=1e-6)
    # dense conditioning through the joint precision
    prec = np.linalg.inv(cov)
    expect = pinhole(g.mean4[:3] - np.linalg.solve(prec[:3, :3], prec[:3, 3]) * delta)
    assert np.abs(prim.screen_mean - expect).max() < 1e-8
    assert np.abs(expect - pinhole(g.mean4[:3])).max() > 1e-3


# ---------------------------------------------------------------- compositing

def test_empty_scene_renders_background():
    scene = HybridScene.empty(0.5)
    out = rasterize(scene, front_camera(20, 12), 0.3, (0.1, 0.2, 0.3))
    assert out.rgb.shape == (12, 20, 3)
    np.testing.assert_array_equal(out.rgb, np.broadcast_to([0.1, 0.2, 0.3], (12, 20, 3)))


def test_single_splat_center_value():
    scene = single_static([0.0, 0.0, 0.0], opacity=np.log(0.5 / 0.5))
    cam = front_camera(31, 31)
    rgb = rasterize(scene, cam, 0.0).rgb
    # centre pixel hits the mean exactly: alpha = 0.5
    np.testing.assert_allclose(rgb[15, 15], 0.5 * np.array([1.0, 0.5, 0.25]), atol=1e-12)


def test_time_outside_range_rejected():
    with pytest.raises(ValueError):
        rasterize(HybridScene.empty(0.5), front_camera(), 1.5)


def test_rasterize_matches_reference_random(rng):
    for _ in range(10):
        scene = random_scene(rng, int(rng.integers(0, 60)), int(rng.integers(0, 60)))
        cam = random_camera(rng, 48, 40)
        t = float(rng.uniform())
        a = rasterize(scene, cam, t).rgb
        b = reference_render(scene, cam, t).rgb
        assert np.abs(a - b).max() <= 1e-5


def test_splats_straddling_tiles(rng):
    # means exactly on tile corners and off-screen by less than their extent
    cam = front_camera(64, 64, 60.0)
    pts = []
    for u in (15.5, 16.0, 31.5, 47.9, -2.0, 66.0):
        for v in (0.0, 16.0, 63.5):
            z = 0.0
            pts.append([(u - cam.cx) * 4.0 / cam.fx, (v - cam.cy) * 4.0 / cam.fy, z])
    scene = HybridScene.empty(0.5, sh_degree=0)
    n = len(pts)
    scene.statics = StaticPool(np.array(pts), np.tile([1.0, 0, 0, 0], (n, 1)), np.full((n, 3), -2.5),
                               np.full(n, 1.0), rng.normal(size=(n, 1, 3)))
    np.testing.assert_allclose(rasterize(scene, cam, 0.0).rgb, reference_render(scene, cam, 0.0).rgb, atol=1e-12)


def test_thread_count_does_not_change_output(rng):
    scene = random_scene(rng, 100, 100)
    cam = random_camera(rng)
    outs = [rasterize(scene, cam, 0.4, opts=RenderOptions(threads=n)).rgb for n in (1, 2, 4)]
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])


def test_saturation_terminates_early():
    # a stack of nearly opaque splats: transmittance stops at the 1e-4 floor
    scene = single_static([0.0, 0.0, 0.0], opacity=8.0)
    for z in (0.1, 0.2, 0.3):
        scene.statics.extend(single_static([0.0, 0.0, z], opacity=8.0, rgb=(0, 1, 0)).statics)
    cam = front_camera(31, 31)
    out = rasterize(scene, cam, 0.0, opts=RenderOptions(return_count=True, return_transmittance=True))
    ref = reference_render(scene, cam, 0.0)
    assert out.count[15, 15] == 1
    np.testing.assert_allclose(out.rgb, ref.rgb, atol=1e-12)
    np.testing.assert_allclose(out.transmittance, ref.transmittance, atol=1e-12)
    assert out.transmittance[15, 15] == pytest.approx(0.001)


def test_bin_splats_orders_by_depth_then_index():
    means = np.array([[8.0, 8.0], [8.0, 8.0], [8.0, 8.0]])
    extents = np.array([2, 2, 2])
    depths = np.array([2.0, 1.0, 2.0])
    order, ranges = kernels.bin_splats(means, extents, depths, 16, 16)
    lo, hi = ranges[0]
    assert list(order[lo:hi]) == [1, 0, 2]


# ---------------------------------------------------------------- density maps

def test_density_map_counts_boxes():
    scene = single_static([0.0, 0.0, 0.0])
    cam = front_camera(32, 32)
    dm = density_map(scene, cam, 0.0)
    with torch.no_grad():
        sp = preprocess(scene_tensors(scene), cam, 0.0, 0)
    r = int(sp.radii[0])
    u, v = sp.means2d[0].numpy()
    ys, xs = np.nonzero(dm)
    assert dm.max() == 1
    assert xs.min() == max(int(np.ceil(u - r)), 0) and xs.max() == min(int(np.floor(u + r)), 31)
    assert ys.min() == max(int(np.ceil(v - r)), 0)


def test_density_map_dynamics_only(rng):
    scene = random_scene(rng, 30, 30)
    cam = random_camera(rng)
    full = density_map(scene, cam, 0.5)
    dyn = density_map(scene, cam, 0.5, dynamics_only=True)
    no_dyn = scene.copy()
    no_dyn.dynamics = DynamicPool.empty(scene.sh_degree)
    np.testing.assert_array_equal(full, dyn + density_map(no_dyn, cam, 0.5))
