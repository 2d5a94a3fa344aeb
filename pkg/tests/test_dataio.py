import struct
import zlib

import numpy as np
import pytest

from hybridgs.dataio import (InitPoints, MultiViewDataset, SynthSpec, generate_synthetic, init_scene,
                             load_checkpoint, load_dataset, save_checkpoint, save_dataset)
from hybridgs.dataio.checkpoint import MAGIC
from hybridgs.dataio.dataset import normalize_times, read_points, write_points
from hybridgs.dataio.init import knn_mean_distance
from hybridgs.errors import FormatError, IntegrityError, UnsupportedVersionError
from hybridgs.imageio import (linear_to_srgb8, read_float_planar, read_pgm, read_ppm, srgb8_to_linear,
                              write_float_planar, write_pgm, write_ppm)
from hybridgs.raster import rasterize
from hybridgs.sh import C0
from hybridgs.train import TrainConfig

from helpers import random_scene

SMALL = SynthSpec(n_cameras=3, n_frames=4, width=24, height=20, wall_cols=6, wall_rows=4, n_init_points=40)


def assert_scenes_equal(a, b):
    assert (a.tau, a.duration_seconds, a.sh_degree) == (b.tau, b.duration_seconds, b.sh_degree)
    for pool in ("statics", "dynamics"):
        for k, v in getattr(a, pool).arrays().items():
            w = getattr(getattr(b, pool), k)
            assert v.dtype == w.dtype and v.shape == w.shape
            assert v.tobytes() == w.tobytes(), (pool, k)


# ---------------------------------------------------------------- checkpoints

def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    scene = random_scene(rng, 5000, 5000, sh_degree=3, tau=0.37)
    scene.duration_seconds = 12.5
    path = tmp_path / "s.ckpt"
    state = {"statics.means.m": rng.normal(size=(5000, 3)), "skipped": np.array([3], dtype=np.int64)}
    save_checkpoint(scene, path, state)
    back, st = load_checkpoint(path)
    assert_scenes_equal(scene, back)
    assert st["statics.means.m"].tobytes() == state["statics.means.m"].tobytes()
    assert st["skipped"].dtype == np.int64 and st["skipped"][0] == 3


def test_checkpoint_without_state(tmp_path, rng):
    scene = random_scene(rng, 0, 3)
    save_checkpoint(scene, tmp_path / "s.ckpt")
    back, st = load_checkpoint(tmp_path / "s.ckpt")
    assert st is None and len(back.statics) == 0
    assert_scenes_equal(scene, back)


def test_checkpoint_truncation_rejected(tmp_path, rng):
    path = tmp_path / "s.ckpt"
    save_checkpoint(random_scene(rng, 20, 20), path)
    data = path.read_bytes()
    for cut in (4, 12, 30, len(data) // 2, len(data) - 1):
        path.write_bytes(data[:cut])
        with pytest.raises(IntegrityError):
            load_checkpoint(path)


def test_checkpoint_corruption_names_section(tmp_path, rng):
    path = tmp_path / "s.ckpt"
    save_checkpoint(random_scene(rng, 20, 20), path)
    data = bytearray(path.read_bytes())
    # locate the DYNA payload and flip one byte in it
    pos = data.index(b"DYNA")
    data[pos + 16 + 40] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(IntegrityError) as err:
        load_checkpoint(path)
    assert err.value.section == "DYNA"


def test_checkpoint_bad_magic_and_version(tmp_path, rng):
    path = tmp_path / "s.ckpt"
    save_checkpoint(random_scene(rng, 2, 2), path)
    data = path.read_bytes()
    path.write_bytes(b"NOTACKPT" + data[8:])
    with pytest.raises(FormatError):
        load_checkpoint(path)
    path.write_bytes(MAGIC + struct.pack("<I", 99) + data[12:])
    with pytest.raises(UnsupportedVersionError):
        load_checkpoint(path)


def test_checkpoint_trailing_bytes(tmp_path, rng):
    path = tmp_path / "s.ckpt"
    save_checkpoint(random_scene(rng, 2, 2), path)
    path.write_bytes(path.read_bytes() + b"\0")
    with pytest.raises(IntegrityError):
        load_checkpoint(path)


def test_checkpoint_layout_matches_documentation(tmp_path, rng):
    """Parse the file by hand following docs/formats.md."""
    scene = random_scene(rng, 2, 1, sh_degree=0, tau=0.25)
    path = tmp_path / "s.ckpt"
    save_checkpoint(scene, path)
    buf = path.read_bytes()
    assert buf[:8] == b"HGS4DCKP"
    version, count = struct.unpack_from("<II", buf, 8)
    assert (version, count) == (1, 3)
    tag = buf[16:20]
    length, crc = struct.unpack_from("<QI", buf, 20)
    payload = buf[32:32 + length]
    assert tag == b"META" and zlib.crc32(payload) == crc
    tau, duration, degree = struct.unpack("<ddI", payload)
    assert (tau, degree) == (0.25, 0)
    pos = 32 + length
    assert buf[pos:pos + 4] == b"STAT"
    length, _ = struct.unpack_from("<QI", buf, pos + 4)
    body = buf[pos + 16:pos + 16 + length]
    (n_arrays,) = struct.unpack_from("<I", body, 0)
    (klen,) = struct.unpack_from("<H", body, 4)
    assert n_arrays == 5 and body[6:6 + klen] == b"means"
    code, ndim = struct.unpack_from("<BB", body, 6 + klen)
    shape = struct.unpack_from("<2Q", body, 8 + klen)
    assert (code, ndim, shape) == (0, 2, (2, 3))
    first = struct.unpack_from("<d", body, 8 + klen + 16)[0]
    assert first == scene.statics.means[0, 0]


# ---------------------------------------------------------------- images

def test_ppm_roundtrip(tmp_path, rng):
    img = rng.uniform(size=(5, 7, 3))
    write_ppm(tmp_path / "a.ppm", img)
    raw = read_ppm(tmp_path / "a.ppm")
    np.testing.assert_array_equal(raw, linear_to_srgb8(img))
    q = srgb8_to_linear(raw)
    np.testing.assert_array_equal(linear_to_srgb8(q), raw)


def test_ppm_header_comments_and_errors(tmp_path):
    p = tmp_path / "c.ppm"
    p.write_bytes(b"P6\n# made by hand\n2 1\n255\n" + bytes([1, 2, 3, 4, 5, 6]))
    np.testing.assert_array_equal(read_ppm(p), [[[1, 2, 3], [4, 5, 6]]])
    p.write_bytes(b"P6\n2 1\n255\n" + bytes([1, 2]))
    with pytest.raises(FormatError):
        read_ppm(p)
    p.write_bytes(b"P5\n2 1\n255\n" + bytes([1, 2]))
    with pytest.raises(FormatError):
        read_ppm(p)


def test_pgm_8_and_16_bit(tmp_path):
    small = np.array([[0, 3], [255, 7]])
    write_pgm(tmp_path / "a.pgm", small)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), small)
    big = np.array([[0, 300], [65535, 7]])
    write_pgm(tmp_path / "b.pgm", big)
    np.testing.assert_array_equal(read_pgm(tmp_path / "b.pgm"), big)


def test_float_planar_roundtrip(tmp_path, rng):
    img = rng.uniform(size=(4, 6, 3)).astype(np.float32).astype(np.float64)
    write_float_planar(tmp_path / "a.f32", img)
    assert (tmp_path / "a.f32").stat().st_size == 4 * 6 * 3 * 4
    np.testing.assert_array_equal(read_float_planar(tmp_path / "a.f32", 4, 6), img)
    with pytest.raises(FormatError):
        read_float_planar(tmp_path / "a.f32", 5, 6)


# ---------------------------------------------------------------- datasets

def test_normalize_times():
    t = normalize_times(np.arange(300) / 30.0)
    assert t[0] == 0.0 and t[-1] == 1.0
    np.testing.assert_allclose(t[1], 1 / 299)
    np.testing.assert_array_equal(normalize_times([2.0]), [0.0])
    with pytest.raises(FormatError):
        normalize_times([0.0, 1.0, 0.5])


def test_generator_loader_roundtrip(tmp_path):
    ds, gt = generate_synthetic(SMALL, seed=3)
    save_dataset(ds, tmp_path / "d")
    back, test = load_dataset(tmp_path / "d")
    assert test is None
    for a, b in zip(ds.frames, back.frames):
        assert np.array_equal(a, b)
    np.testing.assert_allclose(back.timestamps, ds.timestamps, atol=1e-15)
    assert back.duration_seconds == ds.duration_seconds
    for ca, cb in zip(ds.cameras, back.cameras):
        np.testing.assert_array_equal(ca.extrinsic, cb.extrinsic)
        assert (ca.fx, ca.cx, ca.width) == (cb.fx, cb.cx, cb.width)
    np.testing.assert_array_equal(back.points.positions, ds.points.positions)


def test_held_out_split(tmp_path):
    ds, _ = generate_synthetic(SMALL, seed=0)
    save_dataset(ds, tmp_path / "d")
    train, test = load_dataset(tmp_path / "d", held_out_camera=0)
    assert train.camera_ids == [1, 2] and test.camera_ids == [0]
    assert len(train) == 2 * SMALL.n_frames
    with pytest.raises(FormatError):
        load_dataset(tmp_path / "d", held_out_camera=9)


def test_loader_errors(tmp_path):
    ds, _ = generate_synthetic(SMALL, seed=0)
    root = tmp_path / "d"
    save_dataset(ds, root)
    (root / "cam01" / "frame_00003.ppm").unlink()
    with pytest.raises(FormatError, match="cam01"):
        load_dataset(root)
    (root / "cameras.txt").unlink()
    with pytest.raises(FormatError, match="cameras.txt"):
        load_dataset(root)


def test_loader_fps_fallback(tmp_path):
    ds, _ = generate_synthetic(SMALL, seed=0)
    root = tmp_path / "d"
    save_dataset(ds, root, fps=30)
    (root / "timestamps.txt").unlink()
    back, _ = load_dataset(root)
    np.testing.assert_allclose(back.timestamps, np.linspace(0, 1, SMALL.n_frames))


def test_points_file(tmp_path):
    p = tmp_path / "points.txt"
    p.write_text("0 0 0 255 0 128\n1 2 3 0 255 0\n")
    pts = read_points(p)
    np.testing.assert_allclose(pts.colors[0], [1.0, 0.0, 128 / 255])
    write_points(tmp_path / "o.txt", pts)
    np.testing.assert_array_equal(read_points(tmp_path / "o.txt").colors, pts.colors)
    with pytest.raises(ValueError):
        InitPoints(np.zeros((0, 3)), np.zeros((0, 3)))


def test_dataset_validation():
    ds, _ = generate_synthetic(SMALL, seed=0)
    with pytest.raises(ValueError):
        MultiViewDataset(ds.cameras, ds.camera_ids, ds.frames, ds.timestamps * 2 + 1)
    with pytest.raises(ValueError):
        MultiViewDataset(ds.cameras[:1], ds.camera_ids, ds.frames, ds.timestamps)


# ---------------------------------------------------------------- synthetic scenes and init

def test_synthetic_frames_match_ground_truth():
    ds, gt = generate_synthetic(SMALL, seed=1)
    assert len(gt.statics) == SMALL.wall_cols * SMALL.wall_rows + SMALL.n_static_blobs
    assert len(gt.dynamics) == SMALL.n_dynamic * SMALL.chain_length
    ref = rasterize(gt, ds.cameras[1], float(ds.timestamps[2])).rgb
    # frames carry 8-bit quantization only
    assert np.abs(srgb8_to_linear(linear_to_srgb8(ref)) - ds.frames[1][2]).max() == 0.0
    assert len(ds.extras["paths"]) == SMALL.n_dynamic


def test_synthetic_is_deterministic():
    a, _ = generate_synthetic(SMALL, seed=5)
    b, _ = generate_synthetic(SMALL, seed=5)
    c, _ = generate_synthetic(SMALL, seed=6)
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    assert not all(np.array_equal(x, y) for x, y in zip(a.frames, c.frames))


def test_dynamic_chain_follows_path():
    ds, gt = generate_synthetic(SMALL, seed=2)
    from hybridgs import gaussmath as gm
    path = ds.extras["paths"][0]
    for i in range(SMALL.chain_length):
        g = gt.dynamics[i]
        cov = gm.build_cov(gm.rot4_from_pair(g.rot_left, g.rot_right), g.log_scales)
        for t in (g.mean4[3] - 0.05, g.mean4[3] + 0.05):
            sl = gm.condition_at_time(g.mean4, cov, t)
            # linearised motion: within second-order error of the bent path
            assert np.linalg.norm(sl.mean3 - path(t)) < 0.05


@pytest.mark.parametrize("velocity", [(2.0, 0.0, 0.0), (1.8, 0.5, 0.2), (-2.0, 0.4, 0.0)])
def test_single_mover_frame_difference_is_unimodal(velocity):
    from hybridgs.dataio.synthetic import ring_cameras, sheared_gaussian
    from hybridgs.raster import reference_render
    from hybridgs.scene import DynamicPool, HybridScene, StaticPool
    from hybridgs.sh import rgb_to_sh_dc
    # wide envelope so the temporal cull never fires; the blob stays in view
    mean4, left, right, log_scales = sheared_gaussian(np.zeros(3), velocity, 0.15, 0.5, 0.5)
    sh = rgb_to_sh_dc(np.array([0.9, 0.4, 0.1]))[None, None]
    scene = HybridScene(StaticPool.empty(0),
                        DynamicPool(mean4[None], left[None], right[None], log_scales[None], np.array([3.0]), sh),
                        1.0, 1.0, 0)
    for cam in ring_cameras(SynthSpec()):
        frames = np.stack([reference_render(scene, cam, float(t)).rgb for t in np.linspace(0.0, 1.0, 40)])
        e = (np.diff(frames, axis=0) ** 2).sum(axis=(1, 2, 3))
        k = int(np.argmax(e))
        assert e.min() > 0
        assert np.all(np.diff(e[:k + 1]) >= 0) and np.all(np.diff(e[k:]) <= 0)


def test_init_scene_tetrahedron():
    pts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    scene = init_scene(InitPoints(pts, np.full((4, 3), 0.3)), TrainConfig(sh_degree=0))
    assert len(scene.dynamics) == 4 and len(scene.statics) == 0
    ls = scene.dynamics.log_scales
    np.testing.assert_allclose(ls[:, :3], np.log(np.sqrt(8)))
    np.testing.assert_allclose(ls[:, 3], np.log(0.1))
    np.testing.assert_allclose(scene.dynamics.means[:, 3], 0.5)
    np.testing.assert_allclose(scene.dynamics.sh[:, 0], (0.3 - 0.5) / C0)
    np.testing.assert_allclose(1 / (1 + np.exp(-scene.dynamics.opacity_logits)), 0.1)
    np.testing.assert_array_equal(scene.dynamics.quats_left, np.tile([1.0, 0, 0, 0], (4, 1)))


def test_init_scene_needs_four_points():
    with pytest.raises(ValueError):
        init_scene(InitPoints(np.zeros((3, 3)), np.zeros((3, 3))), TrainConfig())


def test_knn_matches_brute_force(rng):
    pts = rng.normal(size=(300, 3))
    d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    ref = np.sort(d, axis=1)[:, :3].mean(axis=1)
    np.testing.assert_allclose(knn_mean_distance(pts, 3, chunk=64), ref, rtol=1e-10)


def test_init_renders_from_every_camera():
    ds, _ = generate_synthetic(SMALL, seed=0)
    scene = init_scene(ds.points, TrainConfig(sh_degree=0))
    for cam in ds.cameras:
        img = rasterize(scene, cam, 0.5).rgb
        assert np.all(np.isfinite(img)) and img.max() > 0
