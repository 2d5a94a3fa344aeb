"""Synthetic multi-view video: a textured static wall, a few static blobs and
moving objects encoded as chains of space-time Gaussians."""
from dataclasses import dataclass

import numpy as np

from .. import gaussmath as gm
from ..raster.camera import look_at
from ..raster.render import reference_render
from ..scene import DynamicPool, HybridScene, StaticPool
from ..sh import num_coeffs, rgb_to_sh_dc
from .dataset import InitPoints, MultiViewDataset, quantize_frames


@dataclass
class SynthSpec:
    n_cameras: int = 4
    n_frames: int = 20
    width: int = 64
    height: int = 64
    ring_radius: float = 4.0
    camera_step_deg: float = 8.0
    fov_deg: float = 50.0
    duration_seconds: float = 10.0
    wall_cols: int = 16
    wall_rows: int = 10
    wall_spacing: float = 0.5
    wall_depth: float = 1.0
    wall_yaw_deg: float = 25.0
    wall_pitch_deg: float = 15.0
    n_static_blobs: int = 3
    n_dynamic: int = 2
    chain_length: int = 5
    object_size: float = 0.12
    n_init_points: int = 200
    sh_degree: int = 0
    background: tuple = (0.0, 0.0, 0.0)


def _logit(p):
    return float(np.log(p / (1.0 - p)))


def ring_cameras(spec):
    """Cameras on an arc around the origin; camera 0 sits in the middle."""
    fx = 0.5 * spec.width / np.tan(np.radians(spec.fov_deg) / 2.0)
    cams = []
    for i in range(spec.n_cameras):
        step = (i + 1) // 2 * (1 if i % 2 == 0 else -1)
        theta = np.radians(spec.camera_step_deg * step)
        lift = 0.3 * (-1) ** i if i else 0.0
        eye = [spec.ring_radius * np.sin(theta), lift, -spec.ring_radius * np.cos(theta)]
        cams.append(look_at(eye, [0.0, 0.0, 0.0], fx, fx, spec.width, spec.height))
    return cams


def wall_rotation(spec):
    yaw, pitch = np.radians(spec.wall_yaw_deg), np.radians(spec.wall_pitch_deg)
    ry = np.array([[np.cos(yaw), 0.0, np.sin(yaw)], [0.0, 1.0, 0.0], [-np.sin(yaw), 0.0, np.cos(yaw)]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, np.cos(pitch), -np.sin(pitch)], [0.0, np.sin(pitch), np.cos(pitch)]])
    return ry @ rx


def _wall_color(x, y):
    return np.stack([
        0.5 + 0.35 * np.sin(1.3 * x + 0.4),
        0.5 + 0.35 * np.sin(0.9 * y - 1.1 * x + 1.0),
        0.5 + 0.35 * np.cos(1.7 * y + 0.5),
    ], axis=-1)


def sheared_gaussian(position, velocity, sigma_space, sigma_time, mean_t):
    """Space-time Gaussian whose slice moves with ``velocity``; returns (mean4, left, right, log_scales)."""
    v = np.asarray(velocity, dtype=np.float64)
    cov = np.zeros((4, 4))
    cov[:3, :3] = sigma_space ** 2 * np.eye(3) + sigma_time ** 2 * np.outer(v, v)
    cov[:3, 3] = cov[3, :3] = sigma_time ** 2 * v
    cov[3, 3] = sigma_time ** 2
    vals, vecs = np.linalg.eigh(cov)
    # put the most time-aligned axis last so the temporal scale stays meaningful
    k = int(np.argmax(np.abs(vecs[3])))
    perm = [i for i in range(4) if i != k] + [k]
    vals, vecs = vals[perm], vecs[:, perm]
    if np.linalg.det(vecs) < 0:
        vecs[:, 0] *= -1.0
    left, right = gm.pair_from_rot4(vecs)
    mean4 = np.append(np.asarray(position, dtype=np.float64), mean_t)
    return mean4, left, right, 0.5 * np.log(vals)


def object_path(rng, spec):
    """Smooth path p(t) in front of the wall; returns a callable and its derivative."""
    start = np.array([rng.uniform(-1.6, -0.8), rng.uniform(-0.8, 0.8), rng.uniform(-0.6, -0.2)])
    end = np.array([rng.uniform(0.8, 1.6), rng.uniform(-0.8, 0.8), rng.uniform(-0.6, -0.2)])
    if rng.random() < 0.5:
        start, end = end, start
    bend = np.array([0.0, rng.uniform(-0.5, 0.5), 0.0])

    def pos(t):
        return start + (end - start) * t + bend * np.sin(np.pi * t)

    def vel(t):
        return (end - start) + bend * np.pi * np.cos(np.pi * t)

    return pos, vel


def build_ground_truth(spec, rng):
    k = num_coeffs(spec.sh_degree)
    xs = (np.arange(spec.wall_cols) - (spec.wall_cols - 1) / 2) * spec.wall_spacing
    ys = (np.arange(spec.wall_rows) - (spec.wall_rows - 1) / 2) * spec.wall_spacing
    gx, gy = np.meshgrid(xs, ys)
    local = np.stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)], axis=1)
    local[:, :2] += rng.normal(scale=0.05 * spec.wall_spacing, size=(len(local), 2))
    # A wall facing a camera head-on puts all its disks at one depth, and their
    # blend order then flips under tiny perturbations. Tilting it avoids that.
    rot = wall_rotation(spec)
    wall = local @ rot.T + [0.0, 0.0, spec.wall_depth]
    n_wall = len(wall)
    s_in = np.log(0.7 * spec.wall_spacing)
    st_means = [wall]
    st_quats = [np.tile(gm.rot3_to_quat(rot), (n_wall, 1))]
    st_scales = [np.tile([s_in, s_in, np.log(0.03)], (n_wall, 1))]
    st_colors = [_wall_color(local[:, 0], local[:, 1])]
    st_opac = [np.full(n_wall, _logit(0.95))]
    if spec.n_static_blobs:
        blobs = np.column_stack([rng.uniform(-1.5, 1.5, spec.n_static_blobs),
                                 rng.uniform(-0.9, 0.9, spec.n_static_blobs),
                                 -rng.uniform(0.4, 1.0, spec.n_static_blobs)])
        normal = rot[:, 2]
        blobs[:, 2] += spec.wall_depth - (blobs[:, :2] @ normal[:2]) / normal[2]
        st_means.append(blobs)
        st_quats.append(np.tile([1.0, 0.0, 0.0, 0.0], (spec.n_static_blobs, 1)))
        st_scales.append(np.log(rng.uniform(0.15, 0.3, (spec.n_static_blobs, 1))) * np.ones(3))
        st_colors.append(rng.uniform(0.1, 0.9, (spec.n_static_blobs, 3)))
        st_opac.append(np.full(spec.n_static_blobs, _logit(0.9)))
    means = np.vstack(st_means)
    n = len(means)
    sh = np.zeros((n, k, 3))
    sh[:, 0] = rgb_to_sh_dc(np.vstack(st_colors))
    statics = StaticPool(means, np.vstack(st_quats), np.vstack(st_scales),
                         np.concatenate(st_opac), sh)

    records = []
    paths = []
    m = spec.chain_length
    sigma_t = 0.6 / m
    for _ in range(spec.n_dynamic):
        pos, vel = object_path(rng, spec)
        paths.append(pos)
        color = rng.uniform(0.2, 1.0, 3)
        color[rng.integers(3)] = 0.05
        for j in range(m):
            mt = (j + 0.5) / m
            records.append(sheared_gaussian(pos(mt), vel(mt), spec.object_size, sigma_t, mt) + (color,))
    nd = len(records)
    dsh = np.zeros((nd, k, 3))
    if nd:
        dsh[:, 0] = rgb_to_sh_dc(np.array([r[4] for r in records]))
        dynamics = DynamicPool(np.array([r[0] for r in records]), np.array([r[1] for r in records]),
                               np.array([r[2] for r in records]), np.array([r[3] for r in records]),
                               np.full(nd, _logit(0.95)), dsh)
    else:
        dynamics = DynamicPool.empty(spec.sh_degree)
    scene = HybridScene(statics, dynamics, tau=1.0, duration_seconds=spec.duration_seconds,
                        sh_degree=spec.sh_degree)
    return scene, paths


def sample_init_points(gt, paths, n, rng):
    """Noisy surface samples of the ground truth, standing in for a sparse SfM cloud."""
    n_dyn = min(len(paths) * 6, n // 5) if paths else 0
    n_sta = n - n_dyn
    idx = rng.integers(len(gt.statics), size=n_sta)
    spread = np.exp(gt.statics.log_scales[idx])
    pos = gt.statics.means[idx] + rng.normal(size=(n_sta, 3)) * 0.5 * spread
    col = gt.statics.sh[idx, 0] * 0.28209479177387814 + 0.5
    if n_dyn:
        which = rng.integers(len(paths), size=n_dyn)
        ts = rng.uniform(0.0, 1.0, n_dyn)
        dpos = np.array([paths[w](t) for w, t in zip(which, ts)])
        per_obj = len(gt.dynamics) // len(paths)
        dcol = gt.dynamics.sh[which * per_obj, 0] * 0.28209479177387814 + 0.5
        pos = np.vstack([pos, dpos + rng.normal(scale=0.03, size=dpos.shape)])
        col = np.vstack([col, dcol])
    col = np.clip(col + rng.normal(scale=0.03, size=col.shape), 0.0, 1.0)
    return InitPoints(pos, col)


def generate_synthetic(spec=None, seed=0):
    """Render a synthetic dataset; returns ``(dataset, ground_truth_scene)``.

    Frames are quantized through 8-bit sRGB so the in-memory dataset equals
    what :func:`~hybridgs.dataio.dataset.load_dataset` reads back.
    """
    spec = spec or SynthSpec()
    rng = np.random.default_rng(seed)
    gt, paths = build_ground_truth(spec, rng)
    cams = ring_cameras(spec)
    times = np.linspace(0.0, 1.0, spec.n_frames) if spec.n_frames > 1 else np.zeros(1)
    frames = []
    for cam in cams:
        stack = np.stack([reference_render(gt, cam, float(t), spec.background).rgb for t in times])
        frames.append(quantize_frames(stack))
    points = sample_init_points(gt, paths, spec.n_init_points, rng) if spec.n_init_points else None
    ds = MultiViewDataset(cams, list(range(len(cams))), frames, times, spec.duration_seconds, points,
                          {"paths": paths})
    return ds, gt
