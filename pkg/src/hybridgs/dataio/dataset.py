"""Multi-view video datasets on disk.

Layout::

    root/cameras.txt        id fx fy cx cy w h near far r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2
    root/meta.txt           optional "key value" lines: duration_seconds, fps
    root/timestamps.txt     optional, one time in seconds per frame
    root/points.txt         optional, "x y z r g b" per line (rgb in [0, 1] or [0, 255])
    root/camXX/frame_%05d.ppm
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..imageio import linear_to_srgb8, read_ppm, srgb8_to_linear, write_ppm
from ..raster.camera import Camera


@dataclass
class InitPoints:
    positions: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if len(self.positions) == 0:
            raise ValueError("point list is empty")
        if len(self.positions) != len(self.colors):
            raise ValueError("positions and colors differ in length")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.colors))):
            raise ValueError("point list contains non-finite values")

    def __len__(self):
        return len(self.positions)


@dataclass
class MultiViewDataset:
    cameras: list
    camera_ids: list
    frames: list  # per camera: (n_frames, h, w, 3) linear floats
    timestamps: np.ndarray  # normalized to [0, 1]
    duration_seconds: float = 1.0
    points: InitPoints = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if len(self.cameras) != len(self.frames) or len(self.cameras) != len(self.camera_ids):
            raise ValueError("cameras, camera_ids and frames must align")
        if np.any(self.timestamps < 0.0) or np.any(self.timestamps > 1.0):
            raise ValueError("timestamps must be normalized to [0, 1]")
        for cam, fr in zip(self.cameras, self.frames):
            if fr.shape[1:] != (cam.height, cam.width, 3) or fr.shape[0] != len(self.timestamps):
                raise ValueError("frame stack does not match its camera or the timestamps")

    @property
    def n_frames(self):
        return len(self.timestamps)

    def __len__(self):
        return len(self.cameras) * self.n_frames

    def sample(self, flat_index):
        cam, frame = divmod(int(flat_index), self.n_frames)
        return self.cameras[cam], self.frames[cam][frame], float(self.timestamps[frame])

    def subset(self, camera_ids):
        keep = [self.camera_ids.index(c) for c in camera_ids]
        return MultiViewDataset([self.cameras[i] for i in keep], [self.camera_ids[i] for i in keep],
                                [self.frames[i] for i in keep], self.timestamps.copy(),
                                self.duration_seconds, self.points, dict(self.extras))


def normalize_times(seconds):
    """Affine map of frame times to [0, 1]; a single frame maps to 0."""
    seconds = np.asarray(seconds, dtype=np.float64)
    if len(seconds) == 0:
        return seconds
    span = seconds[-1] - seconds[0]
    if np.any(np.diff(seconds) < 0):
        raise FormatError("frame timestamps must be non-decreasing")
    if span <= 0:
        return np.zeros_like(seconds)
    return np.clip((seconds - seconds[0]) / span, 0.0, 1.0)


def camera_extent(cameras):
    """Radius of the camera centres around their mean, padded by 10%."""
    centers = np.array([c.center for c in cameras])
    return 1.1 * float(np.linalg.norm(centers - centers.mean(axis=0), axis=1).max() or 1.0)


def _parse_cameras(path):
    cams = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 21:
            raise FormatError(f"{path}:{lineno}: expected 21 fields, found {len(parts)}")
        try:
            cid = int(parts[0])
            fx, fy, cx, cy = map(float, parts[1:5])
            w, h = int(parts[5]), int(parts[6])
            near, far = float(parts[7]), float(parts[8])
            ext = np.array(parts[9:], dtype=np.float64).reshape(3, 4)
            cams[cid] = Camera(fx, fy, cx, cy, ext[:, :3], ext[:, 3], w, h, near, far)
        except ValueError as exc:
            raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not cams:
        raise FormatError(f"{path}: no cameras listed")
    return cams


def _read_meta(root):
    meta = {}
    path = root / "meta.txt"
    if path.exists():
        for line in path.read_text().splitlines():
            parts = line.split()
            if len(parts) == 2 and not parts[0].startswith("#"):
                meta[parts[0]] = float(parts[1])
    return meta


def read_points(path):
    data = np.loadtxt(path, dtype=np.float64, ndmin=2)
    if data.shape[1] != 6:
        raise FormatError(f"{path}: expected 'x y z r g b' rows")
    rgb = data[:, 3:]
    if rgb.max(initial=0.0) > 1.0:
        rgb = rgb / 255.0
    return InitPoints(data[:, :3], rgb)


def write_points(path, points):
    np.savetxt(path, np.hstack([points.positions, points.colors]), fmt="%.17g")


def load_dataset(root, held_out_camera=None):
    """Load a dataset directory; returns ``(train, test)`` split on ``held_out_camera``.

    With ``held_out_camera=None`` the full dataset is returned as ``train``
    and ``test`` is ``None``.
    """
    root = Path(root)
    cam_file = root / "cameras.txt"
    if not cam_file.exists():
        raise FormatError(f"{root}: missing calibration file cameras.txt")
    cams = _parse_cameras(cam_file)
    ids = sorted(cams)
    files = {}
    for cid in ids:
        folder = root / f"cam{cid:02d}"
        files[cid] = sorted(folder.glob("frame_*.ppm")) if folder.is_dir() else []
    counts = {cid: len(f) for cid, f in files.items()}
    n = max(counts.values())
    bad = [f"cam{cid:02d} ({c} frames)" for cid, c in counts.items() if c != n or c == 0]
    if bad:
        raise FormatError(f"inconsistent frame counts (expected {n}): {', '.join(bad)}")

    def load(path):
        return srgb8_to_linear(read_ppm(path))

    with ThreadPoolExecutor() as pool:
        frames = [np.stack(list(pool.map(load, files[cid]))) for cid in ids]
    for cid, fr in zip(ids, frames):
        if fr.shape[1:3] != (cams[cid].height, cams[cid].width):
            raise FormatError(f"cam{cid:02d}: image size {fr.shape[2]}x{fr.shape[1]} does not match calibration")

    meta = _read_meta(root)
    ts_file = root / "timestamps.txt"
    if ts_file.exists():
        seconds = np.loadtxt(ts_file, dtype=np.float64, ndmin=1)
        if len(seconds) != n:
            raise FormatError(f"{ts_file}: {len(seconds)} timestamps for {n} frames")
    else:
        seconds = np.arange(n) / meta.get("fps", 30.0)
    duration = meta.get("duration_seconds", float(seconds[-1] - seconds[0]) if n > 1 else 0.0)
    points = read_points(root / "points.txt") if (root / "points.txt").exists() else None

    full = MultiViewDataset([cams[c] for c in ids], ids, frames, normalize_times(seconds), duration, points)
    if held_out_camera is None:
        return full, None
    if held_out_camera not in ids:
        raise FormatError(f"held-out camera {held_out_camera} not present")
    train_ids = [c for c in ids if c != held_out_camera]
    return full.subset(train_ids), full.subset([held_out_camera])


def save_dataset(dataset, root, fps=None):
    """Write ``dataset`` in the on-disk layout; frames are stored as 8-bit sRGB."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    lines = []
    for cid, cam in zip(dataset.camera_ids, dataset.cameras):
        ext = " ".join(f"{v:.17g}" for v in cam.extrinsic.ravel())
        lines.append(f"{cid} {cam.fx:.17g} {cam.fy:.17g} {cam.cx:.17g} {cam.cy:.17g} {cam.width} {cam.height} "
                     f"{cam.near:.17g} {cam.far:.17g} {ext}")
    (root / "cameras.txt").write_text("\n".join(lines) + "\n")
    seconds = dataset.timestamps * dataset.duration_seconds
    np.savetxt(root / "timestamps.txt", seconds, fmt="%.17g")
    meta = f"duration_seconds {dataset.duration_seconds:.17g}\n"
    if fps:
        meta += f"fps {fps:.17g}\n"
    (root / "meta.txt").write_text(meta)
    for cid, frames in zip(dataset.camera_ids, dataset.frames):
        folder = root / f"cam{cid:02d}"
        folder.mkdir(exist_ok=True)
        for i, img in enumerate(frames):
            write_ppm(folder / f"frame_{i:05d}.ppm", img)
    if dataset.points is not None:
        write_points(root / "points.txt", dataset.points)


def quantize_frames(frames):
    """Round-trip linear frames through 8-bit sRGB, as stored on disk."""
    return srgb8_to_linear(linear_to_srgb8(frames))
