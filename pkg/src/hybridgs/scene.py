"""Hybrid scene: a pool of static 3D Gaussians and a pool of dynamic 4D Gaussians.

Pools are stored column-wise (one array per parameter). ``pool[i]`` returns a
record (:class:`Gaussian3D` / :class:`Gaussian4D`) for single-item work.
"""
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np

from . import gaussmath as gm
from .sh import num_coeffs, sh_basis


@dataclass
class SHColor:
    degree: int
    coeffs: np.ndarray  # ((degree+1)^2, 3)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if not 0 <= self.degree <= 3:
            raise ValueError(f"SH degree must be in 0..3, got {self.degree}")
        if self.coeffs.shape != (num_coeffs(self.degree), 3):
            raise ValueError(f"expected {num_coeffs(self.degree)} RGB coefficients, got shape {self.coeffs.shape}")


def eval_sh(color, view_dir):
    """RGB radiance of ``color`` seen along ``view_dir`` (+0.5 offset, clamped at 0)."""
    d = np.asarray(view_dir, dtype=np.float64)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("view direction must be a unit vector")
    return np.maximum(sh_basis(d, color.degree) @ color.coeffs + 0.5, 0.0)


def sh_to_rgb(sh, dirs, degree):
    """Vectorized :func:`eval_sh` over a pool: ``sh`` is (N, K, 3), ``dirs`` (N, 3)."""
    basis = sh_basis(dirs, degree)
    return np.maximum(np.einsum("nk,nkc->nc", basis, sh[:, : num_coeffs(degree)]) + 0.5, 0.0)


@dataclass
class Gaussian3D:
    mean3: np.ndarray
    rot: np.ndarray
    log_scales: np.ndarray
    opacity_logit: float
    color: SHColor


@dataclass
class Gaussian4D:
    mean4: np.ndarray
    rot_left: np.ndarray
    rot_right: np.ndarray
    log_scales: np.ndarray
    opacity_logit: float
    color: SHColor

    @property
    def time_scale(self):
        return float(np.exp(self.log_scales[3]))


class _Pool:
    # (name, trailing shape) pairs, filled in by subclasses
    COLUMNS = ()

    def __len__(self):
        return len(self.opacity_logits)

    def arrays(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def take(self, idx):
        return type(self)(**{k: v[idx].copy() for k, v in self.arrays().items()})

    def extend(self, other):
        for k, v in self.arrays().items():
            setattr(self, k, np.concatenate([v, getattr(other, k)], axis=0))

    def remove(self, mask):
        keep = ~np.asarray(mask, dtype=bool)
        for k, v in self.arrays().items():
            setattr(self, k, v[keep])

    def copy(self):
        return self.take(slice(None))

    @property
    def sh_degree(self):
        return int(round(np.sqrt(self.sh.shape[1]))) - 1

    @classmethod
    def empty(cls, sh_degree):
        k = num_coeffs(sh_degree)
        shapes = dict(cls.COLUMNS)
        shapes["sh"] = (k, 3)
        return cls(**{name: np.zeros((0,) + shape) for name, shape in shapes.items()})


@dataclass
class StaticPool(_Pool):
    means: np.ndarray
    quats: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray

    COLUMNS = (("means", (3,)), ("quats", (4,)), ("log_scales", (3,)), ("opacity_logits", ()), ("sh", None))

    def __getitem__(self, i):
        return Gaussian3D(self.means[i].copy(), self.quats[i].copy(), self.log_scales[i].copy(),
                          float(self.opacity_logits[i]), SHColor(self.sh_degree, self.sh[i].copy()))

    @classmethod
    def from_records(cls, records, sh_degree):
        if not records:
            return cls.empty(sh_degree)
        return cls(
            means=np.array([g.mean3 for g in records], dtype=np.float64),
            quats=np.array([g.rot for g in records], dtype=np.float64),
            log_scales=np.array([g.log_scales for g in records], dtype=np.float64),
            opacity_logits=np.array([g.opacity_logit for g in records], dtype=np.float64),
            sh=np.array([g.color.coeffs for g in records], dtype=np.float64),
        )


@dataclass
class DynamicPool(_Pool):
    means: np.ndarray  # (N, 4): x, y, z, t
    quats_left: np.ndarray
    quats_right: np.ndarray
    log_scales: np.ndarray  # (N, 4): s_x, s_y, s_z, s_t
    opacity_logits: np.ndarray
    sh: np.ndarray

    COLUMNS = (("means", (4,)), ("quats_left", (4,)), ("quats_right", (4,)), ("log_scales", (4,)),
               ("opacity_logits", ()), ("sh", None))

    def __getitem__(self, i):
        return Gaussian4D(self.means[i].copy(), self.quats_left[i].copy(), self.quats_right[i].copy(),
                          self.log_scales[i].copy(), float(self.opacity_logits[i]),
                          SHColor(self.sh_degree, self.sh[i].copy()))

    @classmethod
    def from_records(cls, records, sh_degree):
        if not records:
            return cls.empty(sh_degree)
        return cls(
            means=np.array([g.mean4 for g in records], dtype=np.float64),
            quats_left=np.array([g.rot_left for g in records], dtype=np.float64),
            quats_right=np.array([g.rot_right for g in records], dtype=np.float64),
            log_scales=np.array([g.log_scales for g in records], dtype=np.float64),
            opacity_logits=np.array([g.opacity_logit for g in records], dtype=np.float64),
            sh=np.array([g.color.coeffs for g in records], dtype=np.float64),
        )


@dataclass
class HybridScene:
    statics: StaticPool
    dynamics: DynamicPool
    tau: float
    duration_seconds: float = 1.0
    sh_degree: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    @classmethod
    def empty(cls, tau, sh_degree=1, duration_seconds=1.0):
        return cls(StaticPool.empty(sh_degree), DynamicPool.empty(sh_degree), tau, duration_seconds, sh_degree)

    def __len__(self):
        return len(self.statics) + len(self.dynamics)

    def copy(self):
        return HybridScene(self.statics.copy(), self.dynamics.copy(), self.tau,
                           self.duration_seconds, self.sh_degree)


def is_static(g, tau):
    if not tau > 0:
        raise ValueError("tau must be positive")
    return bool(np.exp(g.log_scales[3]) > tau)


def static_mask(pool, tau):
    """Vectorized :func:`is_static` over a dynamic pool."""
    return np.exp(pool.log_scales[:, 3]) > tau


def _spatial_quats(quats_left, quats_right):
    rot4 = gm.left_matrix(quats_left) @ gm.right_matrix(quats_right)
    rot3 = np.empty((len(rot4), 3, 3))
    leakage = np.empty(len(rot4))
    for i, R in enumerate(rot4):
        rot3[i], leakage[i] = gm.extract_spatial_rot(R)
    quats = gm.rot3_to_quat(rot3) if len(rot4) else np.zeros((0, 4))
    return quats, leakage


def convert_4d_to_3d(g):
    quat, _ = _spatial_quats(g.rot_left[None], g.rot_right[None])
    return Gaussian3D(
        mean3=np.array(g.mean4[:3], dtype=np.float64),
        rot=quat[0],
        log_scales=np.array(g.log_scales[:3], dtype=np.float64),
        opacity_logit=g.opacity_logit,
        color=SHColor(g.color.degree, g.color.coeffs.copy()),
    )


def convert_pool(pool):
    """Convert every Gaussian of a dynamic pool; returns ``(StaticPool, leakage)``."""
    quats, leakage = _spatial_quats(pool.quats_left, pool.quats_right)
    statics = StaticPool(
        means=pool.means[:, :3].copy(),
        quats=quats,
        log_scales=pool.log_scales[:, :3].copy(),
        opacity_logits=pool.opacity_logits.copy(),
        sh=pool.sh.copy(),
    )
    return statics, leakage


class ConversionReport(NamedTuple):
    count: int
    max_leakage: float
    mean_leakage: float
    moved: np.ndarray  # indices into the dynamic pool before the sweep
    new_static_start: int  # index of the first appended static


def sweep_convert(scene):
    """Move every dynamic Gaussian whose temporal scale exceeds ``tau`` into the static pool."""
    mask = static_mask(scene.dynamics, scene.tau)
    moved = np.flatnonzero(mask)
    start = len(scene.statics)
    if len(moved) == 0:
        return ConversionReport(0, 0.0, 0.0, moved, start)
    converted, leakage = convert_pool(scene.dynamics.take(moved))
    scene.statics.extend(converted)
    scene.dynamics.remove(mask)
    return ConversionReport(len(moved), float(leakage.max()), float(leakage.mean()), moved, start)


@dataclass
class ScaleHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


def temporal_scale_histogram(scene, bins, max_scale):
    if bins < 1 or not max_scale > 0:
        raise ValueError("need bins >= 1 and max_scale > 0")
    edges = np.linspace(0.0, max_scale, bins + 1)
    scales = np.exp(scene.dynamics.log_scales[:, 3])
    idx = np.minimum(np.floor(scales / (max_scale / bins)).astype(np.int64), bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.int64)
    return ScaleHistogram(edges, counts)
