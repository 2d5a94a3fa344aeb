"""Screen-space projection of 3D Gaussians and temporal slicing of 4D Gaussians.

The batched path runs in torch (float64) so training can differentiate
through it; rendering calls it under ``torch.no_grad``.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch

from .. import gaussmath as gm
from ..errors import DegenerateTemporalError
from ..scene import eval_sh
from ..sh import basis_terms, num_coeffs

LOW_PASS = 0.3
DET_MIN = 1e-12
ALPHA_MAX = 0.999
ALPHA_MIN = 1.0 / 255.0
DYNAMIC, STATIC = 0, 1


@dataclass
class SplatPrimitive:
    screen_mean: np.ndarray
    conic: np.ndarray  # 2x2
    depth: float
    radius: int
    rgb: np.ndarray = None
    alpha: float = 1.0
    source: tuple = None
    cov2d: np.ndarray = None


@dataclass
class CullStats:
    depth: int = 0
    temporal_weight: int = 0
    degenerate_temporal: int = 0
    singular: int = 0
    offscreen: int = 0

    def add(self, other):
        for k in vars(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))


class Splats(NamedTuple):
    means2d: torch.Tensor
    conics: torch.Tensor  # (M, 3): a, b, c of [[a, b], [b, c]]
    colors: torch.Tensor
    alphas: torch.Tensor
    depths: np.ndarray
    radii: np.ndarray
    extents: np.ndarray
    pool: np.ndarray
    index: np.ndarray
    stats: CullStats


def _t(x):
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def quat_to_rot3_t(q):
    q = q / q.norm(dim=-1, keepdim=True)
    w, x, y, z = q.unbind(-1)
    return torch.stack([
        torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def rot4_t(ql, qr):
    ql = ql / ql.norm(dim=-1, keepdim=True)
    qr = qr / qr.norm(dim=-1, keepdim=True)
    a, b, c, d = ql.unbind(-1)
    p, q, r, s = qr.unbind(-1)
    left = torch.stack([
        torch.stack([a, -b, -c, -d], -1),
        torch.stack([b, a, -d, c], -1),
        torch.stack([c, d, a, -b], -1),
        torch.stack([d, -c, b, a], -1),
    ], -2)
    right = torch.stack([
        torch.stack([p, -q, -r, -s], -1),
        torch.stack([q, p, s, -r], -1),
        torch.stack([r, -s, p, q], -1),
        torch.stack([s, r, -q, p], -1),
    ], -2)
    return left @ right


def cov_t(R, log_scales):
    M = R * torch.exp(log_scales)[..., None, :]
    return M @ M.transpose(-1, -2)


def slice_t(means4, cov4, t):
    """Batched conditioning; returns ``(mean3, cov3, weight, var_t)``."""
    var_t = cov4[:, 3, 3]
    safe = torch.clamp(var_t, min=gm.SIGMA_T_MIN)
    cross = cov4[:, :3, 3]
    dt = t - means4[:, 3]
    mean3 = means4[:, :3] + cross * (dt / safe)[:, None]
    cov3 = cov4[:, :3, :3] - cross[:, :, None] * cov4[:, None, 3, :3] / safe[:, None, None]
    cov3 = 0.5 * (cov3 + cov3.transpose(-1, -2))
    weight = torch.exp(-0.5 * dt * dt / safe)
    return mean3, cov3, weight, var_t


def _eval_colors(sh, mean3, center, degree):
    d = mean3 - center
    d = d / d.norm(dim=-1, keepdim=True)
    basis = torch.stack(basis_terms(d[:, 0], d[:, 1], d[:, 2], degree), -1)
    k = num_coeffs(degree)
    return torch.clamp(torch.einsum("nk,nkc->nc", basis, sh[:, :k]) + 0.5, min=0.0)


def project_means_covs(mean3, cov3, camera):
    """EWA projection. Returns screen means, 2D covariances (with low-pass), camera depth."""
    R = _t(camera.R)
    p = mean3 @ R.T + _t(camera.T)
    x, y, z = p.unbind(-1)
    zero = torch.zeros_like(z)
    J = torch.stack([
        torch.stack([camera.fx / z, zero, -camera.fx * x / (z * z)], -1),
        torch.stack([zero, camera.fy / z, -camera.fy * y / (z * z)], -1),
    ], -2)
    JW = J @ R
    cov2 = JW @ cov3 @ JW.transpose(-1, -2) + LOW_PASS * torch.eye(2, dtype=mean3.dtype)
    means2d = torch.stack([camera.fx * x / z + camera.cx, camera.fy * y / z + camera.cy], -1)
    return means2d, cov2, z


def _screen_bounds(means2d, cov2, alphas):
    """Radius (3 sigma) and tile extent in pixels, computed without gradient."""
    a = cov2[:, 0, 0]
    b = cov2[:, 0, 1]
    c = cov2[:, 1, 1]
    mid = 0.5 * (a + c)
    lam = mid + np.sqrt(np.maximum(mid * mid - (a * c - b * b), 0.0))
    radii = np.ceil(3.0 * np.sqrt(lam)).astype(np.int64)
    # every pixel where alpha * G >= 1/255 lies within this distance of the mean
    reach = np.sqrt(2.0 * np.log(np.maximum(alphas / ALPHA_MIN, 1.0)) * lam)
    extents = np.ceil(reach).astype(np.int64)
    return radii, extents


def preprocess(tensors, camera, t, sh_degree, weight_cutoff=0.05):
    """Slice, project and shade both pools into one splat list (dynamics first).

    ``tensors`` maps ``"dynamics"``/``"statics"`` to dicts of torch tensors
    named like the pool columns.
    """
    stats = CullStats()
    dyn = tensors["dynamics"]
    sta = tensors["statics"]
    parts = []

    if dyn["means"].shape[0] > 0:
        cov4 = cov_t(rot4_t(dyn["quats_left"], dyn["quats_right"]), dyn["log_scales"])
        mean3, cov3, weight, var_t = slice_t(dyn["means"], cov4, t)
        with torch.no_grad():
            degenerate = (var_t < gm.SIGMA_T_MIN).detach().numpy()
            faint = (weight < weight_cutoff).detach().numpy() & ~degenerate
        stats.degenerate_temporal += int(degenerate.sum())
        stats.temporal_weight += int(faint.sum())
        keep = np.flatnonzero(~(degenerate | faint))
        if len(keep):
            k = torch.from_numpy(keep)
            parts.append((mean3[k], cov3[k], torch.sigmoid(dyn["opacity_logits"][k]) * weight[k],
                          dyn["sh"][k], DYNAMIC, keep))

    if sta["means"].shape[0] > 0:
        n = sta["means"].shape[0]
        cov3 = cov_t(quat_to_rot3_t(sta["quats"]), sta["log_scales"])
        parts.append((sta["means"], cov3, torch.sigmoid(sta["opacity_logits"]), sta["sh"], STATIC,
                      np.arange(n)))

    if not parts:
        return _empty_splats(stats)

    mean3 = torch.cat([p[0] for p in parts])
    cov3 = torch.cat([p[1] for p in parts])
    opac = torch.cat([p[2] for p in parts])
    sh = torch.cat([p[3] for p in parts])
    pool = np.concatenate([np.full(len(p[5]), p[4]) for p in parts])
    index = np.concatenate([p[5] for p in parts])

    with torch.no_grad():
        z = (mean3 @ _t(camera.R[2]) + camera.T[2]).detach().numpy()
    in_depth = (z >= camera.near) & (z <= camera.far)
    stats.depth += int((~in_depth).sum())
    sel = torch.from_numpy(np.flatnonzero(in_depth))
    mean3, cov3, opac, sh = mean3[sel], cov3[sel], opac[sel], sh[sel]
    pool, index = pool[in_depth], index[in_depth]

    means2d, cov2, depth = project_means_covs(mean3, cov3, camera)
    alphas = torch.clamp(opac, max=ALPHA_MAX)
    with torch.no_grad():
        c2 = cov2.detach().numpy()
        det = c2[:, 0, 0] * c2[:, 1, 1] - c2[:, 0, 1] * c2[:, 1, 0]
        ok = det > DET_MIN
        radii, extents = _screen_bounds(means2d.detach().numpy(), c2, alphas.detach().numpy())
        m2 = means2d.detach().numpy()
        onscreen = ((m2[:, 0] + radii >= 0) & (m2[:, 0] - radii <= camera.width - 1)
                    & (m2[:, 1] + radii >= 0) & (m2[:, 1] - radii <= camera.height - 1))
    stats.singular += int((~ok).sum())
    stats.offscreen += int((ok & ~onscreen).sum())
    keep = ok & onscreen
    sel = torch.from_numpy(np.flatnonzero(keep))
    means2d, cov2, depth, alphas = means2d[sel], cov2[sel], depth[sel], alphas[sel]
    mean3, sh = mean3[sel], sh[sel]

    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det_t = a * c - b * b
    conics = torch.stack([c / det_t, -b / det_t, a / det_t], -1)
    colors = _eval_colors(sh, mean3, _t(camera.center), sh_degree)
    return Splats(means2d, conics, colors, alphas, depth.detach().numpy().copy(),
                  radii[keep], extents[keep], pool[keep], index[keep], stats)


def _empty_splats(stats):
    z = torch.zeros((0,), dtype=torch.float64)
    return Splats(z.reshape(0, 2), z.reshape(0, 3), z.reshape(0, 3), z, np.zeros(0), np.zeros(0, np.int64),
                  np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64), stats)


def scene_tensors(scene, requires_grad=False):
    """Wrap pool arrays as torch tensors (sharing memory)."""
    out = {}
    for name, pool in (("statics", scene.statics), ("dynamics", scene.dynamics)):
        out[name] = {}
        for key, arr in pool.arrays().items():
            ten = torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float64))
            if requires_grad:
                ten.requires_grad_(True)
            out[name][key] = ten
    return out


def project_3d(mean3, cov3, camera):
    """Project one 3D Gaussian; returns a :class:`SplatPrimitive` or ``None`` when culled."""
    mean3 = np.asarray(mean3, dtype=np.float64)
    z = float(camera.R[2] @ mean3 + camera.T[2])
    if not camera.near <= z <= camera.far:
        return None
    with torch.no_grad():
        m2, c2, _ = project_means_covs(_t(mean3[None]), _t(np.asarray(cov3)[None]), camera)
    m2 = m2.numpy()[0]
    c2 = c2.numpy()[0]
    det = c2[0, 0] * c2[1, 1] - c2[0, 1] * c2[1, 0]
    if det <= DET_MIN:
        return None
    radii, _ = _screen_bounds(m2[None], c2[None], np.ones(1))
    r = int(radii[0])
    if m2[0] + r < 0 or m2[0] - r > camera.width - 1 or m2[1] + r < 0 or m2[1] - r > camera.height - 1:
        return None
    conic = np.array([[c2[1, 1], -c2[0, 1]], [-c2[1, 0], c2[0, 0]]]) / det
    return SplatPrimitive(m2, conic, z, r, cov2d=c2)


def slice_project_4d(g, t, camera, weight_cutoff=0.05):
    """Slice a :class:`~hybridgs.scene.Gaussian4D` at ``t`` and project it.

    Returns ``None`` when culled; the alpha of the result is the activated
    opacity times the temporal weight.
    """
    if not 0.0 < weight_cutoff < 1.0:
        raise ValueError("weight_cutoff must lie in (0, 1)")
    R4 = gm.rot4_from_pair(gm.normalize_quat(g.rot_left), gm.normalize_quat(g.rot_right))
    cov4 = gm.build_cov(R4, g.log_scales)
    try:
        sl = gm.condition_at_time(g.mean4, cov4, t)
    except DegenerateTemporalError:
        return None
    if sl.temporal_weight < weight_cutoff:
        return None
    prim = project_3d(sl.mean3, sl.cov3, camera)
    if prim is None:
        return None
    opacity = 1.0 / (1.0 + math.exp(-g.opacity_logit))
    prim.alpha = min(opacity * float(sl.temporal_weight), ALPHA_MAX)
    view = sl.mean3 - camera.center
    prim.rgb = eval_sh(g.color, view / np.linalg.norm(view))
    return prim
