"""Initial all-4D scene from a point list."""
import numpy as np

from ..scene import DynamicPool, HybridScene, StaticPool
from ..sh import num_coeffs, rgb_to_sh_dc

INIT_TIME = 0.5
INIT_TIME_SCALE = 0.1
INIT_OPACITY = 0.1


def knn_mean_distance(points, k=3, chunk=1024):
    """Mean distance of every point to its ``k`` nearest neighbours (brute force, chunked)."""
    pts = np.asarray(points, dtype=np.float64)
    out = np.empty(len(pts))
    sq = np.sum(pts * pts, axis=1)
    for lo in range(0, len(pts), chunk):
        block = pts[lo:lo + chunk]
        d2 = sq[lo:lo + chunk, None] + sq[None, :] - 2.0 * block @ pts.T
        d2[np.arange(len(block)), np.arange(lo, lo + len(block))] = np.inf
        part = np.sort(np.maximum(d2, 0.0), axis=1)[:, :k]
        out[lo:lo + chunk] = np.sqrt(part).mean(axis=1)
    return out


def init_scene(points, cfg):
    """One 4D Gaussian per point; ``cfg`` supplies ``tau``, ``sh_degree`` and optionally ``duration_seconds``."""
    n = len(points)
    if n < 4:
        raise ValueError("need at least 4 points to estimate neighbour distances")
    sh_degree = getattr(cfg, "sh_degree", 1)
    dist = np.maximum(knn_mean_distance(points.positions, 3), 1e-7)
    log_s = np.log(dist)
    sh = np.zeros((n, num_coeffs(sh_degree), 3))
    sh[:, 0] = rgb_to_sh_dc(points.colors)
    identity = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    dynamics = DynamicPool(
        means=np.column_stack([points.positions, np.full(n, INIT_TIME)]),
        quats_left=identity.copy(),
        quats_right=identity.copy(),
        log_scales=np.column_stack([log_s, log_s, log_s, np.full(n, np.log(INIT_TIME_SCALE))]),
        opacity_logits=np.full(n, np.log(INIT_OPACITY / (1.0 - INIT_OPACITY))),
        sh=sh,
    )
    return HybridScene(StaticPool.empty(sh_degree), dynamics, cfg.tau,
                       getattr(cfg, "duration_seconds", 1.0), sh_degree)
