"""Tiled rasterizer, brute-force reference renderer and density maps."""
from dataclasses import dataclass, field

import numba
import numpy as np
import torch

from . import kernels
from .project import DYNAMIC, CullStats, preprocess, scene_tensors


@dataclass
class RenderOptions:
    weight_cutoff: float = 0.05
    threads: int = None
    return_count: bool = False
    return_transmittance: bool = False


@dataclass
class RenderOutput:
    rgb: np.ndarray
    count: np.ndarray = None
    transmittance: np.ndarray = None
    stats: CullStats = field(default_factory=CullStats)


class _Composite(torch.autograd.Function):
    """Alpha compositing of binned splats with a hand-written backward pass."""

    @staticmethod
    def forward(ctx, means2d, conics, colors, alphas, plan):
        order, ranges, bg, width, height = plan
        m2, cn, col, al = (x.detach().numpy() for x in (means2d, conics, colors, alphas))
        rgb, trans, last, count = kernels.composite_forward(order, ranges, m2, cn, col, al, bg, width, height)
        ctx.plan = plan
        ctx.arrays = (m2, cn, col, al, last)
        ctx.extras = (trans, count)
        return torch.from_numpy(rgb)

    @staticmethod
    def backward(ctx, grad_rgb):
        order, ranges, bg, width, height = ctx.plan
        m2, cn, col, al, last = ctx.arrays
        g = np.ascontiguousarray(grad_rgb.detach().numpy(), dtype=np.float64)
        inst = kernels.composite_backward(order, ranges, last, m2, cn, col, al, bg, g, width, height)
        per = kernels.reduce_instances(order, inst, len(al))
        per = torch.from_numpy(per)
        return per[:, 0:2], per[:, 2:5], per[:, 5:8], per[:, 8], None


def _set_threads(threads):
    if threads is not None:
        numba.set_num_threads(int(threads))


def composite(splats, camera, background, threads=None):
    """Differentiable compositing of preprocessed splats; returns an (H, W, 3) tensor."""
    _set_threads(threads)
    bg = np.asarray(background, dtype=np.float64).reshape(3)
    order, ranges = kernels.bin_splats(splats.means2d.detach().numpy(), splats.extents, splats.depths,
                                       camera.width, camera.height)
    plan = (order, ranges, bg, camera.width, camera.height)
    return _Composite.apply(splats.means2d, splats.conics, splats.colors, splats.alphas, plan)


def rasterize(scene, camera, t, background_rgb=(0.0, 0.0, 0.0), opts=None):
    """Render ``scene`` at normalized time ``t`` with the tiled compositor."""
    opts = opts or RenderOptions()
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    _set_threads(opts.threads)
    bg = np.asarray(background_rgb, dtype=np.float64).reshape(3)
    with torch.no_grad():
        sp = preprocess(scene_tensors(scene), camera, t, scene.sh_degree, opts.weight_cutoff)
    m2 = sp.means2d.numpy()
    order, ranges = kernels.bin_splats(m2, sp.extents, sp.depths, camera.width, camera.height)
    rgb, trans, _, count = kernels.composite_forward(order, ranges, m2, sp.conics.numpy(), sp.colors.numpy(),
                                                     sp.alphas.numpy(), bg, camera.width, camera.height)
    return RenderOutput(rgb, count if opts.return_count else None,
                        trans if opts.return_transmittance else None, sp.stats)


def composite_reference(means2d, conics, colors, alphas, depths, background, width, height):
    """Naive compositing: one global depth sort, every splat tested at every pixel."""
    order = np.lexsort((np.arange(len(depths)), depths))
    py, px = np.mgrid[0:height, 0:width].astype(np.float64)
    T = np.ones((height, width))
    C = np.zeros((height, width, 3))
    active = np.ones((height, width), dtype=bool)
    for i in order:
        dx = px - means2d[i, 0]
        dy = py - means2d[i, 1]
        power = -0.5 * (conics[i, 0] * dx * dx + conics[i, 2] * dy * dy) - conics[i, 1] * dx * dy
        a = alphas[i] * np.exp(power)
        hit = active & (power <= 0.0) & (a >= kernels.ALPHA_MIN)
        test_T = T * (1.0 - a)
        stop = hit & (test_T < kernels.T_MIN)
        active &= ~stop
        add = hit & ~stop
        for ch in range(3):
            C[..., ch] = np.where(add, C[..., ch] + colors[i, ch] * a * T, C[..., ch])
        T = np.where(add, test_T, T)
    return C + T[..., None] * np.asarray(background, dtype=np.float64), T


def reference_render(scene, camera, t, background_rgb=(0.0, 0.0, 0.0), weight_cutoff=0.05):
    with torch.no_grad():
        sp = preprocess(scene_tensors(scene), camera, t, scene.sh_degree, weight_cutoff)
    rgb, T = composite_reference(sp.means2d.numpy(), sp.conics.numpy(), sp.colors.numpy(), sp.alphas.numpy(),
                                 sp.depths, background_rgb, camera.width, camera.height)
    return RenderOutput(rgb, None, T, sp.stats)


def footprint_counts(means2d, radii, width, height):
    count = np.zeros((height, width), dtype=np.int64)
    for (u, v), r in zip(means2d, radii):
        x0 = max(int(np.ceil(u - r)), 0)
        x1 = min(int(np.floor(u + r)), width - 1)
        y0 = max(int(np.ceil(v - r)), 0)
        y1 = min(int(np.floor(v + r)), height - 1)
        if x0 <= x1 and y0 <= y1:
            count[y0:y1 + 1, x0:x1 + 1] += 1
    return count


def density_map(scene, camera, t, dynamics_only=False, weight_cutoff=0.05):
    """Per-pixel number of projected Gaussians whose 3-sigma box covers the pixel."""
    with torch.no_grad():
        sp = preprocess(scene_tensors(scene), camera, t, scene.sh_degree, weight_cutoff)
    sel = sp.pool == DYNAMIC if dynamics_only else np.ones(len(sp.pool), dtype=bool)
    return footprint_counts(sp.means2d.numpy()[sel], sp.radii[sel], camera.width, camera.height)
