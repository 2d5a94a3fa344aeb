"""The fixed synthetic benchmark and the measurements taken on it."""
from dataclasses import dataclass

import numpy as np

from .dataio.synthetic import SynthSpec, generate_synthetic
from .metrics import MetricReport
from .raster.render import density_map, rasterize
from .scene import StaticPool
from .sh import C0
from .train import TrainConfig

SEED = 0
HELD_OUT = 0
# Pixels where the ground-truth moving objects reach less opacity than this
# count as static background.
STATIC_ALPHA = 0.01


def benchmark_spec():
    return SynthSpec()


def benchmark_config(**overrides):
    """Desk-scale schedule used by the acceptance runs."""
    values = dict(iterations=2000, batch_size=2, warmup_iters=500, densify_interval=100,
                  densify_stop_iter=1500, grad_threshold=1e-4, tau=0.3, seed=SEED)
    values.update(overrides)
    return TrainConfig(**values)


@dataclass
class Benchmark:
    train: object
    test: object
    ground_truth: object
    paths: list


def make_benchmark(spec=None, seed=SEED, held_out=HELD_OUT):
    ds, gt = generate_synthetic(spec or benchmark_spec(), seed)
    rest = [c for c in ds.camera_ids if c != held_out]
    return Benchmark(ds.subset(rest), ds.subset([held_out]), gt, ds.extras.get("paths", []))


def evaluate(scene, dataset, background=(0.0, 0.0, 0.0)):
    """Per-frame PSNR/SSIM over every camera and frame of ``dataset``."""
    report = MetricReport()
    for c, cam in zip(dataset.camera_ids, dataset.cameras):
        frames = dataset.frames[dataset.camera_ids.index(c)]
        for i, t in enumerate(dataset.timestamps):
            report.add(rasterize(scene, cam, float(t), background).rgb, frames[i], f"cam{c}_f{i:03d}")
    return report


def _painted(scene, static_rgb, dynamic_rgb):
    """Copy of ``scene`` whose pools emit flat colours, so renders read out per-pool weight."""
    out = scene.copy()
    for pool, rgb in ((out.statics, static_rgb), (out.dynamics, dynamic_rgb)):
        pool.sh[:] = 0.0
        pool.sh[:, 0] = (np.asarray(rgb, dtype=np.float64) - 0.5) / C0
    return out


def dynamic_alpha(ground_truth, camera, t):
    """Accumulated opacity of the ground-truth moving objects alone."""
    only = _painted(ground_truth, (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    only.statics = StaticPool.empty(ground_truth.sh_degree)
    return rasterize(only, camera, t).rgb[..., 0]


def static_region(ground_truth, camera, t, threshold=STATIC_ALPHA):
    return dynamic_alpha(ground_truth, camera, t) < threshold


def static_mass_fraction(scene, ground_truth, dataset):
    """Share of the rendered weight over static pixels that comes from the statics pool.

    Each pool is painted a flat colour (statics red, dynamics green) so a
    single render gives the per-pixel sum of blend weights of each pool.
    Pixels are summed over every camera and frame of ``dataset``.
    """
    painted = _painted(scene, (1.0, 0.0, 0.0), (0.0, 1.0, 0.0))
    num = den = 0.0
    for cam in dataset.cameras:
        for t in dataset.timestamps:
            w = rasterize(painted, cam, float(t)).rgb
            mask = static_region(ground_truth, cam, float(t))
            num += w[..., 0][mask].sum()
            den += (w[..., 0] + w[..., 1])[mask].sum()
    return float(num / den) if den > 0 else float("nan")


def max_static_density(scene, ground_truth, cameras, times):
    """Largest per-pixel Gaussian count inside the static region over the given views."""
    best = 0
    for cam in cameras:
        for t in times:
            mask = static_region(ground_truth, cam, float(t))
            if mask.any():
                best = max(best, int(density_map(scene, cam, float(t))[mask].max()))
    return best
