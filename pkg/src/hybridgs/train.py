"""Optimization of a hybrid scene against multi-view video."""
import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import torch
import torch.nn.functional as F

from . import gaussmath as gm
from .dataio.dataset import camera_extent
from .dataio.init import init_scene
from .errors import NumericAbort
from .metrics import K1, K2, gaussian_window, psnr
from .raster.project import DYNAMIC, STATIC, preprocess, scene_tensors
from .raster.render import composite, rasterize
from .scene import DynamicPool, StaticPool, sweep_convert

POOLS = ("statics", "dynamics")
BETA1, BETA2, EPS = 0.9, 0.999, 1e-15
SPLIT_FACTOR = 1.6
SIZE_GATE = 0.01
RESET_OPACITY = 0.01


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 2
    warmup_iters: int = 500
    densify_interval: int = 100
    densify_stop_iter: int = 1500
    grad_threshold: float = 2e-4
    opacity_prune_eps: float = 0.005
    max_gaussians: int = 4000
    tau: float = 0.3
    ssim_lambda: float = 0.2
    sh_degree: int = 1
    weight_cutoff: float = 0.05
    background: tuple = (0.0, 0.0, 0.0)
    lr_means: float = 1.6e-3
    lr_means_final: float = 1.6e-5
    lr_time: float = 1e-2
    lr_quats: float = 5e-3
    lr_scales: float = 1e-2
    lr_time_scale: float = 2e-2
    lr_opacity: float = 5e-2
    lr_sh_dc: float = 1e-2
    lr_sh_rest: float = 5e-4
    opacity_reset_enabled: bool = False
    opacity_reset_interval: int = 500
    probe_interval: int = 100
    seed: int = 0

    def __post_init__(self):
        self.background = tuple(float(x) for x in self.background)
        if self.warmup_iters > self.iterations and self.iterations > 0:
            raise ValueError("warmup_iters must not exceed iterations")
        if self.densify_interval < 1:
            raise ValueError("densify_interval must be >= 1")
        if not 0.0 <= self.ssim_lambda <= 1.0:
            raise ValueError("ssim_lambda must lie in [0, 1]")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------- loss

def _ssim_t(x, y):
    """SSIM of (H, W, 3) tensors, valid-region Gaussian window, channel mean."""
    g = torch.from_numpy(gaussian_window())
    w = (g[:, None] * g[None, :]).expand(3, 1, -1, -1).contiguous()
    x = x.permute(2, 0, 1)[None]
    y = y.permute(2, 0, 1)[None]

    def filt(img):
        return F.conv2d(img, w, groups=3)

    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    c1, c2 = K1 ** 2, K2 ** 2
    smap = (2 * mx * my + c1) * (2 * sxy + c2) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return smap.mean(dim=(0, 2, 3)).mean()


def photometric_loss_t(rendered, gt, ssim_lambda):
    loss = (1.0 - ssim_lambda) * torch.abs(rendered - gt).mean()
    if ssim_lambda > 0:
        loss = loss + ssim_lambda * (1.0 - _ssim_t(rendered, gt))
    return loss


def photometric_loss(rendered, gt, ssim_lambda=0.2):
    """``(1 - lambda) * L1 + lambda * (1 - SSIM)`` for (H, W, 3) images."""
    r = torch.as_tensor(np.asarray(rendered, dtype=np.float64))
    g = torch.as_tensor(np.asarray(gt, dtype=np.float64))
    if r.shape != g.shape:
        raise ValueError(f"image shapes differ: {tuple(r.shape)} vs {tuple(g.shape)}")
    return float(photometric_loss_t(r, g, ssim_lambda))


# ---------------------------------------------------------------- gradients

@dataclass
class Gradients:
    params: dict  # pool -> name -> array shaped like the parameter
    screen_norms: dict  # pool -> (N,) summed per-view norm of d loss / d screen mean
    visible: dict  # pool -> (N,) number of views in which the Gaussian was projected
    loss: float = 0.0
    renders: list = field(default_factory=list)


def _zero_like_scene(scene):
    return {p: np.zeros(len(getattr(scene, p))) for p in POOLS}


def batch_gradients(scene, views, cfg):
    """Mean loss over ``views`` (camera, t, gt) and its gradient for every parameter."""
    tensors = scene_tensors(scene, requires_grad=True)
    total = 0.0
    splat_lists = []
    renders = []
    for camera, t, gt in views:
        sp = preprocess(tensors, camera, t, scene.sh_degree, cfg.weight_cutoff)
        if sp.means2d.requires_grad:
            sp.means2d.retain_grad()
        img = composite(sp, camera, cfg.background)
        total = total + photometric_loss_t(img, torch.as_tensor(gt), cfg.ssim_lambda)
        splat_lists.append(sp)
        renders.append(img.detach().numpy())
    loss = total / len(views)
    norms = _zero_like_scene(scene)
    visible = _zero_like_scene(scene)
    if loss.requires_grad:
        loss.backward()
    for sp in splat_lists:
        if sp.means2d.grad is None:
            continue
        # per-view norm, rescaled so the threshold does not depend on the batch size
        n = sp.means2d.grad.norm(dim=1).numpy() * len(views)
        for code, pool in ((STATIC, "statics"), (DYNAMIC, "dynamics")):
            sel = sp.pool == code
            np.add.at(norms[pool], sp.index[sel], n[sel])
            np.add.at(visible[pool], sp.index[sel], 1.0)
    params = {}
    for pool in POOLS:
        params[pool] = {}
        for name, ten in tensors[pool].items():
            g = ten.grad
            params[pool][name] = np.zeros(ten.shape) if g is None else g.numpy().copy()
    return Gradients(params, norms, visible, float(loss.detach()) if torch.is_tensor(loss) else float(loss), renders)


def backward(scene, camera, t, gt, cfg):
    """Gradient of the photometric loss of one view with respect to all parameters."""
    return batch_gradients(scene, [(camera, t, gt)], cfg)


# ---------------------------------------------------------------- optimizer

def _lr_table(cfg, pool, name, pos_lr):
    if name == "means":
        if pool == "dynamics":
            return np.array([pos_lr, pos_lr, pos_lr, cfg.lr_time])
        return pos_lr
    if name in ("quats", "quats_left", "quats_right"):
        return cfg.lr_quats
    if name == "log_scales":
        if pool == "dynamics":
            return np.array([cfg.lr_scales] * 3 + [cfg.lr_time_scale])
        return cfg.lr_scales
    if name == "opacity_logits":
        return cfg.lr_opacity
    if name == "sh":
        return "sh"
    raise KeyError(name)


@dataclass
class GradAccum:
    """Optimizer moments plus densification statistics, row-aligned with the pools."""

    moments: dict  # pool -> name -> (m, v)
    steps: dict  # pool -> name -> int
    grad_sum: dict  # pool -> (N,)
    grad_count: dict  # pool -> (N,)
    skipped: int = 0

    @classmethod
    def for_scene(cls, scene):
        moments, steps = {}, {}
        for pool in POOLS:
            arrs = getattr(scene, pool).arrays()
            moments[pool] = {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in arrs.items()}
            steps[pool] = {k: 0 for k in arrs}
        return cls(moments, steps, _zero_like_scene(scene), _zero_like_scene(scene))

    def check_aligned(self, scene):
        for pool in POOLS:
            n = len(getattr(scene, pool))
            for name, (m, v) in self.moments[pool].items():
                if len(m) != n or len(v) != n:
                    raise AssertionError(f"optimizer state for {pool}.{name} has {len(m)} rows, pool has {n}")
            if len(self.grad_sum[pool]) != n or len(self.grad_count[pool]) != n:
                raise AssertionError(f"densification statistics misaligned for {pool}")

    def take(self, pool, idx):
        self.moments[pool] = {k: (m[idx], v[idx]) for k, (m, v) in self.moments[pool].items()}
        self.grad_sum[pool] = self.grad_sum[pool][idx]
        self.grad_count[pool] = self.grad_count[pool][idx]

    def append(self, pool, rows):
        """Append rows; ``rows`` maps name -> (m, v) or is an int count of zero rows."""
        for k, (m, v) in self.moments[pool].items():
            if isinstance(rows, int):
                add_m = np.zeros((rows,) + m.shape[1:])
                add_v = add_m.copy()
            else:
                add_m, add_v = rows[k]
            self.moments[pool][k] = (np.concatenate([m, add_m]), np.concatenate([v, add_v]))
        n = rows if isinstance(rows, int) else len(next(iter(rows.values()))[0])
        self.grad_sum[pool] = np.concatenate([self.grad_sum[pool], np.zeros(n)])
        self.grad_count[pool] = np.concatenate([self.grad_count[pool], np.zeros(n)])

    def reset_densify_stats(self):
        for pool in POOLS:
            self.grad_sum[pool][:] = 0.0
            self.grad_count[pool][:] = 0.0

    def state_arrays(self):
        """Flat mapping for checkpoint storage."""
        out = {}
        for pool in POOLS:
            for name, (m, v) in self.moments[pool].items():
                out[f"{pool}.{name}.m"] = m
                out[f"{pool}.{name}.v"] = v
                out[f"{pool}.{name}.step"] = np.array([self.steps[pool][name]], dtype=np.int64)
            out[f"{pool}.grad_sum"] = self.grad_sum[pool]
            out[f"{pool}.grad_count"] = self.grad_count[pool]
        out["skipped"] = np.array([self.skipped], dtype=np.int64)
        return out

    @classmethod
    def from_state_arrays(cls, arrays):
        moments = {p: {} for p in POOLS}
        steps = {p: {} for p in POOLS}
        for key, arr in arrays.items():
            parts = key.split(".")
            if len(parts) == 3:
                pool, name, kind = parts
                if kind == "step":
                    steps[pool][name] = int(arr[0])
                else:
                    m, v = moments[pool].get(name, (None, None))
                    moments[pool][name] = (arr, v) if kind == "m" else (m, arr)
        return cls(moments, steps, {p: arrays[f"{p}.grad_sum"] for p in POOLS},
                   {p: arrays[f"{p}.grad_count"] for p in POOLS}, int(arrays["skipped"][0]))


def adam_update(param, grad, m, v, step, lr):
    """One bias-corrected Adam step on rows with finite gradients; returns the skip count."""
    flat = grad.reshape(len(grad), -1) if grad.ndim > 1 else grad[:, None]
    ok = np.all(np.isfinite(flat), axis=1)
    bad = int((~ok).sum())
    g = np.where(ok.reshape((-1,) + (1,) * (grad.ndim - 1)), grad, 0.0)
    rows = ok.reshape((-1,) + (1,) * (grad.ndim - 1))
    m_new = BETA1 * m + (1.0 - BETA1) * g
    v_new = BETA2 * v + (1.0 - BETA2) * g * g
    m[...] = np.where(rows, m_new, m)
    v[...] = np.where(rows, v_new, v)
    m_hat = m / (1.0 - BETA1 ** step)
    v_hat = v / (1.0 - BETA2 ** step)
    update = lr * m_hat / (np.sqrt(v_hat) + EPS)
    param -= np.where(rows, update, 0.0)
    return bad


def optimizer_step(state, scene, grads, cfg, pos_lr=None):
    """Apply one Adam step to every parameter of both pools, in place."""
    pos_lr = cfg.lr_means if pos_lr is None else pos_lr
    for pool in POOLS:
        arrs = getattr(scene, pool).arrays()
        for name, param in arrs.items():
            if len(param) == 0:
                continue
            grad = grads.params[pool][name]
            lr = _lr_table(cfg, pool, name, pos_lr)
            if isinstance(lr, str):
                lr = np.full(param.shape[1:], cfg.lr_sh_rest)
                lr[0] = cfg.lr_sh_dc
            state.steps[pool][name] += 1
            m, v = state.moments[pool][name]
            state.skipped += adam_update(param, grad, m, v, state.steps[pool][name], lr)
        for name in ("quats", "quats_left", "quats_right"):
            if name in arrs and len(arrs[name]):
                q = arrs[name]
                q /= np.linalg.norm(q, axis=1, keepdims=True)


# ---------------------------------------------------------------- densification

@dataclass
class DensifyReport:
    cloned: dict = field(default_factory=lambda: {p: 0 for p in POOLS})
    split: dict = field(default_factory=lambda: {p: 0 for p in POOLS})
    pruned: dict = field(default_factory=lambda: {p: 0 for p in POOLS})
    opacity_reset: bool = False

    @property
    def total(self):
        return sum(self.cloned.values()) + sum(self.split.values()) + sum(self.pruned.values())


def _sample_offsets(pool, idx, rng, scale=1.0):
    """Draw one sample per selected Gaussian from its own distribution (minus the mean)."""
    if len(idx) == 0:
        return np.zeros((0, pool.means.shape[1]))
    s = np.exp(pool.log_scales[idx]) * scale
    z = rng.standard_normal(s.shape) * s
    if isinstance(pool, DynamicPool):
        R = gm.left_matrix(gm.normalize_quat(pool.quats_left[idx])) @ gm.right_matrix(
            gm.normalize_quat(pool.quats_right[idx]))
    else:
        R = gm.quat_to_rot3(gm.normalize_quat(pool.quats[idx]))
    return np.einsum("nij,nj->ni", R, z)


def _densify_pool(pool, name, state, cfg, extent, rng, budget, report):
    n = len(pool)
    if n == 0:
        return pool
    count = state.grad_count[name]
    avg = np.where(count > 0, state.grad_sum[name] / np.maximum(count, 1), 0.0)
    hot = avg >= cfg.grad_threshold
    size = np.exp(pool.log_scales[:, :3]).max(axis=1)
    small = size <= SIZE_GATE * extent
    clone_idx = np.flatnonzero(hot & small)
    split_idx = np.flatnonzero(hot & ~small)
    # keep the hottest candidates when the cap would be exceeded
    room = max(budget, 0)
    if len(clone_idx) + len(split_idx) > room:
        cand = np.concatenate([clone_idx, split_idx])
        cand = cand[np.argsort(-avg[cand], kind="stable")[:room]]
        clone_idx = np.sort(cand[np.isin(cand, clone_idx)])
        split_idx = np.sort(cand[np.isin(cand, split_idx)])

    clones = pool.take(clone_idx)
    clones.means[:, :3] += _sample_offsets(pool, clone_idx, rng, scale=0.1)[:, :3]

    children = pool.take(np.repeat(split_idx, 2))
    offsets = _sample_offsets(pool, np.repeat(split_idx, 2), rng)
    children.means += offsets
    children.log_scales[:, :3] -= np.log(SPLIT_FACTOR)

    keep = np.ones(n, dtype=bool)
    keep[split_idx] = False
    kept = np.flatnonzero(keep)
    new_pool = pool.take(kept)
    state.take(name, kept)
    new_pool.extend(clones)
    state.append(name, len(clones))
    new_pool.extend(children)
    state.append(name, len(children))

    report.cloned[name] += len(clone_idx)
    report.split[name] += len(split_idx)
    return new_pool


def densify_and_prune(scene, state, cfg, iteration, rng=None, extent=1.0):
    """Clone, split and prune each pool independently; mutates ``scene`` and ``state``."""
    rng = rng if rng is not None else np.random.default_rng(cfg.seed + iteration)
    report = DensifyReport()
    if iteration < cfg.warmup_iters or iteration > cfg.densify_stop_iter:
        return report
    budget = cfg.max_gaussians - len(scene)
    for name in ("dynamics", "statics"):
        pool = getattr(scene, name)
        before = len(pool)
        new_pool = _densify_pool(pool, name, state, cfg, extent, rng, budget, report)
        setattr(scene, name, new_pool)
        budget -= len(new_pool) - before
    for name in POOLS:
        pool = getattr(scene, name)
        low = 1.0 / (1.0 + np.exp(-pool.opacity_logits)) < cfg.opacity_prune_eps
        if low.any():
            keep = np.flatnonzero(~low)
            setattr(scene, name, pool.take(keep))
            state.take(name, keep)
            report.pruned[name] += int(low.sum())
    if cfg.opacity_reset_enabled and iteration % cfg.opacity_reset_interval == 0:
        cap = math.log(RESET_OPACITY / (1.0 - RESET_OPACITY))
        for name in POOLS:
            pool = getattr(scene, name)
            np.minimum(pool.opacity_logits, cap, out=pool.opacity_logits)
        report.opacity_reset = True
    state.reset_densify_stats()
    return report


_INHERITED = {"means": (slice(0, 3),), "log_scales": (slice(0, 3),), "opacity_logits": (), "sh": ()}


def sweep_convert_tracked(scene, state):
    """Run the classification sweep and carry optimizer rows across pools."""
    dyn_moments = {k: (m.copy(), v.copy()) for k, (m, v) in state.moments["dynamics"].items()}
    dyn_sum = state.grad_sum["dynamics"].copy()
    dyn_count = state.grad_count["dynamics"].copy()
    report = sweep_convert(scene)
    if report.count == 0:
        return report
    moved = report.moved
    rows = {}
    for name, (m, v) in state.moments["statics"].items():
        if name in _INHERITED:
            src_m, src_v = dyn_moments[name]
            cols = _INHERITED[name]
            rows[name] = (src_m[moved][(slice(None),) + cols], src_v[moved][(slice(None),) + cols])
        else:
            rows[name] = (np.zeros((len(moved),) + m.shape[1:]), np.zeros((len(moved),) + v.shape[1:]))
    state.append("statics", rows)
    state.grad_sum["statics"][-len(moved):] = dyn_sum[moved]
    state.grad_count["statics"][-len(moved):] = dyn_count[moved]
    keep = np.setdiff1d(np.arange(len(dyn_sum)), moved)
    state.take("dynamics", keep)
    return report


# ---------------------------------------------------------------- training loop

@dataclass
class TrainLog:
    iteration: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    probe_psnr: list = field(default_factory=list)
    n_static: list = field(default_factory=list)
    n_dynamic: list = field(default_factory=list)
    conversions: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    events: list = field(default_factory=list)
    skipped_grads: int = 0
    state: object = None  # final GradAccum, for checkpointing

    def record(self, it, loss, probe, scene, conv, wall):
        self.iteration.append(it)
        self.loss.append(loss)
        self.probe_psnr.append(probe)
        self.n_static.append(len(scene.statics))
        self.n_dynamic.append(len(scene.dynamics))
        self.conversions.append(conv)
        self.wall_time.append(wall)

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["iteration", "loss", "probe_psnr", "n_static", "n_dynamic", "conversions", "wall_time"])
            for row in zip(self.iteration, self.loss, self.probe_psnr, self.n_static, self.n_dynamic,
                           self.conversions, self.wall_time):
                w.writerow([row[0], repr(row[1]), "" if math.isnan(row[2]) else f"{row[2]:.6f}",
                            row[3], row[4], row[5], f"{row[6]:.3f}"])


def _position_lr(cfg, it, extent):
    if cfg.iterations <= 1:
        return cfg.lr_means * extent
    frac = min(max(it / cfg.iterations, 0.0), 1.0)
    return extent * math.exp((1 - frac) * math.log(cfg.lr_means) + frac * math.log(cfg.lr_means_final))


def train(dataset, cfg, scene=None, callback=None):
    """Optimize a hybrid scene; returns ``(scene, log)``.

    The scene is initialised from ``dataset.points`` unless one is given.
    ``callback(iteration, scene)`` runs after every iteration when provided.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    if scene is None:
        if dataset.points is None:
            raise ValueError("dataset has no initial points and no scene was given")
        scene = init_scene(dataset.points, cfg)
        scene.duration_seconds = dataset.duration_seconds
    scene.tau = cfg.tau
    log = TrainLog()
    if cfg.iterations == 0:
        return scene, log
    extent = camera_extent(dataset.cameras)
    state = GradAccum.for_scene(scene)
    probe_cam, probe_gt, probe_t = dataset.sample(0)
    start = time.perf_counter()
    batch = min(cfg.batch_size, len(dataset))
    for it in range(1, cfg.iterations + 1):
        picks = rng.choice(len(dataset), size=batch, replace=False)
        views = []
        for p in picks:
            cam, img, t = dataset.sample(p)
            views.append((cam, t, img))
        grads = batch_gradients(scene, views, cfg)
        if not math.isfinite(grads.loss):
            raise NumericAbort(f"non-finite loss at iteration {it}", snapshot=scene.copy())
        for pool in POOLS:
            state.grad_sum[pool] += grads.screen_norms[pool]
            state.grad_count[pool] += grads.visible[pool]
        optimizer_step(state, scene, grads, cfg, _position_lr(cfg, it, extent))

        conv = 0
        if it >= cfg.warmup_iters and it % cfg.densify_interval == 0:
            if it <= cfg.densify_stop_iter:
                rep = densify_and_prune(scene, state, cfg, it, rng, extent)
                log.events.append((it, "densify", rep))
            crep = sweep_convert_tracked(scene, state)
            conv = crep.count
            log.events.append((it, "convert", crep))
            state.check_aligned(scene)

        probe = float("nan")
        if cfg.probe_interval and (it % cfg.probe_interval == 0 or it == cfg.iterations):
            probe = psnr(rasterize(scene, probe_cam, probe_t, cfg.background).rgb, probe_gt)
        log.record(it, grads.loss, probe, scene, conv, time.perf_counter() - start)
        if callback is not None:
            callback(it, scene)
    log.skipped_grads = state.skipped
    log.state = state
    return scene, log
