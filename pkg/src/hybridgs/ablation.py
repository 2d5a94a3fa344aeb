"""Train several configuration variants on one dataset and tabulate the results."""
import csv
import math
import time
from dataclasses import dataclass, field

from .benchmark import benchmark_config, evaluate
from .errors import NumericAbort
from .train import TrainConfig, train

ALL_4D = "all-4D"
COLUMNS = ("variant", "psnr", "ssim", "n_4d", "n_3d", "wall_s", "status")


@dataclass
class AblationRow:
    variant: str
    psnr: float = float("nan")
    ssim: float = float("nan")
    n_4d: int = 0
    n_3d: int = 0
    wall_s: float = 0.0
    status: str = "ok"
    scene: object = field(default=None, repr=False)
    log: object = field(default=None, repr=False)

    @property
    def total(self):
        return self.n_4d + self.n_3d

    @property
    def ok(self):
        return self.status == "ok"


def variant_config(entry, base=None):
    """Build the TrainConfig of one matrix entry.

    ``entry`` is a mapping with a ``name`` and any TrainConfig overrides.
    ``mode = "all-4D"`` (or the name ``all-4D``) turns conversion off by
    setting an infinite threshold, which is the 4D-only baseline.
    """
    entry = dict(entry)
    name = entry.pop("name", None)
    mode = entry.pop("mode", None)
    if name is None:
        raise ValueError("every variant needs a name")
    values = (base or benchmark_config()).to_dict()
    values.update(entry)
    if mode == ALL_4D or (mode is None and name == ALL_4D):
        values["tau"] = math.inf
    elif mode not in (None, "hybrid"):
        raise ValueError(f"unknown variant mode {mode!r}")
    return name, TrainConfig.from_dict(values)


def run_variant(name, cfg, train_set, test_set, scene=None):
    start = time.perf_counter()
    try:
        trained, log = train(train_set, cfg, scene=None if scene is None else scene.copy())
        report = evaluate(trained, test_set, cfg.background)
    except (NumericAbort, ValueError, FloatingPointError) as exc:
        return AblationRow(name, wall_s=time.perf_counter() - start, status=f"failed: {exc}")
    return AblationRow(name, report.mean_psnr, report.mean_ssim, len(trained.dynamics), len(trained.statics),
                       time.perf_counter() - start, scene=trained, log=log)


def run_ablation(matrix, train_set, test_set, base=None):
    """Train every variant of ``matrix`` on ``train_set``; returns one row each.

    Configs are validated up front so a typo fails before hours of training.
    A variant that aborts at run time becomes a failed row.
    """
    configs = [variant_config(entry, base) for entry in matrix]
    names = [n for n, _ in configs]
    if len(set(names)) != len(names):
        raise ValueError("variant names must be unique")
    return [run_variant(name, cfg, train_set, test_set) for name, cfg in configs]


def write_rows(rows, fh):
    w = csv.writer(fh)
    w.writerow(COLUMNS)
    for r in rows:
        w.writerow([r.variant, f"{r.psnr:.4f}", f"{r.ssim:.5f}", r.n_4d, r.n_3d, f"{r.wall_s:.1f}", r.status])
