"""Command-line entry point: ``hybridgs <command> ...``.

Exit status is 0 on success, 2 on invalid input and 3 when training
diverges.
"""
import argparse
import contextlib
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .ablation import run_ablation, write_rows
from .benchmark import make_benchmark
from .dataio import SynthSpec, generate_synthetic, load_checkpoint, load_dataset, save_checkpoint, save_dataset
from .errors import FormatError, NumericAbort
from .imageio import write_float_planar, write_ppm
from .metrics import MetricReport
from .raster import density_map, rasterize
from .scene import temporal_scale_histogram
from .train import TrainConfig, train

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3


class UsageError(ValueError):
    pass


def read_toml(path):
    with open(path, "rb") as f:
        return tomllib.load(f)


def load_config(path):
    data = read_toml(path)
    # accept either a flat file or one with a [train] table
    return TrainConfig.from_dict(data.get("train", data))


def synth_spec(values):
    known = {f.name for f in fields(SynthSpec)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"unknown synth keys: {', '.join(sorted(unknown))}")
    if "background" in values:
        values = dict(values, background=tuple(values["background"]))
    return SynthSpec(**values)


@contextlib.contextmanager
def output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", newline="") as f:
            yield f


def camera_by_id(data_dir, camera_id):
    full, _ = load_dataset(data_dir)
    if camera_id not in full.camera_ids:
        raise UsageError(f"camera {camera_id} not in {data_dir} (have {full.camera_ids})")
    return full.cameras[full.camera_ids.index(camera_id)]


def check_time(t):
    if not 0.0 <= t <= 1.0:
        raise UsageError("--time must lie in [0, 1]")
    return t


# ---------------------------------------------------------------- commands

def cmd_train(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    train_set, _ = load_dataset(args.data, args.held_out)
    scene, log = train(train_set, cfg)
    save_checkpoint(scene, args.out, log.state.state_arrays() if log.state is not None else None)
    if args.log:
        log.to_csv(args.log)
    print(f"trained {cfg.iterations} iterations: {len(scene.dynamics)} 4D, {len(scene.statics)} 3D -> {args.out}")


def cmd_render(args):
    scene, _ = load_checkpoint(args.ckpt)
    cam = camera_by_id(args.data, args.camera)
    bg = tuple(args.background) if args.background else (0.0, 0.0, 0.0)
    rgb = rasterize(scene, cam, check_time(args.time), bg).rgb
    if Path(args.out).suffix.lower() == ".ppm":
        write_ppm(args.out, rgb)
    else:
        write_float_planar(args.out, rgb)


def cmd_eval(args):
    scene, _ = load_checkpoint(args.ckpt)
    _, test = load_dataset(args.data, args.held_out)
    report = MetricReport()
    cam, frames = test.cameras[0], test.frames[0]
    for i, t in enumerate(test.timestamps):
        report.add(rasterize(scene, cam, float(t)).rgb, frames[i], f"{i:05d}")
    with output(args.out) as f:
        f.write(report.csv_text())


def cmd_classify_stats(args):
    scene, _ = load_checkpoint(args.ckpt)
    hist = temporal_scale_histogram(scene, args.bins, args.max)
    with output(args.out) as f:
        f.write("bin_lo,bin_hi,count\n")
        for lo, hi, c in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
            f.write(f"{lo:.6g},{hi:.6g},{c}\n")


def cmd_density_map(args):
    scene, _ = load_checkpoint(args.ckpt)
    cam = camera_by_id(args.data, args.camera)
    counts = density_map(scene, cam, check_time(args.time), dynamics_only=args.dynamics_only)
    with output(args.out) as f:
        np.savetxt(f, counts, fmt="%d", delimiter=",")


def cmd_synth(args):
    spec = synth_spec(read_toml(args.spec).get("synth", {})) if args.spec else SynthSpec()
    ds, gt = generate_synthetic(spec, args.seed)
    save_dataset(ds, args.out)
    save_checkpoint(gt, Path(args.out) / "ground_truth.ckpt")
    print(f"wrote {len(ds.cameras)} cameras x {ds.n_frames} frames to {args.out}")


def cmd_ablate(args):
    matrix = read_toml(args.matrix)
    variants = matrix.get("variant", [])
    if not variants:
        raise UsageError("matrix file has no [[variant]] entries")
    data = matrix.get("data", {})
    if "path" in data:
        train_set, test_set = load_dataset(data["path"], int(data.get("held_out", 0)))
    else:
        synth = dict(matrix.get("synth", {}))
        seed = int(synth.pop("seed", 0))
        bench = make_benchmark(synth_spec(synth), seed, int(data.get("held_out", 0)))
        train_set, test_set = bench.train, bench.test
    base = TrainConfig.from_dict(matrix["base"]) if "base" in matrix else None
    rows = run_ablation(variants, train_set, test_set, base)
    if args.ckpt_dir:
        Path(args.ckpt_dir).mkdir(parents=True, exist_ok=True)
        for r in rows:
            if r.scene is not None:
                save_checkpoint(r.scene, Path(args.ckpt_dir) / f"{r.variant}.ckpt")
    with output(args.out) as f:
        write_rows(rows, f)


def build_parser():
    p = argparse.ArgumentParser(prog="hybridgs", description="Hybrid 3D/4D Gaussian splatting on the CPU.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="optimize a scene on a dataset directory")
    s.add_argument("--config", help="TOML file of training options")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint to write")
    s.add_argument("--held-out", type=int, default=None, help="camera id to leave out of training")
    s.add_argument("--log", help="write the per-iteration log as CSV")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("render", help="render one view of a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True, help="dataset directory holding the camera calibration")
    s.add_argument("--camera", type=int, required=True)
    s.add_argument("--time", type=float, required=True, help="normalized time in [0, 1]")
    s.add_argument("--out", required=True, help=".ppm for 8-bit sRGB, anything else for float32 planar")
    s.add_argument("--background", type=float, nargs=3)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("eval", help="PSNR/SSIM on a held-out camera")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--held-out", type=int, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("classify-stats", help="histogram of temporal scales of the 4D pool")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--bins", type=int, required=True)
    s.add_argument("--max", type=float, required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_classify_stats)

    s = sub.add_parser("density-map", help="per-pixel count of overlapping Gaussians")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True, help="dataset directory holding the camera calibration")
    s.add_argument("--camera", type=int, required=True)
    s.add_argument("--time", type=float, required=True)
    s.add_argument("--dynamics-only", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_density_map)

    s = sub.add_parser("synth", help="generate a synthetic dataset directory")
    s.add_argument("--spec", help="TOML file with a [synth] table")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ablate", help="train a matrix of variants and tabulate them")
    s.add_argument("--matrix", required=True)
    s.add_argument("--out")
    s.add_argument("--ckpt-dir", help="also save each trained variant here")
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except NumericAbort as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FormatError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
