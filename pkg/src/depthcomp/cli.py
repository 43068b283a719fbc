"""Command-line interface.

One executable with subcommands: densify (PNG to PNG), eval (metrics
row to stdout), bench (attention scaling CSV), train-toy (the toy
optimization experiment). Every subcommand prints its full effective
configuration as a first line prefixed `#`, and writes the same line
atop each CSV it produces, so any output file is reproducible from its
own header. Diagnostics go to stderr; data to stdout or files. Exit
code 0 means success.

The default output directory for bench/train-toy artifacts is taken
from the DEPTHCOMP_OUT_DIR environment variable when set, else the
working directory.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .densify import density, dilate, interpolate, parse_kernel_spec
from .errors import DepthcompError, ParameterError
from .grid import SparseDepthMap, _format_float, read_kitti_png, write_kitti_png
from .metrics import METRICS_CSV_HEADER, evaluate
from .synth import SceneSpec, TrainConfig, bench_attention, gen_scene, sample_sparse, train_toy

OUT_DIR_ENV = "DEPTHCOMP_OUT_DIR"

BENCH_CSV_HEADER = "variant,H,W,C,wall_ns,flop_estimate"
CURVE_CSV_HEADER = "step,data_term,smooth_term,total,step_size"

_PNG_MAX_DEPTH = 65535 / 256.0


def _default_out_dir() -> str:
    return os.environ.get(OUT_DIR_ENV) or "."


def _echo_line(subcommand: str, pairs) -> str:
    body = " ".join(f"{key}={value}" for key, value in pairs)
    return f"# depthcomp {subcommand} {body}"


def _parse_size(text: str):
    try:
        h, w = text.lower().split("x")
        h, w = int(h), int(w)
    except ValueError as exc:
        raise ParameterError(f"sizes look like 128x64, got {text!r}") from exc
    if h < 1 or w < 1:
        raise ParameterError(f"size must be positive, got {text!r}")
    return h, w


def _write_text(path: str, text: str):
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(text)


def cmd_densify(args) -> int:
    with open(args.input, "rb") as f:
        sparse = read_kitti_png(f.read())
    if args.kernel:
        mode_pair = ("kernel", args.kernel)
        out = dilate(sparse, parse_kernel_spec(args.kernel))
    else:
        mode_pair = ("interp", args.interp)
        out = interpolate(sparse, args.interp)
    echo = _echo_line("densify", [("input", args.input), ("output", args.output), mode_pair])
    with open(args.output, "wb") as f:
        f.write(write_kitti_png(out))
    print(echo)
    print("density_before,density_after")
    print(f"{_format_float(density(sparse))},{_format_float(density(out))}")
    return 0


def cmd_eval(args) -> int:
    with open(args.pred, "rb") as f:
        pred = read_kitti_png(f.read())
    with open(args.gt, "rb") as f:
        gt = read_kitti_png(f.read())
    # The prediction PNG is read as a sparse map; evaluation treats its
    # decoded depth plane as the dense prediction.
    result = evaluate(pred.depth, gt)
    print(_echo_line("eval", [("pred", args.pred), ("gt", args.gt)]))
    print(METRICS_CSV_HEADER)
    print(result.to_csv_row())
    return 0


def cmd_bench(args) -> int:
    sizes = [_parse_size(tok) for tok in args.sizes.split(",") if tok]
    if len(sizes) < 3:
        raise ParameterError(f"bench needs at least 3 sizes, got {len(sizes)}")
    variants = tuple(tok for tok in args.variants.split(",") if tok)
    out_path = args.out or os.path.join(_default_out_dir(), f"bench_{args.seed}.csv")
    echo = _echo_line("bench", [
        ("sizes", args.sizes),
        ("variants", args.variants),
        ("channels", args.channels),
        ("reps", args.reps),
        ("seed", args.seed),
        ("timing", "off" if args.no_timing else "on"),
        ("out", out_path),
    ])
    result = bench_attention(sizes, channels=args.channels, repetitions=args.reps,
                             variants=variants, seed=args.seed,
                             measure_time=not args.no_timing)
    lines = [echo, BENCH_CSV_HEADER]
    for row in result.rows:
        lines.append(f"{row.variant},{row.height},{row.width},{row.channels},"
                     f"{row.wall_ns},{row.flops}")
    lines.append("# slopes: variant,flop_slope,time_slope")
    slope_lines = []
    for variant in variants:
        time_slope = result.time_slopes[variant]
        time_cell = "na" if time_slope is None else _format_float(time_slope)
        slope_lines.append(
            f"# slope,{variant},{_format_float(result.flop_slopes[variant])},{time_cell}"
        )
    lines += slope_lines
    _write_text(out_path, "\n".join(lines) + "\n")
    print(echo)
    for line in slope_lines:
        print(line)
    return 0


def cmd_train_toy(args) -> int:
    height, width = _parse_size(args.size)
    rows, cols = _parse_size(args.regions)
    out_dir = args.out or _default_out_dir()
    spec = SceneSpec(height=height, width=width, layout=args.layout, seed=args.seed)
    config = TrainConfig(mode=args.mode, scale_regions=(rows, cols), steps=args.steps,
                         step_size=args.step_size, smoothness_weight=args.smoothness,
                         seed=args.seed)
    echo = _echo_line("train-toy", [
        ("mode", args.mode),
        ("regions", args.regions),
        ("steps", args.steps),
        ("step_size", _format_float(args.step_size)),
        ("smoothness", _format_float(args.smoothness)),
        ("layout", args.layout),
        ("size", args.size),
        ("sparsity", _format_float(args.sparsity)),
        ("seed", args.seed),
        ("out", out_dir),
    ])
    scene = gen_scene(spec)
    sparse = sample_sparse(scene.depth, fraction=args.sparsity, seed=args.seed)
    result = train_toy(scene, sparse, config)

    os.makedirs(out_dir, exist_ok=True)
    tag = f"train_toy_{args.seed}"
    curve_lines = [echo, CURVE_CSV_HEADER]
    for point in result.curve:
        curve_lines.append(
            f"{point.step},{_format_float(point.data_term)},{_format_float(point.smooth_term)},"
            f"{_format_float(point.total)},{_format_float(point.step_size)}"
        )
    _write_text(os.path.join(out_dir, f"{tag}.csv"), "\n".join(curve_lines) + "\n")

    metrics_lines = [echo, METRICS_CSV_HEADER, result.metrics.to_csv_row()]
    _write_text(os.path.join(out_dir, f"{tag}_metrics.csv"), "\n".join(metrics_lines) + "\n")

    depth_plane = result.depth.plane().copy()
    if depth_plane.max() > _PNG_MAX_DEPTH:
        print(f"note: clipping depth {depth_plane.max():.2f} m to the PNG range "
              f"for {tag}_depth.png", file=sys.stderr)
        depth_plane = np.minimum(depth_plane, _PNG_MAX_DEPTH)
    png = write_kitti_png(SparseDepthMap(depth=depth_plane,
                                         valid=np.ones(depth_plane.shape, dtype=bool)))
    with open(os.path.join(out_dir, f"{tag}_depth.png"), "wb") as f:
        f.write(png)

    print(echo)
    print(METRICS_CSV_HEADER)
    print(result.metrics.to_csv_row())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="depthcomp",
        description="Depth-completion kernels: densification, attention benchmarks, "
                    "toy scale-decomposition training, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    densify_p = sub.add_parser("densify", help="densify a sparse depth PNG")
    densify_p.add_argument("input", help="input 16-bit depth PNG")
    densify_p.add_argument("output", help="output PNG path")
    group = densify_p.add_mutually_exclusive_group(required=True)
    group.add_argument("--kernel", help="dilation kernel spec, e.g. square5 or cross3")
    group.add_argument("--interp", choices=("nearest", "bilinear"),
                       help="interpolate to a fully dense map instead of dilating")
    densify_p.set_defaults(func=cmd_densify)

    eval_p = sub.add_parser("eval", help="evaluate a prediction PNG against ground truth")
    eval_p.add_argument("pred", help="prediction depth PNG")
    eval_p.add_argument("gt", help="ground-truth depth PNG")
    eval_p.set_defaults(func=cmd_eval)

    bench_p = sub.add_parser("bench", help="attention complexity benchmark")
    bench_p.add_argument("--sizes", default="32x32,64x64,128x128,256x256",
                         help="comma-separated HxW grid sizes (at least 3)")
    bench_p.add_argument("--variants", default="dsa,fdsa",
                         help="comma-separated attention variants (ca,dsa,fdsa)")
    bench_p.add_argument("--channels", type=int, default=8)
    bench_p.add_argument("--reps", type=int, default=5,
                         help="repetitions per configuration (median reported)")
    bench_p.add_argument("--seed", type=int, default=0)
    bench_p.add_argument("--no-timing", action="store_true",
                         help="skip wall-clock timing for byte-reproducible output")
    bench_p.add_argument("--out", help="output CSV path (default bench_{seed}.csv "
                                       f"under ${OUT_DIR_ENV} or the working directory)")
    bench_p.set_defaults(func=cmd_bench)

    train_p = sub.add_parser("train-toy", help="toy scale-decomposition experiment")
    train_p.add_argument("--mode", required=True, choices=("direct", "dscl"))
    train_p.add_argument("--regions", default="2x2", help="scale region grid, e.g. 2x2")
    train_p.add_argument("--steps", type=int, default=500)
    train_p.add_argument("--step-size", type=float, default=1.0, dest="step_size")
    train_p.add_argument("--smoothness", type=float, default=1e-3)
    train_p.add_argument("--layout", default="planes",
                         choices=("planes", "slanted-ramp", "boxes"))
    train_p.add_argument("--size", default="128x128", help="scene size HxW")
    train_p.add_argument("--sparsity", type=float, default=0.05)
    train_p.add_argument("--seed", type=int, default=0)
    train_p.add_argument("--out", help=f"output directory (default ${OUT_DIR_ENV} "
                                       "or the working directory)")
    train_p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DepthcompError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
