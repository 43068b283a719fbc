"""Synthetic experiment harness.

Provides seeded scene generation, sparse sampling at a requested
fraction or point count, a toy optimization experiment comparing direct
absolute-depth regression against the scale-decomposed parameterization,
the attention complexity benchmark, and the dilation/interpolation
ablation. Everything is a pure function of (inputs, seed).

The toy predictor is a parameter per pixel, not a network: it isolates
the decomposition itself (can the optimizer exploit a closed-form scale
correction?) from architecture effects. Both modes start from the same
initial depth (40 m everywhere), use the same backtracking gradient
descent on the same objective, and differ only in parameterization:

* direct: depth = 80 * sigmoid(z) per pixel.
* dscl: depth = exp(s_region) * sigmoid(z) per pixel, and after every
  descent step the per-region scales may be replaced by their
  closed-form least-squares optimum (adopted when the full objective
  does not increase; the data term provably never increases).
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .attention import AttentionParams, attention_forward
from .densify import DilationKernel, dilate, interpolate, parse_kernel_spec
from .errors import OptimizationError, ParameterError, ShapeError
from .geometry import CameraIntrinsics, RigidTransform
from .grid import DenseGrid, FeatureMap, SparseDepthMap
from .losses import forward_diff, second_derivative_l1, second_derivative_l1_grad
from .metrics import EvalResult, evaluate
from .seeds import STREAM_BENCH, STREAM_SAMPLE, STREAM_SCENE, substream

__all__ = [
    "SceneSpec",
    "Scene",
    "TrainConfig",
    "CurvePoint",
    "TrainResult",
    "BenchRow",
    "BenchResult",
    "AblationRow",
    "DIRECT_DEPTH_CAP",
    "gen_scene",
    "sample_sparse",
    "toy_objective",
    "train_toy",
    "bench_attention",
    "dilation_ablation",
]

LAYOUTS = ("planes", "slanted-ramp", "boxes")
MAX_SCENE_DEPTH = 80.0

# Absolute-depth cap of the direct parameterization: depth = cap * sigmoid.
DIRECT_DEPTH_CAP = 80.0

_MAX_BACKTRACKS = 60
_DATA_TERM_SLACK = 1e-9


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    layout: str = "planes"
    depth_range: tuple = (4.0, 60.0)
    intrinsics: Optional[CameraIntrinsics] = None
    seed: int = 0

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ParameterError(f"scene needs at least 8x8 pixels, got {self.height}x{self.width}")
        if self.layout not in LAYOUTS:
            raise ParameterError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        lo, hi = self.depth_range
        if not (0.0 < lo < hi <= MAX_SCENE_DEPTH):
            raise ParameterError(
                f"depth_range must satisfy 0 < min < max <= {MAX_SCENE_DEPTH}, got {self.depth_range}"
            )

    def resolved_intrinsics(self) -> CameraIntrinsics:
        if self.intrinsics is not None:
            return self.intrinsics
        focal = 1.2 * max(self.height, self.width)
        return CameraIntrinsics(fx=focal, fy=focal,
                                cx=(self.width - 1) / 2.0, cy=(self.height - 1) / 2.0)


@dataclass(frozen=True, eq=False)
class Scene:
    """One rendered frame pair: image, dense ground-truth depth, the
    camera, and a small rigid motion to a second viewpoint."""

    image: FeatureMap
    depth: DenseGrid
    intrinsics: CameraIntrinsics
    motion: RigidTransform
    spec: SceneSpec


def _unit_vector(rng) -> np.ndarray:
    while True:
        v = rng.normal(size=3)
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            return v / norm


def _random_rect(rng, height, width):
    min_h = max(2, height // 8)
    min_w = max(2, width // 8)
    y0 = int(rng.integers(0, height - min_h))
    x0 = int(rng.integers(0, width - min_w))
    y1 = int(rng.integers(y0 + min_h, min(height, y0 + height // 2) + 1))
    x1 = int(rng.integers(x0 + min_w, min(width, x0 + width // 2) + 1))
    return y0, y1, x0, x1


def gen_scene(spec: SceneSpec) -> Scene:
    """Deterministic synthetic frame for the given spec.

    Depth lies inside spec.depth_range. The image combines a per-depth-
    band albedo with shading from the depth gradient plus mild noise, so
    photometric losses have structure to work with. The motion is small:
    translation up to 0.5 m, rotation up to 2 degrees.
    """
    rng = substream(STREAM_SCENE, spec.seed)
    height, width = spec.height, spec.width
    lo, hi = spec.depth_range
    mid = 0.5 * (lo + hi)

    vs, us = np.meshgrid(np.linspace(0.0, 1.0, height),
                         np.linspace(0.0, 1.0, width), indexing="ij")
    if spec.layout == "slanted-ramp":
        while True:
            gx, gy = rng.normal(size=2)
            if abs(gx) + abs(gy) > 1e-3:
                break
        ramp = gx * us + gy * vs
        span = ramp.max() - ramp.min()
        depth = lo + (hi - lo) * (ramp - ramp.min()) / span
    elif spec.layout == "planes":
        depth = np.full((height, width), float(rng.uniform(mid, hi)))
        for _ in range(int(rng.integers(4, 8))):
            y0, y1, x0, x1 = _random_rect(rng, height, width)
            plane_depth = float(rng.uniform(lo, hi))
            # Nearer surface wins, as it would under occlusion.
            depth[y0:y1, x0:x1] = np.minimum(depth[y0:y1, x0:x1], plane_depth)
    else:  # boxes: constant-depth blocks over a slanted background
        while True:
            gx, gy = rng.normal(size=2)
            if abs(gx) + abs(gy) > 1e-3:
                break
        ramp = gx * us + gy * vs
        span = ramp.max() - ramp.min()
        depth = mid + (hi - mid) * (ramp - ramp.min()) / span
        for _ in range(int(rng.integers(3, 7))):
            y0, y1, x0, x1 = _random_rect(rng, height, width)
            depth[y0:y1, x0:x1] = float(rng.uniform(lo, mid))
    depth = np.clip(depth, lo, hi)

    bands = np.clip(np.digitize(depth, np.linspace(lo, hi, 9)) - 1, 0, 7)
    palette = rng.uniform(0.2, 1.0, (8, 3))
    albedo = palette[bands]
    slope = np.abs(forward_diff(depth, 0)) + np.abs(forward_diff(depth, 1))
    shade = 1.0 / (1.0 + slope)
    image = albedo * shade[:, :, np.newaxis]
    image = np.clip(image + rng.normal(0.0, 0.01, image.shape), 0.0, 1.0)

    translation = _unit_vector(rng) * rng.uniform(0.05, 0.5)
    axis = _unit_vector(rng)
    angle = np.deg2rad(rng.uniform(0.1, 2.0))
    motion = RigidTransform.from_axis_angle(axis, angle, translation)
    return Scene(
        image=FeatureMap(image),
        depth=DenseGrid(depth),
        intrinsics=spec.resolved_intrinsics(),
        motion=motion,
        spec=spec,
    )


def sample_sparse(depth, fraction: float = None, count: int = None,
                  seed: int = 0) -> SparseDepthMap:
    """Uniform sampling without replacement of valid depth pixels.

    Exactly one of fraction/count selects the sample size; a fraction f
    keeps round(f * H * W) pixels (round half up). Sampled pixels carry
    the exact source depth.
    """
    plane = depth.data[:, :, 0] if isinstance(depth, DenseGrid) else np.asarray(depth, dtype=np.float64)
    if plane.ndim != 2:
        raise ShapeError(f"depth must be (H, W), got shape {plane.shape}")
    if not (np.isfinite(plane).all() and (plane > 0).all()):
        raise ParameterError("sampling needs strictly positive, finite depth everywhere")
    n_pixels = plane.size
    if (fraction is None) == (count is None):
        raise ParameterError("pass exactly one of fraction or count")
    if fraction is not None:
        if not (0.0 < fraction <= 1.0):
            raise ParameterError(f"fraction must lie in (0, 1], got {fraction!r}")
        n = int(np.floor(fraction * n_pixels + 0.5))
    else:
        n = int(count)
        if not (0 <= n <= n_pixels):
            raise ParameterError(f"count must lie in [0, {n_pixels}], got {count!r}")
    rng = substream(STREAM_SAMPLE, seed)
    chosen = rng.choice(n_pixels, size=n, replace=False)
    mask = np.zeros(n_pixels, dtype=bool)
    mask[chosen] = True
    mask = mask.reshape(plane.shape)
    return SparseDepthMap(depth=np.where(mask, plane, 0.0), valid=mask)


@dataclass(frozen=True)
class TrainConfig:
    mode: str
    scale_regions: tuple = (2, 2)
    steps: int = 500
    step_size: float = 1.0
    smoothness_weight: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("direct", "dscl"):
            raise ParameterError(f"mode must be 'direct' or 'dscl', got {self.mode!r}")
        rows, cols = self.scale_regions
        if rows < 1 or cols < 1:
            raise ParameterError(f"scale_regions must be >= 1x1, got {self.scale_regions}")
        if self.steps < 0:
            raise ParameterError(f"steps must be >= 0, got {self.steps}")
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ParameterError(f"step_size must be positive, got {self.step_size!r}")
        if not (np.isfinite(self.smoothness_weight) and self.smoothness_weight >= 0):
            raise ParameterError(
                f"smoothness_weight must be non-negative, got {self.smoothness_weight!r}"
            )


@dataclass(frozen=True)
class CurvePoint:
    step: int
    data_term: float
    smooth_term: float
    total: float
    step_size: float


@dataclass(frozen=True, eq=False)
class TrainResult:
    depth: DenseGrid
    curve: tuple
    metrics: EvalResult
    config: TrainConfig


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    expz = np.exp(z[~pos])
    out[~pos] = expz / (1.0 + expz)
    return out


def _toy_depth(latent, scale_latent, config, height, width):
    rel = _sigmoid(latent)
    if config.mode == "direct":
        return DIRECT_DEPTH_CAP * rel, rel, None
    rows, cols = config.scale_regions
    alpha = np.exp(scale_latent)
    alpha_pix = np.repeat(np.repeat(alpha, height // rows, axis=0),
                          width // cols, axis=1)
    return alpha_pix * rel, rel, alpha_pix


def toy_objective(latent, scale_latent, target: SparseDepthMap, config: TrainConfig):
    """Objective and analytic gradients of the toy experiment.

    value = mean squared error on the sparse support
          + smoothness_weight * mean |second difference of depth|.
    Both terms use means so one step size serves all grid sizes.

    Returns (value, parts, grads): parts is {'data', 'smooth'}, grads is
    {'latent': ..., 'scale_latent': ...} (scale gradient None in direct
    mode).
    """
    latent = np.asarray(latent, dtype=np.float64)
    height, width = target.depth.shape
    if latent.shape != (height, width):
        raise ShapeError(f"latent shape {latent.shape} does not match target {target.depth.shape}")
    if config.mode == "dscl":
        rows, cols = config.scale_regions
        if height % rows or width % cols:
            raise ShapeError(
                f"scale regions {rows}x{cols} do not divide the {height}x{width} grid"
            )
        scale_latent = np.asarray(scale_latent, dtype=np.float64)
        if scale_latent.shape != (rows, cols):
            raise ShapeError(
                f"scale latent shape {scale_latent.shape} does not match regions {rows}x{cols}"
            )
    # Extreme latents overflow to inf, which the caller's backtracking
    # treats as a rejected step; the numpy warning is just noise here.
    with np.errstate(over="ignore", invalid="ignore"):
        depth, rel, alpha_pix = _toy_depth(latent, scale_latent, config, height, width)

        n_valid = target.n_valid
        resid = np.where(target.valid, depth - target.depth, 0.0)
        if n_valid:
            data = float(np.sum(resid * resid)) / n_valid
            d_data = (2.0 / n_valid) * resid
        else:
            data = 0.0
            d_data = np.zeros_like(resid)
        n_pixels = height * width
        smooth = second_derivative_l1(depth) / n_pixels
        d_smooth = second_derivative_l1_grad(depth) / n_pixels
        value = data + config.smoothness_weight * smooth
        d_depth = d_data + config.smoothness_weight * d_smooth

        sig_prime = rel * (1.0 - rel)
        if config.mode == "direct":
            d_latent = d_depth * DIRECT_DEPTH_CAP * sig_prime
            grads = {"latent": d_latent, "scale_latent": None}
        else:
            rows, cols = config.scale_regions
            d_latent = d_depth * alpha_pix * sig_prime
            per_pixel = d_depth * rel * alpha_pix
            d_scale = per_pixel.reshape(rows, height // rows, cols, width // cols).sum(axis=(1, 3))
            grads = {"latent": d_latent, "scale_latent": d_scale}
    parts = {"data": data, "smooth": smooth}
    return value, parts, grads


def _refit_scale_latent(latent, scale_latent, target, config):
    """Closed-form per-region scale update: for each region, the least-
    squares alpha on the sparse support of that region. Regions without
    support keep their current scale. The summed data term can only
    decrease (per-region least-squares optimality)."""
    height, width = target.depth.shape
    rows, cols = config.scale_regions
    rel = _sigmoid(np.asarray(latent, dtype=np.float64))
    block_h = height // rows
    block_w = width // cols
    new_latent = np.array(scale_latent, dtype=np.float64, copy=True)
    for i in range(rows):
        for j in range(cols):
            sl_y = slice(i * block_h, (i + 1) * block_h)
            sl_x = slice(j * block_w, (j + 1) * block_w)
            support = target.valid[sl_y, sl_x]
            if not support.any():
                continue
            rel_sel = rel[sl_y, sl_x][support]
            target_sel = target.depth[sl_y, sl_x][support]
            denom = float(np.sum(rel_sel * rel_sel))
            if denom == 0.0:
                continue
            alpha = float(np.sum(target_sel * rel_sel)) / denom
            if alpha > 0:
                new_latent[i, j] = np.log(alpha)
    return new_latent


def train_toy(scene: Scene, sparse: SparseDepthMap, config: TrainConfig,
              init_latent=None, init_scale_latent=None) -> TrainResult:
    """Backtracking gradient descent on the toy objective.

    Every step proposes a gradient move at the current step size,
    halving the step on any objective increase (or non-finite value)
    until the move is non-increasing; the surviving step size persists.
    In dscl mode each accepted step is followed by a closed-form
    per-region scale refit, adopted when it does not increase the
    objective. The learning curve is therefore non-increasing by
    construction. Optimization state is initialized at 40 m everywhere
    in both modes unless explicit init latents are given.

    Returns the final dense depth, the per-step curve, and metrics
    against the scene's full ground-truth depth.
    """
    height, width = scene.depth.height, scene.depth.width
    if sparse.depth.shape != (height, width):
        raise ShapeError(
            f"sparse map {sparse.depth.shape} does not match scene {height}x{width}"
        )
    latent = (np.zeros((height, width)) if init_latent is None
              else np.array(init_latent, dtype=np.float64, copy=True))
    if config.mode == "dscl":
        rows, cols = config.scale_regions
        if height % rows or width % cols:
            raise ShapeError(
                f"scale regions {rows}x{cols} do not divide the {height}x{width} grid"
            )
        scale_latent = (np.full((rows, cols), np.log(DIRECT_DEPTH_CAP))
                        if init_scale_latent is None
                        else np.array(init_scale_latent, dtype=np.float64, copy=True))
    else:
        scale_latent = None

    value, parts, grads = toy_objective(latent, scale_latent, sparse, config)
    if not np.isfinite(value):
        raise OptimizationError(f"non-finite objective at step 0: {value!r}")
    step_size = config.step_size
    curve = [CurvePoint(0, parts["data"], parts["smooth"], value, step_size)]

    for step in range(1, config.steps + 1):
        accepted = False
        for _ in range(_MAX_BACKTRACKS):
            cand_latent = latent - step_size * grads["latent"]
            if config.mode == "dscl":
                cand_scale = scale_latent - step_size * grads["scale_latent"]
            else:
                cand_scale = None
            cand_value, cand_parts, cand_grads = toy_objective(
                cand_latent, cand_scale, sparse, config
            )
            if np.isfinite(cand_value) and cand_value <= value:
                latent, scale_latent = cand_latent, cand_scale
                value, parts, grads = cand_value, cand_parts, cand_grads
                accepted = True
                break
            step_size *= 0.5
        # A rejected step keeps the current iterate; the curve stays flat.

        if config.mode == "dscl" and accepted:
            refit = _refit_scale_latent(latent, scale_latent, sparse, config)
            refit_value, refit_parts, refit_grads = toy_objective(
                latent, refit, sparse, config
            )
            if refit_parts["data"] > parts["data"] + _DATA_TERM_SLACK:
                raise OptimizationError(
                    f"closed-form scale refit increased the data term at step {step}: "
                    f"{parts['data']!r} -> {refit_parts['data']!r}"
                )
            if np.isfinite(refit_value) and refit_value <= value:
                scale_latent = refit
                value, parts, grads = refit_value, refit_parts, refit_grads
        if not np.isfinite(value):
            raise OptimizationError(f"non-finite objective at step {step}: {value!r}")
        curve.append(CurvePoint(step, parts["data"], parts["smooth"], value, step_size))

    depth, _, _ = _toy_depth(latent, scale_latent, config, height, width)
    final = DenseGrid(depth)
    dense_gt = SparseDepthMap(depth=scene.depth.plane().copy(),
                              valid=np.ones((height, width), dtype=bool))
    return TrainResult(depth=final, curve=tuple(curve),
                       metrics=evaluate(final, dense_gt), config=config)


@dataclass(frozen=True)
class BenchRow:
    variant: str
    height: int
    width: int
    channels: int
    wall_ns: int
    flops: int


@dataclass(frozen=True, eq=False)
class BenchResult:
    rows: tuple
    flop_slopes: dict
    time_slopes: dict
    channels: int
    repetitions: int
    timed: bool


def _exact_flop_slope(variant, rows_for_variant, channels):
    # flop_estimate is C * N^k by construction; verify that identity on
    # every row in integer arithmetic and report k, which IS the log-log
    # slope, exactly, with no fitting noise.
    for k in (1, 2):
        if all(r.flops == channels * (r.height * r.width) ** k for r in rows_for_variant):
            return float(k)
    raise OptimizationError(f"flop accounting for {variant!r} fits no integer power law")


def bench_attention(sizes, channels: int = 8, repetitions: int = 5,
                    variants=("ca", "dsa", "fdsa"), seed: int = 0,
                    measure_time: bool = True) -> BenchResult:
    """Time the attention variants across grid sizes and fit log-log
    wall-time slopes; flop slopes come from the analytic accounting.

    Inputs are float32 (the forward paths preserve dtype) so the largest
    quadratic sizes stay affordable; correctness of the kernels is
    covered by the float64 oracle tests, not here. Wall times use the
    median of `repetitions` runs; with measure_time=False every wall_ns
    is 0 and time slopes are None, which reruns reproduce byte-for-byte.
    """
    sizes = [(int(h), int(w)) for h, w in sizes]
    if len(sizes) < 3:
        raise ParameterError(f"need at least 3 sizes, got {len(sizes)}")
    pixel_counts = [h * w for h, w in sizes]
    if max(pixel_counts) < 8 * min(pixel_counts):
        raise ParameterError("sizes must span at least 3 doublings of pixel count")
    if repetitions < 5:
        raise ParameterError(f"need at least 5 repetitions, got {repetitions}")
    for variant in variants:
        if variant not in ("ca", "dsa", "fdsa"):
            raise ParameterError(f"unknown attention variant {variant!r}")
    params = AttentionParams.random(channels, seed)

    # One tiny throwaway call per variant warms numpy dispatch paths so
    # the smallest measured size is not dominated by first-call cost.
    warm_rng = substream(STREAM_BENCH, seed, 0)
    warm = warm_rng.standard_normal((8, 8, channels), dtype=np.float32)
    for variant in variants:
        inputs = (warm,) if variant == "ca" else (warm, warm)
        attention_forward(variant, inputs, params, keep_weights=False)

    rows = []
    for height, width in sorted(sizes, key=lambda s: s[0] * s[1]):
        rng = substream(STREAM_BENCH, seed, height, width)
        sparse_feat = rng.standard_normal((height, width, channels), dtype=np.float32)
        dense_feat = rng.standard_normal((height, width, channels), dtype=np.float32)
        for variant in variants:
            if variant == "ca":
                inputs = (sparse_feat + dense_feat,)
            else:
                inputs = (sparse_feat, dense_feat)
            if measure_time:
                samples = []
                for _ in range(repetitions):
                    start = time.perf_counter_ns()
                    out = attention_forward(variant, inputs, params, keep_weights=False)
                    samples.append(time.perf_counter_ns() - start)
                wall_ns = int(np.median(samples))
            else:
                out = attention_forward(variant, inputs, params, keep_weights=False)
                wall_ns = 0
            rows.append(BenchRow(variant, height, width, channels,
                                 wall_ns, out.flop_estimate))

    flop_slopes = {}
    time_slopes = {}
    for variant in variants:
        mine = [r for r in rows if r.variant == variant]
        flop_slopes[variant] = _exact_flop_slope(variant, mine, channels)
        if measure_time:
            log_n = np.log([r.height * r.width for r in mine])
            log_t = np.log([max(r.wall_ns, 1) for r in mine])
            time_slopes[variant] = float(np.polyfit(log_n, log_t, 1)[0])
        else:
            time_slopes[variant] = None
    return BenchResult(rows=tuple(rows), flop_slopes=flop_slopes,
                       time_slopes=time_slopes, channels=channels,
                       repetitions=repetitions, timed=measure_time)


@dataclass(frozen=True)
class AblationRow:
    label: str
    density: float
    mae_mm: float


def dilation_ablation(scene, sparse: SparseDepthMap, kernels,
                      include_interpolation: bool = True):
    """Densify with each kernel (and optionally both interpolation
    methods) and report output density plus the MAE, in mm, of the
    filled pixels against ground truth.

    `scene` may be a Scene or a dense ground-truth depth grid. Filled
    pixels are those invalid before and valid after; with none, the
    error is 0.
    """
    gt = getattr(scene, "depth", scene)
    gt_plane = gt.data[:, :, 0] if isinstance(gt, DenseGrid) else np.asarray(gt, dtype=np.float64)
    if gt_plane.shape != sparse.depth.shape:
        raise ShapeError(
            f"ground truth {gt_plane.shape} does not match sparse map {sparse.depth.shape}"
        )

    def fill_error(out: SparseDepthMap) -> float:
        filled = out.valid & ~sparse.valid
        if not filled.any():
            return 0.0
        return float(np.abs(out.depth[filled] - gt_plane[filled]).mean() * 1000.0)

    table = []
    for kernel in kernels:
        if not isinstance(kernel, DilationKernel):
            kernel = parse_kernel_spec(kernel)
        out = dilate(sparse, kernel)
        table.append(AblationRow(kernel.spec(), out.density, fill_error(out)))
    if include_interpolation:
        for method in ("nearest", "bilinear"):
            out = interpolate(sparse, method)
            table.append(AblationRow(method, out.density, fill_error(out)))
    return table
