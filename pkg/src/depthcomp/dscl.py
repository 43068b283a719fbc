"""Scale-decomposed depth composition and the optimal-scale oracle.

Absolute depth is predicted as the product of a bounded relative depth
(sigmoid output in (0, 1]) and a positive region-wise scale field,
broadcast over a uniform rectangular tiling. For a fixed prediction and
a sparse target, the scale minimizing the masked L2 loss has the closed
form alpha* = sum(target * pred) / sum(pred^2), which never increases
the loss; with one scale per pixel the factorization is unidentifiable
(any split of the product gives the same loss), which is the failure
mode that motivates coarse scale grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CodecError, ParameterError, ShapeError, SupportError
from .grid import DenseGrid, FeatureMap, SparseDepthMap, _format_float

__all__ = [
    "ScaleField",
    "to_relative",
    "scale_head",
    "broadcast_scale",
    "compose_depth",
    "optimal_scale",
    "optimal_scale_field",
    "theorem1_check",
    "scale_field_to_csv",
    "scale_field_from_csv",
]

RELATIVE_DEPTH_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ScaleField:
    """Positive per-region scales on a rows x cols uniform tiling."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[0] < 1 or vals.shape[1] < 1:
            raise ShapeError(f"scale field needs a non-empty (rows, cols) array, got {vals.shape}")
        if not np.isfinite(vals).all() or (vals <= 0).any():
            raise ParameterError("scale values must be finite and strictly positive")
        object.__setattr__(self, "values", np.ascontiguousarray(vals))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def n_regions(self) -> int:
        return self.values.size

    @classmethod
    def uniform(cls, value: float, rows: int = 1, cols: int = 1) -> "ScaleField":
        return cls(np.full((rows, cols), float(value)))


def to_relative(latent) -> DenseGrid:
    """Sigmoid squash of a latent grid into (0, 1] relative depth.

    Values below 1e-12 are flushed up to 1e-12 so downstream products
    stay strictly positive.
    """
    data = latent.data if isinstance(latent, DenseGrid) else np.asarray(latent, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, np.newaxis]
    if data.ndim != 3 or data.shape[2] != 1:
        raise ShapeError(f"latent must be (H, W) or (H, W, 1), got shape {data.shape}")
    if not np.isfinite(data).all():
        raise ShapeError("latent contains non-finite values")
    # Stable two-branch sigmoid: never exponentiates a large positive.
    out = np.empty_like(data)
    pos = data >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-data[pos]))
    expz = np.exp(data[~pos])
    out[~pos] = expz / (1.0 + expz)
    return DenseGrid(np.maximum(out, RELATIVE_DEPTH_FLOOR))


def _pool_bins(extent: int, cells: int):
    # Adaptive average pooling bins: cell i covers
    # [floor(i*extent/cells), ceil((i+1)*extent/cells)). Exact blocks when
    # cells divides extent.
    starts = (np.arange(cells) * extent) // cells
    ends = -((np.arange(1, cells + 1) * -extent) // cells)
    return starts, ends


def scale_head(feature, rows: int, cols: int, readout) -> ScaleField:
    """Adaptive average pooling to a rows x cols grid, then a linear
    readout and exp to guarantee positive scales.

    readout is the fixed length-C functional applied to each pooled
    channel vector.
    """
    data = feature.data if isinstance(feature, DenseGrid) else np.asarray(feature, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, np.newaxis]
    if data.ndim != 3:
        raise ShapeError(f"feature must be (H, W, C), got shape {data.shape}")
    height, width, channels = data.shape
    if not (isinstance(rows, (int, np.integer)) and isinstance(cols, (int, np.integer))):
        raise ParameterError(f"rows/cols must be integers, got {rows!r}, {cols!r}")
    if rows < 1 or cols < 1:
        raise ParameterError(f"region grid must be at least 1x1, got {rows}x{cols}")
    if rows > height or cols > width:
        raise ShapeError(
            f"region grid {rows}x{cols} exceeds feature extent {height}x{width}"
        )
    w = np.asarray(readout, dtype=np.float64).reshape(-1)
    if w.shape[0] != channels:
        raise ShapeError(f"readout length {w.shape[0]} does not match {channels} channels")
    row_starts, row_ends = _pool_bins(height, rows)
    col_starts, col_ends = _pool_bins(width, cols)
    pooled = np.empty((rows, cols, channels))
    for i in range(rows):
        for j in range(cols):
            block = data[row_starts[i]:row_ends[i], col_starts[j]:col_ends[j]]
            pooled[i, j] = block.mean(axis=(0, 1))
    return ScaleField(np.exp(pooled @ w))


def broadcast_scale(field: ScaleField, height: int, width: int) -> np.ndarray:
    """Per-pixel (H, W) scale array from a region field whose tiling must
    divide the target extent evenly."""
    if height % field.rows or width % field.cols:
        raise ShapeError(
            f"region grid {field.rows}x{field.cols} does not divide map {height}x{width}"
        )
    return np.repeat(
        np.repeat(field.values, height // field.rows, axis=0),
        width // field.cols,
        axis=1,
    )


def compose_depth(relative, field: ScaleField) -> DenseGrid:
    """Absolute depth = region scale times relative depth, per pixel."""
    data = relative.data if isinstance(relative, DenseGrid) else np.asarray(relative, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, np.newaxis]
    if data.ndim != 3 or data.shape[2] != 1:
        raise ShapeError(f"relative depth must be single-channel, got shape {data.shape}")
    plane = data[:, :, 0]
    if not np.isfinite(plane).all() or (plane <= 0).any() or (plane > 1).any():
        raise ParameterError("relative depth must lie in (0, 1]")
    scales = broadcast_scale(field, plane.shape[0], plane.shape[1])
    return DenseGrid(scales * plane)


def _depth_plane(prediction) -> np.ndarray:
    if isinstance(prediction, SparseDepthMap):
        return prediction.depth
    data = prediction.data if isinstance(prediction, DenseGrid) else np.asarray(prediction, dtype=np.float64)
    if data.ndim == 3:
        if data.shape[2] != 1:
            raise ShapeError(f"prediction must be single-channel, got shape {data.shape}")
        data = data[:, :, 0]
    if data.ndim != 2:
        raise ShapeError(f"prediction must be (H, W), got shape {data.shape}")
    return data


def optimal_scale(prediction, target: SparseDepthMap, region=None) -> float:
    """Closed-form scale minimizing sum((target - alpha*pred)^2) over the
    valid target pixels (optionally restricted to a boolean region mask):
    alpha* = sum(target*pred) / sum(pred^2).

    Raises when the support is empty or the prediction vanishes on it
    (the degenerate case the closed form excludes).
    """
    pred = _depth_plane(prediction)
    if pred.shape != target.depth.shape:
        raise ShapeError(
            f"prediction shape {pred.shape} does not match target {target.depth.shape}"
        )
    support = target.valid
    if region is not None:
        region = np.asarray(region)
        if region.shape != support.shape:
            raise ShapeError(f"region mask shape {region.shape} does not match {support.shape}")
        support = support & region.astype(bool)
    if not support.any():
        raise SupportError("optimal scale needs at least one valid target pixel")
    pred_sel = pred[support]
    target_sel = target.depth[support]
    denom = float(np.sum(pred_sel * pred_sel))
    if denom == 0.0:
        raise SupportError("prediction is identically zero on the support")
    return float(np.sum(target_sel * pred_sel)) / denom


def optimal_scale_field(prediction, target: SparseDepthMap, rows: int, cols: int,
                        default: float | None = None) -> ScaleField:
    """Per-region closed-form scales on a uniform tiling.

    Regions with no valid pixel (or an all-zero prediction) take
    `default` when given, else raise. Non-positive region solutions also
    fall back to `default`: a ScaleField must stay positive.
    """
    pred = _depth_plane(prediction)
    height, width = pred.shape
    if height % rows or width % cols:
        raise ShapeError(f"region grid {rows}x{cols} does not divide map {height}x{width}")
    block_h = height // rows
    block_w = width // cols
    values = np.empty((rows, cols))
    for i in range(rows):
        for j in range(cols):
            region = np.zeros((height, width), dtype=bool)
            region[i * block_h:(i + 1) * block_h, j * block_w:(j + 1) * block_w] = True
            try:
                alpha = optimal_scale(prediction, target, region=region)
            except SupportError:
                alpha = None
            if alpha is None or alpha <= 0:
                if default is None:
                    raise SupportError(
                        f"region ({i}, {j}) has no usable support and no default scale"
                    )
                alpha = float(default)
            values[i, j] = alpha
    return ScaleField(values)


def theorem1_check(prediction, target: SparseDepthMap, region=None):
    """Masked L2 loss before and after the closed-form rescale.

    Returns (loss_before, loss_after, alpha_star); least-squares
    optimality guarantees loss_after <= loss_before, with equality at
    alpha* = 1 (in particular whenever prediction already matches the
    target on the support).
    """
    alpha = optimal_scale(prediction, target, region=region)
    pred = _depth_plane(prediction)
    support = target.valid
    if region is not None:
        support = support & np.asarray(region).astype(bool)
    pred_sel = pred[support]
    target_sel = target.depth[support]
    before = float(np.sum((target_sel - pred_sel) ** 2))
    after = float(np.sum((target_sel - alpha * pred_sel) ** 2))
    return before, after, alpha


def scale_field_to_csv(field: ScaleField) -> str:
    """Serialize as a `rows,cols` header line plus one CSV line per row."""
    lines = [f"{field.rows},{field.cols}"]
    for row in field.values:
        lines.append(",".join(_format_float(v) for v in row))
    return "\n".join(lines) + "\n"


def scale_field_from_csv(text: str) -> ScaleField:
    """Inverse of scale_field_to_csv."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise CodecError("empty scale-field CSV")
    header = lines[0].split(",")
    if len(header) != 2:
        raise CodecError(f"scale-field header needs rows,cols, got {lines[0]!r}")
    try:
        rows, cols = (int(x) for x in header)
    except ValueError as exc:
        raise CodecError(f"non-integer scale-field header {lines[0]!r}") from exc
    if len(lines) - 1 != rows:
        raise CodecError(f"expected {rows} scale rows, got {len(lines) - 1}")
    table = []
    for ln in lines[1:]:
        cells = ln.split(",")
        if len(cells) != cols:
            raise CodecError(f"expected {cols} scale cells per row, got {len(cells)}")
        try:
            table.append([float(c) for c in cells])
        except ValueError as exc:
            raise CodecError(f"non-numeric scale cell in {ln!r}") from exc
    return ScaleField(np.asarray(table))
