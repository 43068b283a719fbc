"""Core array containers and file codecs.

Two containers are used throughout the package:

* DenseGrid: an (H, W, C) float64 array with every cell defined. Feature
  maps and dense depth maps are DenseGrids (depth uses C == 1).
* SparseDepthMap: an (H, W) float64 depth array plus a boolean validity
  mask. Invalid cells hold exactly 0.0 so the array alone round-trips
  through the 16-bit PNG convention used by the KITTI depth benchmark.

PNG codec convention (KITTI depth completion): 16-bit grayscale, metric
depth = raw / 256, raw == 0 marks an invalid pixel.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import CodecError, ParameterError, ShapeError

__all__ = [
    "DenseGrid",
    "FeatureMap",
    "SparseDepthMap",
    "read_kitti_png",
    "write_kitti_png",
    "read_csv_grid",
    "write_csv_grid",
    "downsample_mask",
]

PNG_DEPTH_SCALE = 256.0
PNG_MAX_RAW = 65535


def _format_float(x: float) -> str:
    # repr of a Python float is the shortest string that round-trips,
    # which keeps CSV files exact without fixed-width noise.
    return repr(float(x))


@dataclass(frozen=True, eq=False)
class DenseGrid:
    """Fully-defined (H, W, C) float64 grid.

    The constructor normalises layout: input arrays of shape (H, W) are
    promoted to (H, W, 1), everything is cast to C-contiguous float64,
    and non-finite cells are rejected.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise ShapeError(
                f"dense grid needs an (H, W) or (H, W, C) array, got shape {arr.shape}"
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ShapeError(f"dense grid axes must be non-empty, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeError("dense grid contains non-finite cells")
        object.__setattr__(self, "data", np.ascontiguousarray(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self, channel: int = 0) -> np.ndarray:
        """View of one channel as an (H, W) array."""
        return self.data[:, :, channel]


# Feature maps share the container; the alias keeps signatures readable.
FeatureMap = DenseGrid


@dataclass(frozen=True, eq=False)
class SparseDepthMap:
    """(H, W) metric depth with a validity mask.

    Invariants enforced on construction:
    * depth and valid share one (H, W) shape
    * valid cells are finite and strictly positive
    * invalid cells store exactly 0.0
    """

    depth: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        depth = np.asarray(self.depth, dtype=np.float64)
        if depth.ndim != 2 or depth.shape[0] < 1 or depth.shape[1] < 1:
            raise ShapeError(f"sparse depth needs a non-empty (H, W) array, got {depth.shape}")
        if self.valid is None:
            with np.errstate(invalid="ignore"):
                valid = np.isfinite(depth) & (depth > 0)
        else:
            valid = np.asarray(self.valid)
            if valid.shape != depth.shape:
                raise ShapeError(
                    f"valid mask shape {valid.shape} does not match depth shape {depth.shape}"
                )
            valid = valid.astype(bool)
        held = depth[valid]
        if held.size and not (np.isfinite(held).all() and (held > 0).all()):
            raise ShapeError("valid cells must hold finite, strictly positive depth")
        depth = np.where(valid, depth, 0.0)
        object.__setattr__(self, "depth", np.ascontiguousarray(depth))
        object.__setattr__(self, "valid", np.ascontiguousarray(valid))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    @property
    def density(self) -> float:
        return self.n_valid / self.valid.size


def write_kitti_png(depth_map: SparseDepthMap) -> bytes:
    """Encode a sparse depth map as 16-bit grayscale PNG bytes.

    raw = floor(depth * 256 + 0.5), i.e. round half up. Raises CodecError
    when a valid depth would exceed the 16-bit range (>= 65535.5 / 256).
    Valid depths that would round to raw 0 (below 1/512 m) are written as
    raw 1: dropping them would silently flip the pixel to invalid, while
    raw 1 stays within the codec's 1/256 m quantisation error.
    """
    depth = depth_map.depth
    valid = depth_map.valid
    raw = np.floor(depth * PNG_DEPTH_SCALE + 0.5)
    too_big = valid & (raw > PNG_MAX_RAW)
    if too_big.any():
        worst = float(depth[too_big].max())
        raise CodecError(
            f"depth {worst} m exceeds the 16-bit PNG range (max {PNG_MAX_RAW / PNG_DEPTH_SCALE} m)"
        )
    raw = np.where(valid, np.maximum(raw, 1.0), 0.0).astype(np.uint16)
    image = Image.fromarray(raw)
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def read_kitti_png(payload: bytes) -> SparseDepthMap:
    """Decode 16-bit grayscale PNG bytes into a sparse depth map.

    depth = raw / 256 and raw == 0 marks an invalid pixel. Rejects
    payloads that are not PNG or not 16-bit single channel.
    """
    try:
        image = Image.open(io.BytesIO(payload))
        image.load()
    except Exception as exc:
        raise CodecError(f"payload is not a decodable image: {exc}") from exc
    if image.format != "PNG":
        raise CodecError(f"expected a PNG payload, got {image.format}")
    if image.mode not in ("I;16", "I;16B", "I"):
        raise CodecError(f"expected 16-bit grayscale, got mode {image.mode}")
    raw = np.asarray(image, dtype=np.int64)
    if raw.ndim != 2:
        raise CodecError(f"expected a single-channel image, got shape {raw.shape}")
    if raw.min() < 0 or raw.max() > PNG_MAX_RAW:
        raise CodecError("raw values outside the 16-bit range")
    depth = raw.astype(np.float64) / PNG_DEPTH_SCALE
    return SparseDepthMap(depth=depth, valid=raw > 0)


def write_csv_grid(grid: DenseGrid) -> str:
    """Serialise a DenseGrid as plain CSV, one line per grid row with the
    cells flattened channel-minor. Floats are written with repr so the
    round trip is exact; multi-channel grids need the channel count back
    at read time.
    """
    flat = grid.data.reshape(grid.height, grid.width * grid.channels)
    lines = [",".join(_format_float(x) for x in row) for row in flat]
    return "\n".join(lines) + "\n"


def read_csv_grid(text: str, channels: int = 1) -> DenseGrid:
    """Inverse of write_csv_grid. `channels` must divide the cell count
    of every row (rows are channel-minor flattened)."""
    if channels < 1:
        raise CodecError(f"channels must be >= 1, got {channels}")
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise CodecError("empty CSV payload")
    rows = []
    row_cells = None
    for ln in lines:
        cells = ln.split(",")
        if row_cells is None:
            row_cells = len(cells)
            if row_cells % channels:
                raise CodecError(
                    f"{row_cells} cells per row is not divisible by {channels} channels"
                )
        elif len(cells) != row_cells:
            raise CodecError(
                f"ragged CSV: expected {row_cells} cells per row, got {len(cells)}"
            )
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise CodecError(f"non-numeric cell in row {ln!r}") from exc
    data = np.asarray(rows, dtype=np.float64)
    return DenseGrid(data.reshape(len(lines), row_cells // channels, channels))


def downsample_mask(valid: np.ndarray, factor: int) -> np.ndarray:
    """Block-reduce a boolean mask by `factor`: an output cell is True when
    any cell of its factor x factor block is True. Both mask dimensions
    must be divisible by factor.
    """
    valid = np.asarray(valid).astype(bool)
    if valid.ndim != 2:
        raise ShapeError(f"mask must be 2-D, got shape {valid.shape}")
    if factor < 1:
        raise ParameterError(f"downsample factor must be >= 1, got {factor}")
    height, width = valid.shape
    if height % factor or width % factor:
        raise ShapeError(
            f"mask shape {valid.shape} is not divisible by downsample factor {factor}"
        )
    blocks = valid.reshape(height // factor, factor, width // factor, factor)
    return blocks.any(axis=(1, 3))
