"""Pinhole camera model and rigid ego-motion warping.

Pixel coordinates are continuous with (0, 0) at the top-left pixel
center, so a W-pixel row spans [0, W-1]. Single-pixel operations raise
on degenerate geometry (depth <= 0, point behind the camera); the
map-level warp records those pixels as invalid in its mask instead,
because loss terms need total functions over grids.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CodecError, GeometryError, ParameterError, ShapeError
from .grid import DenseGrid, FeatureMap, _format_float

__all__ = [
    "CameraIntrinsics",
    "RigidTransform",
    "project",
    "backproject",
    "warp_pixel",
    "bilinear_sample",
    "warp_map",
    "compose",
    "invert",
    "transform_to_csv",
    "transform_from_csv",
]

ORTHONORMAL_TOL = 1e-9

# Backproject-transform-project round trips land up to ~1 ulp outside the
# grid for boundary pixels; warp_map forgives that much before masking.
BOUNDS_GRACE = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise ParameterError(f"intrinsics must be finite, got {vals}")
        if self.fx <= 0 or self.fy <= 0:
            raise ParameterError(
                f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}"
            )


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation (3x3 orthonormal, det +1) plus translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        if rot.shape != (3, 3):
            raise ShapeError(f"rotation must be 3x3, got shape {rot.shape}")
        if trans.shape != (3,):
            raise ShapeError(f"translation must be a 3-vector, got shape {trans.shape}")
        if not (np.isfinite(rot).all() and np.isfinite(trans).all()):
            raise GeometryError("transform contains non-finite entries")
        gram_err = np.abs(rot.T @ rot - np.eye(3)).max()
        if gram_err >= ORTHONORMAL_TOL:
            raise GeometryError(f"rotation is not orthonormal: |R'R - I| = {gram_err:.3e}")
        det = np.linalg.det(rot)
        if abs(det - 1.0) > ORTHONORMAL_TOL:
            raise GeometryError(f"rotation must have det +1, got {det!r}")
        object.__setattr__(self, "rotation", np.ascontiguousarray(rot))
        object.__setattr__(self, "translation", np.ascontiguousarray(trans))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_axis_angle(cls, axis, angle_rad: float, translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rodrigues rotation about `axis` by `angle_rad`."""
        axis = np.asarray(axis, dtype=np.float64).reshape(3)
        norm = np.linalg.norm(axis)
        if not np.isfinite(norm) or norm == 0:
            raise ParameterError("rotation axis must be a nonzero finite vector")
        x, y, z = axis / norm
        cross = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
        rot = np.eye(3) + np.sin(angle_rad) * cross + (1.0 - np.cos(angle_rad)) * (cross @ cross)
        return cls(rot, np.asarray(translation, dtype=np.float64))

    def apply(self, point) -> np.ndarray:
        """Transform one 3D point (returns a length-3 array)."""
        p = np.asarray(point, dtype=np.float64).reshape(3)
        return self.rotation @ p + self.translation

    def apply_many(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) batch of points."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ShapeError(f"expected (N, 3) points, got shape {pts.shape}")
        return pts @ self.rotation.T + self.translation


def project(point, intr: CameraIntrinsics):
    """Project a 3D camera-frame point to continuous pixel coordinates."""
    x, y, z = (float(c) for c in np.asarray(point, dtype=np.float64).reshape(3))
    if not z > 0:
        raise GeometryError(f"cannot project a point with Z = {z} (needs Z > 0)")
    return (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy)


def backproject(pixel, depth: float, intr: CameraIntrinsics) -> np.ndarray:
    """Lift a pixel at metric depth back to a 3D camera-frame point."""
    u, v = (float(c) for c in np.asarray(pixel, dtype=np.float64).reshape(2))
    depth = float(depth)
    if not depth > 0:
        raise GeometryError(f"backprojection needs depth > 0, got {depth}")
    return depth * np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])


def warp_pixel(pixel, depth: float, transform: RigidTransform, intr: CameraIntrinsics):
    """Reproject one pixel into the frame reached by `transform`."""
    moved = transform.apply(backproject(pixel, depth, intr))
    if not moved[2] > 0:
        raise GeometryError(
            f"pixel {tuple(np.asarray(pixel).reshape(2))} maps behind the camera (Z = {moved[2]!r})"
        )
    return project(moved, intr)


def bilinear_sample(grid, pixel) -> np.ndarray:
    """Bilinear blend of the 4 lattice cells around a continuous pixel.

    Returns the length-C channel vector. Raises outside [0, W-1] x [0, H-1].
    """
    data = grid.data if isinstance(grid, DenseGrid) else np.asarray(grid, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, np.newaxis]
    height, width = data.shape[:2]
    u, v = (float(c) for c in np.asarray(pixel, dtype=np.float64).reshape(2))
    if not (0.0 <= u <= width - 1 and 0.0 <= v <= height - 1):
        raise GeometryError(
            f"sample point ({u}, {v}) outside [0, {width - 1}] x [0, {height - 1}]"
        )
    x0 = min(int(np.floor(u)), width - 1)
    y0 = min(int(np.floor(v)), height - 1)
    x1 = min(x0 + 1, width - 1)
    y1 = min(y0 + 1, height - 1)
    wx = u - x0
    wy = v - y0
    top = (1.0 - wx) * data[y0, x0] + wx * data[y0, x1]
    bottom = (1.0 - wx) * data[y1, x0] + wx * data[y1, x1]
    return (1.0 - wy) * top + wy * bottom


def warp_map(src, depth, transform: RigidTransform, intr: CameraIntrinsics):
    """Warp a whole grid through per-pixel depth and a rigid motion.

    Every target pixel q with depth d backprojects, moves by `transform`,
    reprojects, and samples `src` bilinearly at the landing point. Pixels
    with non-positive depth, a behind-camera landing, or an out-of-bounds
    landing come back with mask False and value 0 (no exception: the loss
    stack needs a total function).

    Returns (warped FeatureMap, boolean validity mask).
    """
    src_data = src.data if isinstance(src, DenseGrid) else np.asarray(src, dtype=np.float64)
    if src_data.ndim == 2:
        src_data = src_data[:, :, np.newaxis]
    depth_data = depth.data if isinstance(depth, DenseGrid) else np.asarray(depth, dtype=np.float64)
    if depth_data.ndim == 3:
        if depth_data.shape[2] != 1:
            raise ShapeError(f"depth grid must have one channel, got {depth_data.shape[2]}")
        depth_data = depth_data[:, :, 0]
    if depth_data.ndim != 2:
        raise ShapeError(f"depth must be (H, W) or (H, W, 1), got shape {depth_data.shape}")

    height, width = depth_data.shape
    src_h, src_w, channels = src_data.shape
    us, vs = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    z = depth_data
    ok = np.isfinite(z) & (z > 0)
    safe_z = np.where(ok, z, 1.0)
    rays = np.stack(
        [(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy, np.ones_like(us)], axis=-1
    )
    points = (safe_z[:, :, np.newaxis] * rays).reshape(-1, 3)
    moved = transform.apply_many(points).reshape(height, width, 3)
    z_new = moved[:, :, 2]
    ok &= z_new > 0
    safe_z_new = np.where(ok, z_new, 1.0)
    u_new = intr.fx * moved[:, :, 0] / safe_z_new + intr.cx
    v_new = intr.fy * moved[:, :, 1] / safe_z_new + intr.cy
    ok &= (u_new >= -BOUNDS_GRACE) & (u_new <= src_w - 1 + BOUNDS_GRACE)
    ok &= (v_new >= -BOUNDS_GRACE) & (v_new <= src_h - 1 + BOUNDS_GRACE)
    u_new = np.clip(u_new, 0.0, float(src_w - 1))
    v_new = np.clip(v_new, 0.0, float(src_h - 1))

    out = np.zeros((height, width, channels))
    if ok.any():
        uu = u_new[ok]
        vv = v_new[ok]
        x0 = np.floor(uu).astype(np.int64)
        y0 = np.floor(vv).astype(np.int64)
        x0 = np.minimum(x0, src_w - 1)
        y0 = np.minimum(y0, src_h - 1)
        x1 = np.minimum(x0 + 1, src_w - 1)
        y1 = np.minimum(y0 + 1, src_h - 1)
        wx = (uu - x0)[:, np.newaxis]
        wy = (vv - y0)[:, np.newaxis]
        top = (1.0 - wx) * src_data[y0, x0] + wx * src_data[y0, x1]
        bottom = (1.0 - wx) * src_data[y1, x0] + wx * src_data[y1, x1]
        out[ok] = (1.0 - wy) * top + wy * bottom
    return FeatureMap(out), ok


def compose(first: RigidTransform, second: RigidTransform) -> RigidTransform:
    """Transform applying `second`, then `first`: compose(a, b).apply(p)
    == a.apply(b.apply(p))."""
    return RigidTransform(
        first.rotation @ second.rotation,
        first.rotation @ second.translation + first.translation,
    )


def invert(transform: RigidTransform) -> RigidTransform:
    """Inverse motion: compose(invert(g), g) is the identity."""
    rot_inv = transform.rotation.T
    return RigidTransform(rot_inv, -rot_inv @ transform.translation)


def transform_to_csv(transform: RigidTransform) -> str:
    """Serialize as a 3x4 row-major CSV block, rotation columns then the
    translation component per row."""
    lines = []
    for i in range(3):
        cells = [*transform.rotation[i], transform.translation[i]]
        lines.append(",".join(_format_float(c) for c in cells))
    return "\n".join(lines) + "\n"


def transform_from_csv(text: str) -> RigidTransform:
    """Inverse of transform_to_csv."""
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    if len(lines) != 3:
        raise CodecError(f"transform CSV needs exactly 3 rows, got {len(lines)}")
    rows = []
    for ln in lines:
        cells = ln.split(",")
        if len(cells) != 4:
            raise CodecError(f"transform CSV rows need 4 cells, got {len(cells)}")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise CodecError(f"non-numeric cell in transform row {ln!r}") from exc
    block = np.asarray(rows, dtype=np.float64)
    return RigidTransform(block[:, :3], block[:, 3])
