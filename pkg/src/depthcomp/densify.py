"""Sparse-to-dense depth references: morphological dilation and
scattered-data interpolation baselines.

Dilation fills each invalid pixel with the minimum valid depth inside
its kernel neighborhood, which favors the closest surface and keeps
thin foreground structures from being swallowed by background values.
Valid input pixels are never rewritten.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SupportError
from .grid import SparseDepthMap

__all__ = [
    "DilationKernel",
    "make_kernel",
    "parse_kernel_spec",
    "dilate",
    "interpolate",
    "density",
]

KERNEL_SHAPES = ("cross", "square")
_SPEC_RE = re.compile(r"^(cross|square)(\d+)$")


@dataclass(frozen=True)
class DilationKernel:
    """Structuring element: its shape name, odd size, and member offsets.

    Offsets are (dy, dx) pairs, always containing (0, 0) and symmetric
    under negation, stored sorted for deterministic iteration.
    """

    shape: str
    size: int
    offsets: tuple

    @property
    def radius(self) -> int:
        return (self.size - 1) // 2

    def spec(self) -> str:
        return f"{self.shape}{self.size}"


def make_kernel(shape: str, size: int) -> DilationKernel:
    """Build a cross or square structuring element of odd size >= 3."""
    if shape not in KERNEL_SHAPES:
        raise ParameterError(f"kernel shape must be one of {KERNEL_SHAPES}, got {shape!r}")
    if not isinstance(size, (int, np.integer)) or size < 3 or size % 2 == 0:
        raise ParameterError(f"kernel size must be an odd integer >= 3, got {size!r}")
    radius = (size - 1) // 2
    if shape == "square":
        offsets = [(dy, dx) for dy in range(-radius, radius + 1)
                   for dx in range(-radius, radius + 1)]
    else:
        offsets = [(0, 0)]
        for step in range(1, radius + 1):
            offsets += [(-step, 0), (step, 0), (0, -step), (0, step)]
    return DilationKernel(shape=shape, size=int(size), offsets=tuple(sorted(offsets)))


def parse_kernel_spec(spec: str) -> DilationKernel:
    """Parse a compact kernel name such as "square5" or "cross3"."""
    match = _SPEC_RE.match(spec.strip().lower())
    if not match:
        raise ParameterError(
            f"kernel spec must look like 'cross3' or 'square5', got {spec!r}"
        )
    return make_kernel(match.group(1), int(match.group(2)))


def dilate(sparse: SparseDepthMap, kernel: DilationKernel) -> SparseDepthMap:
    """Morphological dilation under the minimum-valid-depth fill rule.

    Valid pixels keep their exact depth. An invalid pixel whose kernel
    neighborhood holds at least one valid pixel becomes valid with the
    minimum valid depth seen there; all other pixels stay invalid.
    """
    height, width = sparse.height, sparse.width
    radius = kernel.radius
    work = np.where(sparse.valid, sparse.depth, np.inf)
    padded = np.pad(work, radius, constant_values=np.inf)
    best = np.full((height, width), np.inf)
    for dy, dx in kernel.offsets:
        shifted = padded[radius + dy: radius + dy + height,
                         radius + dx: radius + dx + width]
        np.minimum(best, shifted, out=best)
    filled = np.isfinite(best)
    depth = np.where(sparse.valid, sparse.depth, np.where(filled, best, 0.0))
    return SparseDepthMap(depth=depth, valid=sparse.valid | filled)


def density(sparse: SparseDepthMap) -> float:
    """Fraction of valid pixels."""
    return sparse.density


def _neighbor_keys(py, px, ys, xs):
    # Composite sort key: squared distance, ties broken by scan order of
    # the valid pixel. Encoded as one int64 so argmin/argpartition give a
    # deterministic winner.
    n_valid = ys.shape[0]
    d2 = (py[:, None] - ys[None, :]) ** 2 + (px[:, None] - xs[None, :]) ** 2
    return d2, d2 * np.int64(n_valid) + np.arange(n_valid, dtype=np.int64)[None, :]


def interpolate(sparse: SparseDepthMap, method: str = "nearest") -> SparseDepthMap:
    """Fill every pixel from the valid support set.

    nearest: copy the depth of the Euclidean-nearest valid pixel.
    bilinear: inverse-distance blend of the 4 nearest valid pixels (the
    scattered-data stand-in for bilinear interpolation; valid pixels
    always keep their own exact depth, both methods).

    Distance ties break by scan order (smallest row, then column).
    """
    if method not in ("nearest", "bilinear"):
        raise ParameterError(f"method must be 'nearest' or 'bilinear', got {method!r}")
    n_valid = sparse.n_valid
    if n_valid == 0:
        raise SupportError("interpolation needs at least one valid pixel")
    out = sparse.depth.copy()
    holes = ~sparse.valid
    if not holes.any():
        return SparseDepthMap(depth=out, valid=np.ones_like(sparse.valid))

    ys, xs = np.nonzero(sparse.valid)
    ys = ys.astype(np.int64)
    xs = xs.astype(np.int64)
    vals = sparse.depth[ys, xs]
    hy, hx = np.nonzero(holes)
    hy = hy.astype(np.int64)
    hx = hx.astype(np.int64)
    k = min(4, n_valid)

    # Brute-force chunks keep the (holes x support) distance table small.
    chunk = max(1, int(4_000_000 // n_valid))
    filled = np.empty(hy.shape[0])
    for start in range(0, hy.shape[0], chunk):
        py = hy[start:start + chunk]
        px = hx[start:start + chunk]
        d2, keys = _neighbor_keys(py, px, ys, xs)
        if method == "nearest":
            filled[start:start + py.shape[0]] = vals[np.argmin(keys, axis=1)]
            continue
        if k < keys.shape[1]:
            part = np.argpartition(keys, k - 1, axis=1)[:, :k]
        else:
            part = np.broadcast_to(np.arange(k, dtype=np.int64), (py.shape[0], k))
        rows = np.arange(py.shape[0])[:, None]
        order = np.argsort(keys[rows, part], axis=1)
        chosen = part[rows, order]
        # A hole is never at distance 0 from a valid pixel, so 1/d is safe.
        weights = 1.0 / np.sqrt(d2[rows, chosen].astype(np.float64))
        blend = (weights * vals[chosen]).sum(axis=1) / weights.sum(axis=1)
        filled[start:start + py.shape[0]] = blend
    out[holes] = filled
    return SparseDepthMap(depth=out, valid=np.ones_like(sparse.valid))
