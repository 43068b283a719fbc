"""Unsupervised loss stack and a finite-difference gradient checker.

Losses are sums (not means), matching the summation form of the
reconstruction objectives; every term takes a `normalize` flag that
divides by the contributing pixel count, which the toy trainer uses for
step-size stability. Derivative stencils are forward differences with
replicate boundary, so the second derivative is literally the first
difference applied twice and the two stay adjoint-consistent.

The single-view loss's edge-aware term enters with a negative sign
(strong image gradients excuse depth gradients), so that loss is signed;
the cross-view and sparse L2 terms are non-negative by construction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, ParameterError, ShapeError
from .grid import DenseGrid, SparseDepthMap, _format_float

__all__ = [
    "LossWeights",
    "LossReport",
    "EmptySupportWarning",
    "LOSS_CSV_HEADER",
    "forward_diff",
    "forward_diff_adjoint",
    "second_derivative_l1",
    "second_derivative_l1_grad",
    "cross_view_loss",
    "single_view_loss",
    "l2_sparse_loss",
    "total_loss",
    "finite_diff_check",
]

LOSS_CSV_HEADER = "cross_view,single_view,sparse_l2,total,alpha,beta,gamma,n_cross,n_single,n_sparse"


class EmptySupportWarning(UserWarning):
    """A loss term was asked to reduce over zero contributing pixels."""


@dataclass(frozen=True)
class LossWeights:
    """Term weights: alpha scales curvature, beta the edge-aware term
    (inside the single-view loss), gamma the sparse L2 term in the total."""

    alpha: float = 1e-3
    beta: float = 1e-3
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ParameterError(f"{name} must be finite and non-negative, got {v!r}")


@dataclass(frozen=True)
class LossReport:
    """One evaluation of the full objective, with the weights echoed so
    any serialized report is self-describing."""

    cross_view: float
    single_view: float
    sparse_l2: float
    total: float
    weights: LossWeights
    n_cross: int = 0
    n_single: int = 0
    n_sparse: int = 0

    def to_csv_row(self) -> str:
        cells = [self.cross_view, self.single_view, self.sparse_l2, self.total,
                 self.weights.alpha, self.weights.beta, self.weights.gamma]
        return ",".join(_format_float(c) for c in cells) + \
            f",{self.n_cross},{self.n_single},{self.n_sparse}"


def _stack(x, name):
    data = x.data if isinstance(x, DenseGrid) else np.asarray(x, dtype=np.float64)
    if data.ndim == 2:
        data = data[:, :, np.newaxis]
    if data.ndim != 3:
        raise ShapeError(f"{name} must be (H, W) or (H, W, C), got shape {data.shape}")
    return data


def forward_diff(arr: np.ndarray, axis: int) -> np.ndarray:
    """Forward difference with replicate boundary: the last slice along
    `axis` differences against itself, i.e. is zero."""
    out = np.zeros_like(arr)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    src[axis] = slice(1, None)
    dst[axis] = slice(None, -1)
    out[tuple(dst)] = arr[tuple(src)] - arr[tuple(dst)]
    return out


def forward_diff_adjoint(grad: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of forward_diff: <forward_diff(x), g> == <x, adjoint(g)>."""
    out = np.zeros_like(grad)
    upper = [slice(None)] * grad.ndim
    lower = [slice(None)] * grad.ndim
    upper[axis] = slice(1, None)
    lower[axis] = slice(None, -1)
    out[tuple(upper)] += grad[tuple(lower)]
    out[tuple(lower)] -= grad[tuple(lower)]
    return out


def _second_diff(arr: np.ndarray, axis: int) -> np.ndarray:
    return forward_diff(forward_diff(arr, axis), axis)


def second_derivative_l1(arr) -> float:
    """Sum of |second forward difference| over both axes (and channels)."""
    data = _stack(arr, "arr")
    return float(np.abs(_second_diff(data, 0)).sum() + np.abs(_second_diff(data, 1)).sum())


def second_derivative_l1_grad(arr) -> np.ndarray:
    """Gradient of second_derivative_l1 (subgradient 0 where a second
    difference is exactly zero). Shape matches the input."""
    data = _stack(arr, "arr")
    grad = np.zeros_like(data)
    for axis in (0, 1):
        sd = _second_diff(data, axis)
        grad += forward_diff_adjoint(forward_diff_adjoint(np.sign(sd), axis), axis)
    if np.asarray(arr if not isinstance(arr, DenseGrid) else arr.data).ndim == 2:
        return grad[:, :, 0]
    return grad


def cross_view_loss(warped, source, mask, normalize: bool = False) -> float:
    """L1 distance between the warped frame and the source frame, summed
    over channels and over mask-true pixels."""
    warped_data = _stack(warped, "warped")
    source_data = _stack(source, "source")
    if warped_data.shape != source_data.shape:
        raise ShapeError(
            f"warped shape {warped_data.shape} does not match source {source_data.shape}"
        )
    mask = np.asarray(mask).astype(bool)
    if mask.shape != warped_data.shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} does not match {warped_data.shape[:2]}")
    count = int(mask.sum())
    if count == 0:
        warnings.warn("cross-view loss over an empty mask is 0", EmptySupportWarning)
        return 0.0
    value = float(np.abs(warped_data - source_data)[mask].sum())
    return value / count if normalize else value


def single_view_loss(image, recon, weights: LossWeights = None,
                     normalize: bool = False) -> float:
    """L1 reconstruction plus alpha * curvature penalty minus beta * the
    edge-aware first-derivative term exp(-|grad image|) * |grad recon|.

    All stencils are per-channel forward differences over both axes. The
    negative edge-aware term can make the value negative.
    """
    if weights is None:
        weights = LossWeights()
    image_data = _stack(image, "image")
    recon_data = _stack(recon, "recon")
    if image_data.shape != recon_data.shape:
        raise ShapeError(
            f"image shape {image_data.shape} does not match recon {recon_data.shape}"
        )
    value = float(np.abs(image_data - recon_data).sum())
    value += weights.alpha * second_derivative_l1(recon_data)
    edge = 0.0
    for axis in (0, 1):
        grad_image = np.abs(forward_diff(image_data, axis))
        grad_recon = np.abs(forward_diff(recon_data, axis))
        edge += float((np.exp(-grad_image) * grad_recon).sum())
    value -= weights.beta * edge
    if normalize:
        value /= image_data.shape[0] * image_data.shape[1]
    return value


def l2_sparse_loss(pred, target: SparseDepthMap, normalize: bool = False) -> float:
    """Squared error against the sparse target, summed over its valid
    pixels."""
    pred_data = _stack(pred, "pred")
    if pred_data.shape[2] != 1:
        raise ShapeError(f"pred must be single-channel depth, got shape {pred_data.shape}")
    plane = pred_data[:, :, 0]
    if plane.shape != target.depth.shape:
        raise ShapeError(
            f"pred shape {plane.shape} does not match target {target.depth.shape}"
        )
    count = target.n_valid
    if count == 0:
        warnings.warn("sparse L2 loss over empty support is 0", EmptySupportWarning)
        return 0.0
    diff = target.depth[target.valid] - plane[target.valid]
    value = float(np.sum(diff * diff))
    return value / count if normalize else value


def total_loss(cross_view: float, single_view: float, sparse_l2: float,
               weights: LossWeights = None, pixel_counts=(0, 0, 0)) -> LossReport:
    """Combine the three terms: total = cross + single + gamma * l2.

    cross_view and sparse_l2 must be non-negative; single_view may be
    signed (its edge-aware term is subtractive).
    """
    if weights is None:
        weights = LossWeights()
    for name, v in (("cross_view", cross_view), ("sparse_l2", sparse_l2)):
        if not np.isfinite(v) or v < 0:
            raise ParameterError(f"{name} must be finite and non-negative, got {v!r}")
    if not np.isfinite(single_view):
        raise ParameterError(f"single_view must be finite, got {single_view!r}")
    n_cross, n_single, n_sparse = (int(c) for c in pixel_counts)
    total = cross_view + single_view + weights.gamma * sparse_l2
    return LossReport(
        cross_view=float(cross_view),
        single_view=float(single_view),
        sparse_l2=float(sparse_l2),
        total=float(total),
        weights=weights,
        n_cross=n_cross,
        n_single=n_single,
        n_sparse=n_sparse,
    )


def finite_diff_check(fn, params: dict, analytic: dict, epsilon: float = 1e-6) -> float:
    """Central-difference check of provided analytic gradients.

    fn maps the params dict (name -> float64 array) to a scalar and must
    re-read the arrays on every call; the checker perturbs them in
    place, one coordinate at a time. Returns the worst coordinate's
    |analytic - numeric| / max(1, |numeric|).
    """
    if not (0.0 < epsilon <= 1e-3):
        raise ParameterError(f"epsilon must lie in (0, 1e-3], got {epsilon!r}")
    work = {}
    for name, arr in params.items():
        work[name] = np.array(arr, dtype=np.float64, copy=True)
        if name not in analytic:
            raise ParameterError(f"no analytic gradient provided for {name!r}")
    base = float(fn(work))
    if not np.isfinite(base):
        raise EvaluationError(f"function value at the base point is {base!r}")
    worst = 0.0
    for name, arr in work.items():
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != arr.shape:
            raise ShapeError(
                f"gradient shape {grad.shape} for {name!r} does not match {arr.shape}"
            )
        flat = arr.reshape(-1)
        grad_flat = grad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + epsilon
            f_plus = float(fn(work))
            flat[i] = saved - epsilon
            f_minus = float(fn(work))
            flat[i] = saved
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise EvaluationError(
                    f"non-finite probe value at {name}[{i}]: {f_plus!r}, {f_minus!r}"
                )
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            err = abs(grad_flat[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst
