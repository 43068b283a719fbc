"""Depth-completion evaluation protocol: RMSE and MAE in millimeters,
iRMSE and iMAE in inverse kilometers, reduced over valid ground-truth
pixels only.

EvalResult keeps the raw error sums alongside the headline numbers so a
set of per-frame results can be pooled into the exact dataset-level
metrics instead of averaging averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EvaluationError, ShapeError, SupportError
from .grid import DenseGrid, SparseDepthMap, _format_float

__all__ = ["EvalResult", "evaluate", "aggregate", "METRICS_CSV_HEADER"]

METRICS_CSV_HEADER = "rmse_mm,mae_mm,irmse_km,imae_km,n_valid"

MM_PER_M = 1000.0
# 1/m -> 1/km: multiply by 1000 (a depth of x meters is x/1000 km).
INV_KM_PER_INV_M = 1000.0


@dataclass(frozen=True)
class EvalResult:
    """Headline metrics plus the sufficient statistics behind them.

    sq_sum_mm2 / abs_sum_mm accumulate squared and absolute depth error
    in mm; isq_sum_km2 / iabs_sum_km the same for inverse depth in 1/km.
    """

    rmse_mm: float
    mae_mm: float
    irmse_km: float
    imae_km: float
    n_valid: int
    sq_sum_mm2: float
    abs_sum_mm: float
    isq_sum_km2: float
    iabs_sum_km: float

    @classmethod
    def from_sums(cls, sq_sum_mm2, abs_sum_mm, isq_sum_km2, iabs_sum_km, n_valid):
        if n_valid <= 0:
            raise SupportError("metrics need at least one valid pixel")
        return cls(
            rmse_mm=float(np.sqrt(sq_sum_mm2 / n_valid)),
            mae_mm=float(abs_sum_mm / n_valid),
            irmse_km=float(np.sqrt(isq_sum_km2 / n_valid)),
            imae_km=float(iabs_sum_km / n_valid),
            n_valid=int(n_valid),
            sq_sum_mm2=float(sq_sum_mm2),
            abs_sum_mm=float(abs_sum_mm),
            isq_sum_km2=float(isq_sum_km2),
            iabs_sum_km=float(iabs_sum_km),
        )

    def to_csv_row(self) -> str:
        cells = [self.rmse_mm, self.mae_mm, self.irmse_km, self.imae_km]
        return ",".join(_format_float(c) for c in cells) + f",{self.n_valid}"


def evaluate(pred, gt: SparseDepthMap) -> EvalResult:
    """Evaluate a dense prediction against sparse ground truth.

    Errors are reduced over the valid gt pixels. The prediction must be
    strictly positive there: the inverse metrics are undefined otherwise
    and silently clamping would hide composition bugs upstream.
    """
    pred_data = pred.data if isinstance(pred, DenseGrid) else np.asarray(pred, dtype=np.float64)
    if pred_data.ndim == 3:
        if pred_data.shape[2] != 1:
            raise ShapeError(f"pred must be single-channel depth, got shape {pred_data.shape}")
        pred_data = pred_data[:, :, 0]
    if pred_data.shape != gt.depth.shape:
        raise ShapeError(f"pred shape {pred_data.shape} does not match gt {gt.depth.shape}")
    if gt.n_valid == 0:
        raise SupportError("ground truth has no valid pixels")
    pred_sel = pred_data[gt.valid]
    gt_sel = gt.depth[gt.valid]
    if not np.isfinite(pred_sel).all():
        raise EvaluationError("prediction is non-finite on the evaluation support")
    if (pred_sel <= 0).any():
        worst = float(pred_sel.min())
        raise EvaluationError(
            f"prediction must be positive on the support for inverse metrics, min {worst}"
        )
    err_mm = (pred_sel - gt_sel) * MM_PER_M
    inv_err_km = (1.0 / pred_sel - 1.0 / gt_sel) * INV_KM_PER_INV_M
    return EvalResult.from_sums(
        sq_sum_mm2=np.sum(err_mm * err_mm),
        abs_sum_mm=np.sum(np.abs(err_mm)),
        isq_sum_km2=np.sum(inv_err_km * inv_err_km),
        iabs_sum_km=np.sum(np.abs(inv_err_km)),
        n_valid=gt.n_valid,
    )


def aggregate(results, weights=None) -> EvalResult:
    """Pool per-frame results into dataset-level metrics by recombining
    the stored error sums (exact, not a mean of per-frame metrics).

    `weights`, when given, must repeat each result's pixel count; the
    check guards against accidentally passing unrelated weights.
    """
    results = list(results)
    if not results:
        raise SupportError("aggregate needs at least one result")
    if weights is not None:
        weights = [int(w) for w in weights]
        if len(weights) != len(results):
            raise ShapeError(f"{len(weights)} weights for {len(results)} results")
        for i, (res, w) in enumerate(zip(results, weights)):
            if w != res.n_valid:
                raise ShapeError(
                    f"weight {w} at index {i} does not match the result's n_valid {res.n_valid}"
                )
    return EvalResult.from_sums(
        sq_sum_mm2=sum(r.sq_sum_mm2 for r in results),
        abs_sum_mm=sum(r.abs_sum_mm for r in results),
        isq_sum_km2=sum(r.isq_sum_km2 for r in results),
        iabs_sum_km=sum(r.iabs_sum_km for r in results),
        n_valid=sum(r.n_valid for r in results),
    )
