"""Dense-to-sparse attention operators.

Three variants over (H, W, C) feature grids:

* conventional: one input supplies query, key, and value (self-attention
  over the flattened pixels).
* dense_to_sparse: the sparse-branch features form the queries, the
  dense depth-reference features form keys and values, and the result is
  added back onto the sparse branch as a residual.
* fast dense_to_sparse: strip average pooling compresses the HW keys to
  H row vectors and the HW queries to W column vectors, a single softmax
  runs over the H x W correlation logits, and each pixel's value vector
  is gated by H*W times its correlation weight. Cost drops from
  (HW)^2*C to HW*C. An optional validity mask (from the dilated depth)
  zeroes masked-out cells on the value path and turns key pooling into a
  masked average; a row with no valid cell falls back to the plain mean.

All forwards compute in the dtype of their inputs (float64 grids stay
float64; raw float32 arrays stay float32 for benchmarking) and every
reduction has a fixed order, so repeated runs are bit-identical.
Backwards are hand-derived analytic gradients of sum(upstream * updated).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ParameterError, ShapeError
from .grid import DenseGrid, FeatureMap
from .seeds import STREAM_PARAMS, substream

__all__ = [
    "AttentionParams",
    "AttentionOutput",
    "AttentionGradients",
    "VARIANTS",
    "ca_forward",
    "dsa_forward",
    "fdsa_forward",
    "attention_forward",
    "attention_backward",
    "flop_estimate",
]

VARIANTS = ("ca", "dsa", "fdsa")

# Materializing an N x N weight matrix beyond this many entries is almost
# certainly a mistake (8 GiB at float64); the streamed path avoids it.
_MAX_KEPT_WEIGHTS = 2**30


@dataclass(frozen=True, eq=False)
class AttentionParams:
    """Projection weights for query, key, and value (all C x C)."""

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray

    def __post_init__(self):
        mats = {}
        channels = None
        for name in ("w_q", "w_k", "w_v"):
            mat = np.asarray(getattr(self, name), dtype=np.float64)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise ShapeError(f"{name} must be square (C, C), got shape {mat.shape}")
            if not np.isfinite(mat).all():
                raise ShapeError(f"{name} contains non-finite entries")
            if channels is None:
                channels = mat.shape[0]
            elif mat.shape[0] != channels:
                raise ShapeError("projection matrices disagree on channel count")
            mats[name] = np.ascontiguousarray(mat)
        for name, mat in mats.items():
            object.__setattr__(self, name, mat)

    @property
    def channels(self) -> int:
        return self.w_q.shape[0]

    @property
    def temperature(self) -> float:
        """Scaled dot-product temperature, fixed at sqrt(C)."""
        return float(np.sqrt(self.channels))

    @classmethod
    def identity(cls, channels: int) -> "AttentionParams":
        eye = np.eye(channels)
        return cls(eye, eye.copy(), eye.copy())

    @classmethod
    def random(cls, channels: int, seed: int, scale: float = 1.0) -> "AttentionParams":
        """Gaussian weights with std scale/sqrt(C), one RNG substream per matrix."""
        mats = []
        for sub in range(3):
            rng = substream(STREAM_PARAMS, seed, sub)
            mats.append(rng.normal(0.0, scale / np.sqrt(channels), (channels, channels)))
        return cls(*mats)


@dataclass(eq=False)
class AttentionOutput:
    updated: FeatureMap
    weights: Optional[np.ndarray]
    flop_estimate: int


@dataclass(eq=False)
class AttentionGradients:
    """Gradients of sum(upstream * updated) w.r.t. inputs and params.

    query_feat is the gradient of the query-side input (the sole input
    for the conventional variant, where dense_feat is None).
    """

    query_feat: np.ndarray
    dense_feat: Optional[np.ndarray]
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray


def flop_estimate(variant: str, height: int, width: int, channels: int) -> int:
    """Dominant-term operation count: (HW)^2*C for the quadratic variants,
    HW*C for the fast one. The ratio at equal shapes is exactly HW."""
    n = height * width
    if variant in ("ca", "dsa"):
        return n * n * channels
    if variant == "fdsa":
        return n * channels
    raise ParameterError(f"unknown attention variant {variant!r}")


def _as_plane_stack(x, channels_expected=None, name="input"):
    data = x.data if isinstance(x, DenseGrid) else np.asarray(x)
    if data.ndim != 3:
        raise ShapeError(f"{name} must be (H, W, C), got shape {data.shape}")
    if not np.issubdtype(data.dtype, np.floating):
        data = data.astype(np.float64)
    if channels_expected is not None and data.shape[2] != channels_expected:
        raise ShapeError(
            f"{name} has {data.shape[2]} channels, params expect {channels_expected}"
        )
    return data


def _softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def _attend_dense(queries, keys, values, keep_weights):
    """rowsoftmax(Q K^T / tau) V with tau folded into queries already.

    keep_weights materializes the N x N matrix; otherwise the softmax is
    streamed in row chunks so memory stays O(chunk * N).
    """
    n = queries.shape[0]
    if keep_weights:
        if n * n > _MAX_KEPT_WEIGHTS:
            raise ParameterError(
                f"refusing to materialize a {n}x{n} weight matrix; "
                "pass keep_weights=False"
            )
        weights = _softmax_rows(queries @ keys.T)
        return weights @ values, weights
    out = np.empty((n, values.shape[1]), dtype=queries.dtype)
    keys_t = np.ascontiguousarray(keys.T)
    # Score-buffer rows capped so the streamed chunk stays near 512 MB.
    chunk = int(512 * 2**20 // (n * queries.dtype.itemsize))
    chunk = max(1, min(n, 4096, chunk))
    scores = np.empty((chunk, n), dtype=queries.dtype)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block = scores[: stop - start]
        np.matmul(queries[start:stop], keys_t, out=block)
        block -= block.max(axis=1, keepdims=True)
        np.exp(block, out=block)
        norm = block.sum(axis=1)
        np.matmul(block, values, out=out[start:stop])
        out[start:stop] /= norm[:, None]
    return out, None


def _dense_variant_forward(query_src, dense_src, params, keep_weights):
    height, width, channels = query_src.shape
    dtype = query_src.dtype
    n = height * width
    tau = dtype.type(np.sqrt(channels))
    w_q = params.w_q.astype(dtype, copy=False)
    w_k = params.w_k.astype(dtype, copy=False)
    w_v = params.w_v.astype(dtype, copy=False)
    flat_q = query_src.reshape(n, channels)
    flat_d = dense_src.reshape(n, channels)
    queries = (flat_q @ w_q) / tau
    keys = flat_d @ w_k
    values = flat_d @ w_v
    mixed, weights = _attend_dense(queries, keys, values, keep_weights)
    updated = flat_q + mixed
    return updated.reshape(height, width, channels), weights


def ca_forward(x, params: AttentionParams, keep_weights: bool = True) -> AttentionOutput:
    """Self-attention: one grid supplies query, key, and value. The
    ablation harness feeds it the sum of the sparse and dense branches,
    which is what a single-input block sees."""
    data = _as_plane_stack(x, params.channels, "x")
    updated, weights = _dense_variant_forward(data, data, params, keep_weights)
    height, width, channels = data.shape
    return AttentionOutput(
        updated=FeatureMap(updated),
        weights=weights,
        flop_estimate=flop_estimate("ca", height, width, channels),
    )


def dsa_forward(sparse_feat, dense_feat, params: AttentionParams,
                keep_weights: bool = True) -> AttentionOutput:
    """Cross-attention: sparse features query the dense depth reference,
    whose projections serve as keys and values; the attended values are
    added to the sparse branch as a residual."""
    sparse_data = _as_plane_stack(sparse_feat, params.channels, "sparse_feat")
    dense_data = _as_plane_stack(dense_feat, params.channels, "dense_feat")
    if dense_data.shape != sparse_data.shape:
        raise ShapeError(
            f"sparse {sparse_data.shape} and dense {dense_data.shape} shapes differ"
        )
    updated, weights = _dense_variant_forward(sparse_data, dense_data, params, keep_weights)
    height, width, channels = sparse_data.shape
    return AttentionOutput(
        updated=FeatureMap(updated),
        weights=weights,
        flop_estimate=flop_estimate("dsa", height, width, channels),
    )


def _key_pool_weights(mask, height, width, dtype):
    """Per-row pooling weights for the key strip average.

    With no mask every row pools uniformly (1/W). With a mask, a row
    averages its valid cells only; a row with zero valid cells falls
    back to the uniform average so pooling stays total.
    """
    if mask is None:
        return np.full((height, width), 1.0 / width, dtype=dtype)
    counts = mask.sum(axis=1)
    weights = np.empty((height, width), dtype=dtype)
    nonempty = counts > 0
    weights[nonempty] = mask[nonempty] / counts[nonempty, None]
    weights[~nonempty] = 1.0 / width
    return weights


def _check_mask(mask, height, width):
    arr = np.asarray(mask)
    if arr.shape != (height, width):
        raise ShapeError(f"mask shape {arr.shape} does not match grid ({height}, {width})")
    return arr.astype(bool)


def fdsa_forward(sparse_feat, dense_feat, params: AttentionParams,
                 mask=None, use_mask: bool = False) -> AttentionOutput:
    """Fast dense-to-sparse attention via strip average pooling.

    Keys pool per row (H x C), queries pool per column (W x C), one
    softmax normalizes all H*W correlation logits, and each pixel's
    value vector is scaled by H*W times its correlation weight before
    the residual add. The H*W factor keeps the gate magnitude 1 when
    the correlation is uniform.
    """
    sparse_data = _as_plane_stack(sparse_feat, params.channels, "sparse_feat")
    dense_data = _as_plane_stack(dense_feat, params.channels, "dense_feat")
    if dense_data.shape != sparse_data.shape:
        raise ShapeError(
            f"sparse {sparse_data.shape} and dense {dense_data.shape} shapes differ"
        )
    height, width, channels = sparse_data.shape
    dtype = sparse_data.dtype
    if use_mask:
        if mask is None:
            raise ParameterError("use_mask=True needs a mask")
        mask = _check_mask(mask, height, width)
    w_q = params.w_q.astype(dtype, copy=False)
    w_k = params.w_k.astype(dtype, copy=False)
    w_v = params.w_v.astype(dtype, copy=False)
    tau = dtype.type(np.sqrt(channels))

    queries = sparse_data.reshape(-1, channels) @ w_q
    keys = dense_data.reshape(-1, channels) @ w_k
    values = (dense_data.reshape(-1, channels) @ w_v).reshape(height, width, channels)
    queries = queries.reshape(height, width, channels)
    keys = keys.reshape(height, width, channels)
    if use_mask:
        values = values * mask[:, :, None]
    pool = _key_pool_weights(mask if use_mask else None, height, width, dtype)
    key_rows = np.einsum("hw,hwc->hc", pool, keys)
    query_cols = queries.mean(axis=0)

    logits = (key_rows @ query_cols.T) / tau
    flat = logits.reshape(-1)
    flat = np.exp(flat - flat.max())
    corr = (flat / flat.sum()).reshape(height, width)

    gate = (height * width) * corr
    updated = sparse_data + gate[:, :, None] * values
    return AttentionOutput(
        updated=FeatureMap(updated),
        weights=corr,
        flop_estimate=flop_estimate("fdsa", height, width, channels),
    )


def attention_forward(variant: str, inputs, params: AttentionParams,
                      keep_weights: bool = True, mask=None,
                      use_mask: bool = False) -> AttentionOutput:
    """Variant dispatch used by the benchmark and CLI layers."""
    if variant == "ca":
        (x,) = inputs if isinstance(inputs, (tuple, list)) else (inputs,)
        return ca_forward(x, params, keep_weights=keep_weights)
    if variant == "dsa":
        sparse_feat, dense_feat = inputs
        return dsa_forward(sparse_feat, dense_feat, params, keep_weights=keep_weights)
    if variant == "fdsa":
        sparse_feat, dense_feat = inputs
        return fdsa_forward(sparse_feat, dense_feat, params, mask=mask, use_mask=use_mask)
    raise ParameterError(f"unknown attention variant {variant!r}")


def _softmax_backward_rows(weights, d_weights):
    inner = (d_weights * weights).sum(axis=1, keepdims=True)
    return weights * (d_weights - inner)


def _dense_variant_backward(query_src, dense_src, params, upstream):
    height, width, channels = query_src.shape
    n = height * width
    tau = np.sqrt(channels)
    flat_q = query_src.reshape(n, channels).astype(np.float64)
    flat_d = dense_src.reshape(n, channels).astype(np.float64)
    d_up = upstream.reshape(n, channels).astype(np.float64)

    queries = flat_q @ params.w_q
    keys = flat_d @ params.w_k
    values = flat_d @ params.w_v
    weights = _softmax_rows((queries @ keys.T) / tau)

    d_values = weights.T @ d_up
    d_weights = d_up @ values.T
    d_scores = _softmax_backward_rows(weights, d_weights) / tau
    d_queries = d_scores @ keys
    d_keys = d_scores.T @ queries

    d_query_src = d_up + d_queries @ params.w_q.T
    d_dense_src = d_keys @ params.w_k.T + d_values @ params.w_v.T
    d_wq = flat_q.T @ d_queries
    d_wk = flat_d.T @ d_keys
    d_wv = flat_d.T @ d_values
    shape = (height, width, channels)
    return d_query_src.reshape(shape), d_dense_src.reshape(shape), d_wq, d_wk, d_wv


def _fdsa_backward(sparse_data, dense_data, params, upstream, mask, use_mask):
    height, width, channels = sparse_data.shape
    n = height * width
    tau = np.sqrt(channels)
    flat_s = sparse_data.reshape(n, channels).astype(np.float64)
    flat_d = dense_data.reshape(n, channels).astype(np.float64)
    d_up = upstream.reshape(height, width, channels).astype(np.float64)

    queries = (flat_s @ params.w_q).reshape(height, width, channels)
    keys = (flat_d @ params.w_k).reshape(height, width, channels)
    values = (flat_d @ params.w_v).reshape(height, width, channels)
    if use_mask:
        mask = _check_mask(mask, height, width)
        values = values * mask[:, :, None]
    pool = _key_pool_weights(mask if use_mask else None, height, width, np.float64)
    key_rows = np.einsum("hw,hwc->hc", pool, keys)
    query_cols = queries.mean(axis=0)
    logits = (key_rows @ query_cols.T) / tau
    flat = logits.reshape(-1)
    flat = np.exp(flat - flat.max())
    corr = (flat / flat.sum()).reshape(height, width)
    gate = n * corr

    # updated = sparse + gate * values (gate scalar per pixel)
    d_values = gate[:, :, None] * d_up
    d_gate = (d_up * values).sum(axis=2)
    d_corr = n * d_gate
    # softmax over ALL entries: dZ = A*(dA - sum(dA*A))
    total = (d_corr * corr).sum()
    d_logits = corr * (d_corr - total) / tau
    d_key_rows = d_logits @ query_cols
    d_query_cols = d_logits.T @ key_rows
    d_queries = np.broadcast_to(d_query_cols[None, :, :] / height,
                                (height, width, channels))
    d_keys = pool[:, :, None] * d_key_rows[:, None, :]
    if use_mask:
        d_values = d_values * mask[:, :, None]

    d_flat_q = d_queries.reshape(n, channels)
    d_flat_k = d_keys.reshape(n, channels)
    d_flat_v = d_values.reshape(n, channels)
    d_sparse = d_up.reshape(n, channels) + d_flat_q @ params.w_q.T
    d_dense = d_flat_k @ params.w_k.T + d_flat_v @ params.w_v.T
    d_wq = flat_s.T @ d_flat_q
    d_wk = flat_d.T @ d_flat_k
    d_wv = flat_d.T @ d_flat_v
    shape = (height, width, channels)
    return d_sparse.reshape(shape), d_dense.reshape(shape), d_wq, d_wk, d_wv


def attention_backward(variant: str, inputs, params: AttentionParams, upstream,
                       mask=None, use_mask: bool = False) -> AttentionGradients:
    """Analytic gradients of sum(upstream * updated) for every variant.

    For the conventional variant the single input's total gradient
    (through the residual, query, key, and value paths) is returned in
    query_feat and dense_feat is None.
    """
    up = _as_plane_stack(upstream, params.channels, "upstream").astype(np.float64)
    if variant == "ca":
        (x,) = inputs if isinstance(inputs, (tuple, list)) else (inputs,)
        data = _as_plane_stack(x, params.channels, "x").astype(np.float64)
        if up.shape != data.shape:
            raise ShapeError(f"upstream shape {up.shape} does not match input {data.shape}")
        d_q, d_d, d_wq, d_wk, d_wv = _dense_variant_backward(data, data, params, up)
        return AttentionGradients(d_q + d_d, None, d_wq, d_wk, d_wv)
    if variant in ("dsa", "fdsa"):
        sparse_feat, dense_feat = inputs
        sparse_data = _as_plane_stack(sparse_feat, params.channels, "sparse_feat").astype(np.float64)
        dense_data = _as_plane_stack(dense_feat, params.channels, "dense_feat").astype(np.float64)
        if dense_data.shape != sparse_data.shape:
            raise ShapeError(
                f"sparse {sparse_data.shape} and dense {dense_data.shape} shapes differ"
            )
        if up.shape != sparse_data.shape:
            raise ShapeError(f"upstream shape {up.shape} does not match input {sparse_data.shape}")
        if variant == "dsa":
            d_s, d_d, d_wq, d_wk, d_wv = _dense_variant_backward(
                sparse_data, dense_data, params, up
            )
        else:
            d_s, d_d, d_wq, d_wk, d_wv = _fdsa_backward(
                sparse_data, dense_data, params, up, mask, use_mask
            )
        return AttentionGradients(d_s, d_d, d_wq, d_wk, d_wv)
    raise ParameterError(f"unknown attention variant {variant!r}")
