"""Differentiable soft alignment distance between temporal logit sequences.

The classic alignment DP with the hard minimum replaced by a smoothed
soft-min, which makes the value differentiable in the input frames. Frame
cost is squared Euclidean distance, so the gradient with respect to the
first sequence is linear in its frames and flows through the alignment
weights computed by a reverse DP.

The raw value grows with sequence length; ``SdtwConfig.length_normalize``
divides by (Ta + Tb) on the loss path so mixed-length terms are comparable.
Values can be negative at large smoothing; callers must not assume
non-negativity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, _accum, record_op


@dataclass(frozen=True)
class SdtwConfig:
    smoothing: float = 1.0
    band: int | None = None
    length_normalize: bool = True

    def __post_init__(self):
        if self.smoothing <= 0:
            raise ValueError(f"smoothing must be positive, got {self.smoothing}")
        if self.band is not None and self.band < 0:
            raise ValueError(f"band width must be non-negative, got {self.band}")


def soft_min(a, b, c, smoothing):
    """-g * log(exp(-a/g) + exp(-b/g) + exp(-c/g)), stably."""
    if smoothing <= 0:
        raise ValueError(f"smoothing must be positive, got {smoothing}")
    m = min(a, b, c)
    if not np.isfinite(m):
        return m
    s = (
        np.exp((m - a) / smoothing)
        + np.exp((m - b) / smoothing)
        + np.exp((m - c) / smoothing)
    )
    return float(m - smoothing * np.log(s))


def _softmin3(x1, x2, x3, smoothing):
    """Vectorized three-way soft-min; propagates +inf cleanly."""
    m = np.minimum(np.minimum(x1, x2), x3)
    with np.errstate(invalid="ignore"):
        s = (
            np.exp((m - x1) / smoothing)
            + np.exp((m - x2) / smoothing)
            + np.exp((m - x3) / smoothing)
        )
        out = m - smoothing * np.log(s)
    return np.where(np.isfinite(m), out, m)


def pairwise_sq_dists(a, b):
    """Squared Euclidean distance between every frame pair: [Ta, Tb]."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijc,ijc->ij", diff, diff)


def _validate_pair(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"expected [T, C] sequences, got {a.shape} and {b.shape}")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ShapeError("empty sequence")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"feature dims disagree: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def _dp_tables(d, smoothing, band=None):
    """Forward DP over batched cost matrices d [B, Ta, Tb]."""
    nb, ta, tb = d.shape
    r = np.full((nb, ta + 2, tb + 2), np.inf, dtype=d.dtype)
    r[:, 0, 0] = 0.0
    for i in range(1, ta + 1):
        j_lo, j_hi = 1, tb
        if band is not None:
            j_lo, j_hi = max(1, i - band), min(tb, i + band)
        for j in range(j_lo, j_hi + 1):
            r[:, i, j] = d[:, i - 1, j - 1] + _softmin3(
                r[:, i - 1, j], r[:, i, j - 1], r[:, i - 1, j - 1], smoothing
            )
    return r


def _alignment_weights(r, d, smoothing):
    """Reverse DP: expected alignment-mass per cell, E [B, Ta, Tb]."""
    nb, ta, tb = d.shape
    dp = np.zeros((nb, ta + 2, tb + 2), dtype=d.dtype)
    dp[:, 1:ta + 1, 1:tb + 1] = d
    rw = r.copy()
    rw[:, :, tb + 1] = -np.inf
    rw[:, ta + 1, :] = -np.inf
    rw[:, ta + 1, tb + 1] = r[:, ta, tb]
    e = np.zeros_like(dp)
    e[:, ta + 1, tb + 1] = 1.0
    with np.errstate(invalid="ignore", over="ignore"):
        for i in range(ta, 0, -1):
            for j in range(tb, 0, -1):
                w_down = np.exp((rw[:, i + 1, j] - rw[:, i, j] - dp[:, i + 1, j]) / smoothing)
                w_right = np.exp((rw[:, i, j + 1] - rw[:, i, j] - dp[:, i, j + 1]) / smoothing)
                w_diag = np.exp((rw[:, i + 1, j + 1] - rw[:, i, j] - dp[:, i + 1, j + 1]) / smoothing)
                acc = (
                    w_down * e[:, i + 1, j]
                    + w_right * e[:, i, j + 1]
                    + w_diag * e[:, i + 1, j + 1]
                )
                # Cells never reached (outside a band constraint) carry no mass.
                e[:, i, j] = np.where(np.isfinite(rw[:, i, j]), acc, 0.0)
    return e[:, 1:ta + 1, 1:tb + 1]


def sdtw_forward(a, b, cfg: SdtwConfig):
    """Alignment value of one pair; returns (value, table) for backward.

    The value is the raw accumulated cost r[Ta][Tb]; length normalization
    is applied on the loss path, not here.
    """
    a, b = _validate_pair(a, b)
    if cfg.band is not None and cfg.band < abs(a.shape[0] - b.shape[0]):
        raise ValueError(
            f"band {cfg.band} cannot connect lengths {a.shape[0]} and {b.shape[0]}"
        )
    d = pairwise_sq_dists(a, b)
    r = _dp_tables(d[None], cfg.smoothing, cfg.band)
    value = float(r[0, a.shape[0], b.shape[0]])
    return value, (r, d)


def sdtw_backward(table, a, b, cfg: SdtwConfig):
    """Gradient of the raw alignment value w.r.t. every frame of ``a``.

    ``b`` is treated as a constant. Raises if the table does not belong to
    this (a, b) pair.
    """
    a, b = _validate_pair(a, b)
    r, d = table
    d_now = pairwise_sq_dists(a, b)
    if d.shape != d_now.shape or not np.array_equal(d, d_now):
        raise ValueError("stale table: it was built from different sequences")
    e = _alignment_weights(r, d[None], cfg.smoothing)[0]
    return 2.0 * (e.sum(axis=1, keepdims=True) * a - e @ b)


def sdtw_value_and_grad(a, b, cfg: SdtwConfig):
    value, table = sdtw_forward(a, b, cfg)
    return value, sdtw_backward(table, a, b, cfg)


def _uniform_batch_value_and_grad(a, b, cfg: SdtwConfig):
    """Vectorized path for equal-shape pairs: a [B,Ta,C], b [B,Tb,C]."""
    diff = a[:, :, None, :] - b[:, None, :, :]
    d = np.einsum("bijc,bijc->bij", diff, diff)
    r = _dp_tables(d, cfg.smoothing, cfg.band)
    values = r[:, a.shape[1], b.shape[1]].copy()
    e = _alignment_weights(r, d, cfg.smoothing)
    grads = 2.0 * (e.sum(axis=2, keepdims=True) * a - e @ b)
    return values, grads


def sdtw_batched(a_seqs, b_seqs, cfg: SdtwConfig):
    """Per-pair values and gradients; pairs may have different lengths.

    Equal-shape batches take a vectorized path that is numerically
    identical to looping the single-pair routines.
    """
    if len(a_seqs) != len(b_seqs):
        raise ShapeError(f"batch sizes disagree: {len(a_seqs)} vs {len(b_seqs)}")
    a_list = [np.asarray(a) for a in a_seqs]
    b_list = [np.asarray(b) for b in b_seqs]
    uniform = (
        len(a_list) > 0
        and all(a.shape == a_list[0].shape for a in a_list)
        and all(b.shape == b_list[0].shape for b in b_list)
    )
    if uniform:
        for a, b in zip(a_list[:1], b_list[:1]):
            _validate_pair(a, b)
        values, grads = _uniform_batch_value_and_grad(
            np.stack(a_list), np.stack(b_list), cfg
        )
        return values, list(grads)
    values = np.empty(len(a_list), dtype=np.float64)
    grads = []
    for k, (a, b) in enumerate(zip(a_list, b_list)):
        v, g = sdtw_value_and_grad(a, b, cfg)
        values[k] = v
        grads.append(g)
    return values, grads


def sdtw_loss(current: Tensor, stored_seqs, cfg: SdtwConfig) -> Tensor:
    """Batch-mean alignment loss between live logits and stored sequences.

    ``current`` is a [B, Ta, C] tensor on the tape; ``stored_seqs`` holds B
    constant sequences that receive no gradient. Values (and gradients) are
    divided by (Ta + Tb) per pair when length normalization is enabled.
    """
    if current.data.ndim != 3:
        raise ShapeError(f"sdtw_loss: expected [B, Ta, C] logits, got {current.shape}")
    nb = current.data.shape[0]
    if nb == 0 or len(stored_seqs) != nb:
        raise ShapeError(
            f"sdtw_loss: batch mismatch: {nb} live vs {len(stored_seqs)} stored"
        )
    a_list = [current.data[k] for k in range(nb)]
    values, grads = sdtw_batched(a_list, stored_seqs, cfg)
    if cfg.length_normalize:
        for k in range(nb):
            scale = a_list[k].shape[0] + np.asarray(stored_seqs[k]).shape[0]
            values[k] = values[k] / scale
            grads[k] = grads[k] / scale
    mean_val = np.asarray(values.mean(), dtype=current.data.dtype)
    out, rec = record_op(mean_val, (current,), None)
    if rec:
        grad_stack = np.stack(grads).astype(current.data.dtype) / nb
        def backward():
            _accum(current, out.grad * grad_stack)
        out._backward = backward
    return out
