"""Interval embedding and short-range convolutional attention.

The time encoder lifts each consecutive-visit gap (a scalar) into the
N-dimensional feature space.  Those encoded gaps are interleaved between the
visit embeddings, and a per-feature kernel-3 / stride-2 convolution reads
each (previous visit, gap, current visit) triple, so window t sees exactly
the local context of visit t and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, ContractError, Node, ShapeMismatchError


@dataclass
class TimeEncoderParams:
    W_delta: Node  # N x 1
    b_delta: Node  # N x 1

    def named(self):
        yield "time_enc.W_delta", self.W_delta
        yield "time_enc.b_delta", self.b_delta


@dataclass
class ShortTermParams:
    kernels: Node  # N x 3, row j = the length-3 kernel of feature j
    bias: Node     # N x 1
    W_alpha: Node  # N x N
    b_alpha: Node  # N x 1

    def named(self):
        yield "short.kernels", self.kernels
        yield "short.bias", self.bias
        yield "short.W_alpha", self.W_alpha
        yield "short.b_alpha", self.b_alpha


def init_time_encoder(rng: np.random.Generator, n_features: int) -> TimeEncoderParams:
    a = np.sqrt(6.0 / (n_features + 1))
    return TimeEncoderParams(
        W_delta=ad.parameter(rng.uniform(-a, a, size=(n_features, 1))),
        b_delta=ad.parameter(np.zeros((n_features, 1))),
    )


def init_short_term(rng: np.random.Generator, n_features: int) -> ShortTermParams:
    a_k = np.sqrt(6.0 / 4)
    a_w = np.sqrt(6.0 / (2 * n_features))
    return ShortTermParams(
        kernels=ad.parameter(rng.uniform(-a_k, a_k, size=(n_features, 3))),
        bias=ad.parameter(np.zeros((n_features, 1))),
        W_alpha=ad.parameter(rng.uniform(-a_w, a_w, size=(n_features, n_features))),
        b_alpha=ad.parameter(np.zeros((n_features, 1))),
    )


def intervals(mu: np.ndarray) -> np.ndarray:
    """Consecutive gaps, length T-1.  Timestamps must be nondecreasing."""
    mu = np.asarray(mu, dtype=np.float64)
    d = np.diff(mu)
    if np.any(d < 0.0):
        raise ContractError("timestamps must be nondecreasing")
    return d


def encode_intervals(mu: np.ndarray, params: TimeEncoderParams) -> Node:
    """N x (T-1): column t-1 embeds the gap between visits t-1 and t."""
    d = intervals(mu)
    row = ad.constant(d.reshape(1, -1))
    return ad.add(ad.matmul(params.W_delta, row), params.b_delta)


def interleave(h: Node, delta_enc: Node) -> Node:
    """N x (2T+1) layout [0, dt_1, h_1, dt_2, h_2, ..., dt_T, h_T].

    dt_1 (no visit precedes visit 1) and the leading padded visit are zero
    columns; dt_t for t >= 2 comes from the encoded gaps.
    """
    n, t = h.shape
    if delta_enc.shape != (n, t - 1):
        raise ShapeMismatchError(
            f"interleave: h {h.shape} needs encoded gaps of shape {(n, t - 1)}, "
            f"got {delta_enc.shape}")
    zero_col = ad.constant(np.zeros((n, 1)))
    cols = [zero_col, zero_col]  # h_0 and dt_1
    cols.append(ad.slice_axis(h, 1, 0, 1))
    for t_idx in range(1, t):
        cols.append(ad.slice_axis(delta_enc, 1, t_idx - 1, t_idx))
        cols.append(ad.slice_axis(h, 1, t_idx, t_idx + 1))
    return ad.concat(cols, axis=1)


def deinterleave(h_prime: Node) -> Node:
    """Recover the visit columns from an interleaved matrix."""
    width = h_prime.shape[1]
    return ad.slice_axis(h_prime, 1, 2, width, 2)


def conv_features(h_prime: Node, params: ShortTermParams) -> Node:
    """Per-feature kernel-3 stride-2 convolution over the interleaved width.

    Window i (1-based) covers columns 2i-2 .. 2i, i.e. (h_{i-1}, dt_i, h_i);
    output is N x T with T = (width - 3) // 2 + 1.
    """
    width = h_prime.shape[1]
    t = (width - 3) // 2 + 1
    taps = []
    for c in range(3):
        window_cols = ad.slice_axis(h_prime, 1, c, c + 2 * (t - 1) + 1, 2)
        tap = ad.slice_axis(params.kernels, 1, c, c + 1)  # N x 1
        taps.append(ad.mul(window_cols, tap))
    z = ad.add(ad.add(ad.add(taps[0], taps[1]), taps[2]), params.bias)
    return ad.relu(z)


def short_term_forward(h_prime: Node, params: ShortTermParams,
                       cell_mask: np.ndarray | None = None) -> tuple[Node, Node]:
    """Returns (k_star, alpha).

    alpha normalizes over the feature axis per visit; cell_mask (N x T, True =
    observed) optionally forces imputed cells to zero attention weight.
    """
    k = conv_features(h_prime, params)
    logits = ad.add(ad.matmul(params.W_alpha, k), params.b_alpha)
    if cell_mask is not None:
        if cell_mask.shape != k.shape:
            raise ShapeMismatchError(
                f"cell_mask shape {cell_mask.shape} does not match features {k.shape}")
        bias = np.where(cell_mask, 0.0, NEG_INF)
        logits = ad.add(logits, ad.constant(bias))
    alpha = ad.softmax(logits, axis=0)
    k_star = ad.add(ad.mul(alpha, k), k)
    return k_star, alpha
