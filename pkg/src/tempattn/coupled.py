"""Fusion of the short- and long-range representations, pooling over time,
and the weighted classification head.

The per-visit fusion concatenates the two N-vectors and maps them through a
ReLU layer; pooling attends over the time axis with a full d_u x T weight
pattern (each fused dimension gets its own distribution over visits).  Padded
visit columns are excluded from pooling with -inf logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, ContractError, Node

PROB_EPS = 1e-12


@dataclass
class CoupledParams:
    W_u: Node     # d_u x 2N
    b_u: Node     # d_u x 1
    W_beta: Node  # T x T
    b_beta: Node  # 1 x T
    W_y: Node     # 2 x d_u
    b_y: Node     # 2 x 1

    def named(self):
        for name in ("W_u", "b_u", "W_beta", "b_beta", "W_y", "b_y"):
            yield f"coupled.{name}", getattr(self, name)


@dataclass(frozen=True)
class ClassWeights:
    w_neg: float
    w_pos: float

    def __post_init__(self):
        if self.w_neg <= 0.0 or self.w_pos <= 0.0:
            raise ContractError("class weights must be positive")


def init_params(rng: np.random.Generator, n_features: int, t_len: int,
                d_u: int, with_pooling: bool = True) -> CoupledParams:
    def xavier(fan_out, fan_in):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_out, fan_in))

    if with_pooling:
        w_beta = ad.parameter(xavier(t_len, t_len))
        b_beta = ad.parameter(np.zeros((1, t_len)))
    else:
        w_beta = ad.constant(np.zeros((t_len, t_len)))
        b_beta = ad.constant(np.zeros((1, t_len)))
    return CoupledParams(
        W_u=ad.parameter(xavier(d_u, 2 * n_features)),
        b_u=ad.parameter(np.zeros((d_u, 1))),
        W_beta=w_beta,
        b_beta=b_beta,
        W_y=ad.parameter(xavier(2, d_u)),
        b_y=ad.parameter(np.zeros((2, 1))),
    )


def couple(k_star: Node, e_star: Node, params: CoupledParams) -> Node:
    """Column t = ReLU(W_u . [k*_t ; e*_t] + b_u); d_u x T."""
    if k_star.shape != e_star.shape:
        raise ad.ShapeMismatchError(
            f"couple: shapes {k_star.shape} and {e_star.shape} differ")
    stacked_cols = ad.concat([k_star, e_star], axis=0)  # 2N x T
    return ad.relu(ad.add(ad.matmul(params.W_u, stacked_cols), params.b_u))


def pool(u: Node, params: CoupledParams,
         valid_len: int | None = None) -> tuple[Node, Node]:
    """Attention pooling over time: beta = softmax(u . W_beta + b_beta) per
    row, u* = sum_t beta .* u.  Columns at index >= valid_len are padding and
    receive exactly zero weight."""
    t = u.shape[1]
    logits = ad.add(ad.matmul(u, params.W_beta), params.b_beta)
    if valid_len is not None and valid_len < t:
        if valid_len < 1:
            raise ContractError("pool: need at least one valid visit")
        pad_bias = np.zeros((1, t))
        pad_bias[0, valid_len:] = NEG_INF
        logits = ad.add(logits, ad.constant(pad_bias))
    beta = ad.softmax(logits, axis=1)
    u_star = ad.sum_axis(ad.mul(beta, u), axis=1)  # d_u
    return u_star, beta


def mean_pool(u: Node, valid_len: int) -> Node:
    """Uniform pooling over the real (unpadded) visits."""
    head = ad.slice_axis(u, 1, 0, valid_len)
    return ad.scalar_mul(ad.sum_axis(head, axis=1), 1.0 / valid_len)


def last_pool(u: Node, valid_len: int) -> Node:
    """Test hook: take the last real visit's fused vector."""
    col = ad.slice_axis(u, 1, valid_len - 1, valid_len)
    return ad.reshape(col, (u.shape[0],))


def predict(u_star: Node, params: CoupledParams) -> Node:
    """Two-class probabilities [p(y=0), p(y=1)]."""
    logits = ad.add(ad.matmul(params.W_y, ad.reshape(u_star, (u_star.shape[0], 1))),
                    params.b_y)
    return ad.reshape(ad.softmax(logits, axis=0), (2,))


def nll_loss(y_hat: Node, label: int, weights: ClassWeights) -> Node:
    """Per-sample weighted negative log likelihood of the true class."""
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label!r}")
    p = ad.slice_axis(y_hat, 0, label, label + 1)
    w = weights.w_pos if label == 1 else weights.w_neg
    return ad.scalar_mul(ad.sum_axis(ad.log(ad.clip(p, PROB_EPS, 1.0 - PROB_EPS))), -w)


def batch_loss(per_sample: list[Node]) -> Node:
    if not per_sample:
        raise ContractError("batch_loss: empty batch")
    total = per_sample[0]
    for term in per_sample[1:]:
        total = ad.add(total, term)
    return ad.scalar_mul(total, 1.0 / len(per_sample))
