"""Multi-head self-attention over feature positions, plus FFN sub-layer.

The input is one journey matrix r (N features x T visits).  Attention runs
across the N feature rows: each feature's T-long time profile acts as the
token embedding, so queries/keys are d_K-dim projections of those profiles
and the attention maps (xi) are N x N.  Residual connections and post-norm
layer normalization (over the feature axis, per visit) follow each sub-layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, Node


@dataclass
class HeadParams:
    W_Q: Node  # d_K x T
    W_K: Node  # d_K x T
    W_V: Node  # T x T


@dataclass
class StackedAttentionParams:
    heads: list[HeadParams]
    W_o: Node       # N x m*N
    W_1: Node       # d_ff x T
    b_1: Node       # d_ff x 1
    W_2: Node       # T x d_ff
    b_2: Node       # T x 1
    ln1_gamma: Node  # N x 1
    ln1_beta: Node   # N x 1
    ln2_gamma: Node
    ln2_beta: Node

    def named(self):
        for m, h in enumerate(self.heads):
            yield f"stacked.head{m}.W_Q", h.W_Q
            yield f"stacked.head{m}.W_K", h.W_K
            yield f"stacked.head{m}.W_V", h.W_V
        for name in ("W_o", "W_1", "b_1", "W_2", "b_2",
                     "ln1_gamma", "ln1_beta", "ln2_gamma", "ln2_beta"):
            yield f"stacked.{name}", getattr(self, name)


def _xavier(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=(fan_out, fan_in))


def init_params(rng: np.random.Generator, n_features: int, t_len: int,
                n_heads: int, d_k: int, d_ff: int) -> StackedAttentionParams:
    heads = [HeadParams(W_Q=ad.parameter(_xavier(rng, d_k, t_len)),
                        W_K=ad.parameter(_xavier(rng, d_k, t_len)),
                        W_V=ad.parameter(_xavier(rng, t_len, t_len)))
             for _ in range(n_heads)]
    return StackedAttentionParams(
        heads=heads,
        W_o=ad.parameter(_xavier(rng, n_features, n_heads * n_features)),
        W_1=ad.parameter(_xavier(rng, d_ff, t_len)),
        b_1=ad.parameter(np.zeros((d_ff, 1))),
        W_2=ad.parameter(_xavier(rng, t_len, d_ff)),
        b_2=ad.parameter(np.zeros((t_len, 1))),
        ln1_gamma=ad.parameter(np.ones((n_features, 1))),
        ln1_beta=ad.parameter(np.zeros((n_features, 1))),
        ln2_gamma=ad.parameter(np.ones((n_features, 1))),
        ln2_beta=ad.parameter(np.zeros((n_features, 1))),
    )


def attention_logits(r: Node, head: HeadParams) -> Node:
    """Scaled dot-product logits, N x N: row i scores feature i against all keys."""
    d_k = head.W_Q.shape[0]
    q = ad.matmul(head.W_Q, ad.transpose(r))   # d_K x N
    k = ad.matmul(head.W_K, ad.transpose(r))   # d_K x N
    return ad.scalar_mul(ad.matmul(ad.transpose(q), k), 1.0 / np.sqrt(d_k))


def attention_weights(r: Node, head: HeadParams, key_mask: np.ndarray | None = None) -> Node:
    """Softmax over keys per query row; key_mask marks features whose key
    column is forced to zero weight (-inf logits)."""
    logits = attention_logits(r, head)
    if key_mask is not None:
        bias = np.where(key_mask, 0.0, NEG_INF)[np.newaxis, :]
        logits = ad.add(logits, ad.constant(np.broadcast_to(bias, logits.shape).copy()))
    return ad.softmax(logits, axis=1)


def head_output(r: Node, head: HeadParams, key_mask: np.ndarray | None = None) -> Node:
    xi = attention_weights(r, head, key_mask)
    v = ad.matmul(head.W_V, ad.transpose(r))   # T x N, column j = V_j
    return ad.matmul(xi, ad.transpose(v))      # N x T


def multi_head(r: Node, params: StackedAttentionParams,
               key_mask: np.ndarray | None = None) -> tuple[Node, list[Node]]:
    """Concatenated heads mixed by W_o; also returns the per-head xi maps."""
    xis = [attention_weights(r, h, key_mask) for h in params.heads]
    outs = []
    for h, xi in zip(params.heads, xis):
        v = ad.matmul(h.W_V, ad.transpose(r))
        outs.append(ad.matmul(xi, ad.transpose(v)))
    mixed = ad.matmul(params.W_o, ad.concat(outs, axis=0))
    return mixed, xis


def ffn(x: Node, params: StackedAttentionParams) -> Node:
    """Position-wise feed-forward: applied to each feature's T-long profile."""
    hidden = ad.relu(ad.add(ad.matmul(params.W_1, ad.transpose(x)), params.b_1))
    return ad.transpose(ad.add(ad.matmul(params.W_2, hidden), params.b_2))


def forward(r: Node, params: StackedAttentionParams,
            key_mask: np.ndarray | None = None) -> tuple[Node, list[Node]]:
    """Full block: post-norm residual attention then post-norm residual FFN.

    Returns (h, xi_per_head); h is N x T.
    """
    mha, xis = multi_head(r, params, key_mask)
    x = ad.layer_norm(ad.add(r, mha), params.ln1_gamma, params.ln1_beta, axis=0)
    h = ad.layer_norm(ad.add(x, ffn(x, params)), params.ln2_gamma, params.ln2_beta, axis=0)
    return h, xis
