"""Masked pairwise visit scoring and residual aggregation over full history.

Every (source i, target j) visit pair is scored by a two-layer network that
sees both visit embeddings, their raw time gap, and the static code vectors.
A strict forward mask (-inf unless i < j) makes each target a function of its
past only; a per-feature softmax over sources turns scores into the mixing
weights P, and the aggregate is added back to the visit embeddings.

Visit 1 has no past, so its aggregate is defined as zero (residual passes the
embedding through unchanged) rather than feeding softmax an all-masked slice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import NEG_INF, ContractError, Node

_ACTIVATIONS = {"tanh": ad.tanh, "sigmoid": ad.sigmoid}


@dataclass
class LongTermParams:
    W11: Node  # N x N
    W12: Node  # N x N
    W13: Node  # N x 1
    b1: Node   # N x 1
    W21: Node  # d_h x N
    W22: Node  # d_h x g_c
    W23: Node  # d_h x g_d
    b2: Node   # d_h x 1
    W31: Node  # N x d_h
    b3: Node   # N x 1
    activation: str = "tanh"

    def named(self):
        for name in ("W11", "W12", "W13", "b1", "W21", "W22", "W23", "b2", "W31", "b3"):
            yield f"long.{name}", getattr(self, name)


def init_params(rng: np.random.Generator, n_features: int, g_c: int, g_d: int,
                d_h: int, activation: str = "tanh") -> LongTermParams:
    def xavier(fan_out, fan_in):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-a, a, size=(fan_out, fan_in))

    return LongTermParams(
        W11=ad.parameter(xavier(n_features, n_features)),
        W12=ad.parameter(xavier(n_features, n_features)),
        W13=ad.parameter(xavier(n_features, 1)),
        b1=ad.parameter(np.zeros((n_features, 1))),
        W21=ad.parameter(xavier(d_h, n_features)),
        W22=ad.parameter(xavier(d_h, g_c)),
        W23=ad.parameter(xavier(d_h, g_d)),
        b2=ad.parameter(np.zeros((d_h, 1))),
        W31=ad.parameter(xavier(n_features, d_h)),
        b3=ad.parameter(np.zeros((n_features, 1))),
        activation=activation,
    )


def build_mask(t_len: int) -> np.ndarray:
    """T x T forward mask: 0 where source i precedes target j, else -inf."""
    if t_len < 1:
        raise ContractError("journey must contain at least one visit")
    mask = np.full((t_len, t_len), NEG_INF)
    mask[np.triu_indices(t_len, k=1)] = 0.0
    return mask


def pair_score(h_i: np.ndarray, h_j: np.ndarray, delta_ij: float,
               r_c: np.ndarray, r_d: np.ndarray, params: LongTermParams) -> np.ndarray:
    """Unmasked score vector (length N) for one visit pair, evaluated directly
    from the parameter values.  The caller adds the mask."""
    act = np.tanh if params.activation == "tanh" else lambda x: 1.0 / (1.0 + np.exp(-x))
    f1 = act(params.W11.value @ h_i + params.W12.value @ h_j
             + params.W13.value[:, 0] * delta_ij + params.b1.value[:, 0])
    f2 = act(params.W21.value @ f1 + params.W22.value @ r_c
             + params.W23.value @ r_d + params.b2.value[:, 0])
    return params.W31.value @ f2 + params.b3.value[:, 0]


def score_tensor(h: Node, mu: np.ndarray, r_c: np.ndarray, r_d: np.ndarray,
                 params: LongTermParams) -> Node:
    """All pairwise scores at once, shape N x T x T (feature, source, target)."""
    act = _ACTIVATIONS[params.activation]
    n, t = h.shape
    a = ad.matmul(params.W11, h)  # N x T, column i
    b = ad.matmul(params.W12, h)  # N x T, column j
    gaps = np.subtract.outer(-np.asarray(mu, dtype=float), -np.asarray(mu, dtype=float))
    # gaps[i, j] = mu[j] - mu[i]
    z1 = ad.add(ad.add(ad.reshape(a, (n, t, 1)), ad.reshape(b, (n, 1, t))),
                ad.add(ad.mul(ad.reshape(params.W13, (n, 1, 1)),
                              ad.constant(gaps[np.newaxis, :, :])),
                       ad.reshape(params.b1, (n, 1, 1))))
    f1 = act(z1)
    static = ad.add(ad.add(ad.matmul(params.W22, ad.constant(r_c.reshape(-1, 1))),
                           ad.matmul(params.W23, ad.constant(r_d.reshape(-1, 1)))),
                    params.b2)  # d_h x 1
    d_h = params.W21.shape[0]
    z2 = ad.add(ad.reshape(ad.matmul(params.W21, ad.reshape(f1, (n, t * t))),
                           (d_h, t, t)),
                ad.reshape(static, (d_h, 1, 1)))
    f2 = act(z2)
    scores = ad.add(ad.reshape(ad.matmul(params.W31, ad.reshape(f2, (d_h, t * t))),
                               (n, t, t)),
                    ad.reshape(params.b3, (n, 1, 1)))
    return scores


def forward(h: Node, mu: np.ndarray, r_c: np.ndarray, r_d: np.ndarray,
            params: LongTermParams) -> tuple[Node, Node]:
    """Returns (e_star N x T, P N x T x T).

    P[l, i, j] is the weight of source visit i for target j on feature l;
    targets with no unmasked source (j = 1) get an all-zero slice.
    """
    n, t = h.shape
    if t == 1:
        p_full = ad.constant(np.zeros((n, 1, 1)))
        return h, p_full
    scores = score_tensor(h, mu, r_c, r_d, params)
    masked = ad.add(scores, ad.constant(build_mask(t)[np.newaxis, :, :]))
    # Target 1 is entirely masked; normalize the remaining targets only.
    tail = ad.slice_axis(masked, axis=2, start=1, stop=t)
    p_tail = ad.softmax(tail, axis=1)
    p_full = ad.concat([ad.constant(np.zeros((n, t, 1))), p_tail], axis=2)
    e = ad.sum_axis(ad.mul(p_full, ad.reshape(h, (n, t, 1))), axis=1)
    e_star = ad.add(e, h)
    return e_star, p_full
