"""Model assembly: configuration, parameter bundle, the end-to-end forward
pass with ablation wiring, and checkpoint serialization.

Journeys shorter than t_max are zero-padded on the right (timestamps repeat
the last value, so padded gaps are zero); padded visits never receive pooling
weight.  Ablations rewire rather than no-op: without the stacked block the
raw journey matrix feeds the temporal modules, without one temporal path the
fusion sees the surviving representation twice, and without the pooling
attention the fused columns are averaged uniformly over the real visits.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import coupled, longterm, stacked, temporal
from .autodiff import ContractError, Node
from .data import PatientJourney

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    n_features: int = 8
    t_max: int = 16
    n_heads: int = 2
    d_k: int = 8
    d_ff: int = 32
    d_h: int = 16
    d_u: int = 32
    g_c: int = 8
    g_d: int = 8
    disable_stacked: bool = False   # variant "alpha"
    disable_short: bool = False     # variant "beta"
    disable_long: bool = False      # variant "gamma"
    disable_coupled: bool = False   # variant "delta"
    seed: int = 0

    def validate(self):
        for name in ("n_features", "t_max", "n_heads", "d_k", "d_ff",
                     "d_h", "d_u", "g_c", "g_d"):
            if getattr(self, name) < 1:
                raise ContractError(f"config field {name} must be >= 1")
        if self.disable_short and self.disable_long:
            raise ContractError("at least one temporal path must stay enabled")


@dataclass
class ModelParams:
    config: ModelConfig
    stacked: stacked.StackedAttentionParams | None
    time_enc: temporal.TimeEncoderParams | None
    short: temporal.ShortTermParams | None
    long: longterm.LongTermParams | None
    coupled: coupled.CoupledParams

    def named(self):
        if self.stacked is not None:
            yield from self.stacked.named()
        if self.time_enc is not None:
            yield from self.time_enc.named()
        if self.short is not None:
            yield from self.short.named()
        if self.long is not None:
            yield from self.long.named()
        for name, node in self.coupled.named():
            if node.requires_grad:
                yield name, node

    def as_dict(self) -> dict[str, Node]:
        return dict(self.named())

    def zero_grad(self):
        for _, node in self.named():
            node.zero_grad()


@dataclass
class AttentionBundle:
    xi: list[np.ndarray]       # per head, N x N
    alpha: np.ndarray | None   # N x T
    P: np.ndarray | None       # N x T x T
    beta: np.ndarray | None    # d_u x T


def assemble_model(cfg: ModelConfig) -> ModelParams:
    """Initialize every enabled module's parameters; deterministic in cfg.seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, t = cfg.n_features, cfg.t_max
    stacked_p = None if cfg.disable_stacked else stacked.init_params(
        rng, n, t, cfg.n_heads, cfg.d_k, cfg.d_ff)
    time_p = None if cfg.disable_short else temporal.init_time_encoder(rng, n)
    short_p = None if cfg.disable_short else temporal.init_short_term(rng, n)
    long_p = None if cfg.disable_long else longterm.init_params(
        rng, n, cfg.g_c, cfg.g_d, cfg.d_h)
    coupled_p = coupled.init_params(rng, n, t, cfg.d_u,
                                    with_pooling=not cfg.disable_coupled)
    return ModelParams(config=cfg, stacked=stacked_p, time_enc=time_p,
                       short=short_p, long=long_p, coupled=coupled_p)


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form count of learnable scalars for a config."""
    n, t = cfg.n_features, cfg.t_max
    total = 0
    if not cfg.disable_stacked:
        total += cfg.n_heads * (2 * cfg.d_k * t + t * t)      # per-head projections
        total += n * cfg.n_heads * n                          # W_o
        total += cfg.d_ff * t + cfg.d_ff + t * cfg.d_ff + t   # FFN
        total += 4 * n                                        # two affine pairs
    if not cfg.disable_short:
        total += 2 * n                                        # time encoder
        total += 3 * n + n + n * n + n
    if not cfg.disable_long:
        total += n * n * 2 + n + n
        total += cfg.d_h * (n + cfg.g_c + cfg.g_d) + cfg.d_h
        total += n * cfg.d_h + n
    total += cfg.d_u * 2 * n + cfg.d_u                        # fusion
    if not cfg.disable_coupled:
        total += t * t + t                                    # pooling attention
    total += 2 * cfg.d_u + 2                                  # classifier
    return total


def pad_journey(j: PatientJourney, t_max: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Zero-pad r to N x t_max and extend mu with repeats of its last value."""
    t = j.t_len
    if t > t_max:
        raise ContractError(f"journey {j.id}: T={t} exceeds model t_max={t_max}")
    r = np.zeros((j.n_features, t_max))
    r[:, :t] = j.r
    mu = np.full(t_max, j.mu[-1])
    mu[:t] = j.mu
    return r, mu, t


def forward(params: ModelParams, journey: PatientJourney,
            apply_obs_mask: bool = False,
            pooling_override: str | None = None) -> tuple[Node, AttentionBundle]:
    """Score one journey; returns (y_hat Node of shape (2,), attention maps).

    apply_obs_mask suppresses imputed cells in the stacked and short-term
    attention (interpretability export only, never during training).
    pooling_override is a test hook: "last" pools the final real visit only.
    """
    cfg = params.config
    if journey.n_features != cfg.n_features:
        raise ContractError(
            f"journey {journey.id}: N={journey.n_features} != config {cfg.n_features}")
    r_np, mu, t_real = pad_journey(journey, cfg.t_max)
    r = ad.constant(r_np)

    key_mask = None
    cell_mask = None
    if apply_obs_mask and journey.obs_mask is not None:
        padded_mask = np.zeros(r_np.shape, dtype=bool)
        padded_mask[:, :t_real] = journey.obs_mask
        # xi has no time axis: mask a feature's key column only when the
        # feature was imputed at every real visit.
        key_mask = journey.obs_mask.any(axis=1)
        if not key_mask.any():
            raise ContractError(f"journey {journey.id}: every feature fully imputed")
        if not journey.obs_mask.any(axis=0).all():
            raise ContractError(f"journey {journey.id}: a visit has no observed feature")
        padded_mask[:, t_real:] = True  # padding carries no -inf logits
        cell_mask = padded_mask

    xi_values: list[np.ndarray] = []
    if params.stacked is not None:
        h, xis = stacked.forward(r, params.stacked, key_mask=key_mask)
        xi_values = [x.value for x in xis]
    else:
        h = r

    alpha_value = None
    k_star = None
    if params.short is not None:
        delta_enc = temporal.encode_intervals(mu, params.time_enc)
        h_prime = temporal.interleave(h, delta_enc)
        k_star, alpha = temporal.short_term_forward(h_prime, params.short,
                                                    cell_mask=cell_mask)
        alpha_value = alpha.value

    p_value = None
    e_star = None
    if params.long is not None:
        e_star, p_node = longterm.forward(h, mu, journey.r_c, journey.r_d, params.long)
        p_value = p_node.value

    if k_star is None:
        first, second = e_star, e_star
    elif e_star is None:
        first, second = k_star, k_star
    else:
        first, second = k_star, e_star
    u = coupled.couple(first, second, params.coupled)

    beta_value = None
    if pooling_override == "last":
        u_star = coupled.last_pool(u, t_real)
    elif cfg.disable_coupled:
        u_star = coupled.mean_pool(u, t_real)
    else:
        u_star, beta = coupled.pool(u, params.coupled, valid_len=t_real)
        beta_value = beta.value

    y_hat = coupled.predict(u_star, params.coupled)
    bundle = AttentionBundle(xi=xi_values, alpha=alpha_value, P=p_value,
                             beta=beta_value)
    return y_hat, bundle


def journey_loss(params: ModelParams, journey: PatientJourney,
                 weights: coupled.ClassWeights) -> Node:
    y_hat, _ = forward(params, journey)
    return coupled.nll_loss(y_hat, journey.label, weights)


def positive_score(params: ModelParams, journey: PatientJourney) -> float:
    y_hat, _ = forward(params, journey)
    return float(y_hat.value[1])


def save_checkpoint(params: ModelParams, path):
    obj = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "config": asdict(params.config),
        "params": {name: {"shape": list(node.shape), "data": node.value.ravel().tolist()}
                   for name, node in params.named()},
    }
    with open(path, "w") as fh:
        json.dump(obj, fh)


def load_checkpoint(path) -> ModelParams:
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ContractError(f"unsupported checkpoint format: {obj.get('format_version')}")
    cfg = ModelConfig(**obj["config"])
    params = assemble_model(cfg)
    stored = obj["params"]
    for name, node in params.named():
        if name not in stored:
            raise ContractError(f"checkpoint missing parameter {name}")
        entry = stored[name]
        node.value = np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
    return params
