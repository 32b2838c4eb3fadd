"""Training loop, Adam optimizer, evaluation, and attention-map export."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import metrics, model
from .autodiff import ContractError
from .coupled import ClassWeights, batch_loss, nll_loss
from .data import PatientJourney
from .model import ModelParams

logger = logging.getLogger(__name__)


class NumericalAbort(RuntimeError):
    """Training hit a non-finite loss; carries diagnostics."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 300
    batch_size: int = 32
    patience: int = 20      # early stop on validation AUPRC
    repeats: int = 10       # seed-averaged reporting
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def validate(self):
        if (self.learning_rate < 0.0 or self.epochs < 1 or self.batch_size < 1
                or self.patience < 1 or self.repeats < 1):
            raise ContractError("train config fields must be positive")


class Adam:
    def __init__(self, params: dict, cfg: TrainConfig):
        self.params = params
        self.cfg = cfg
        self.step_count = 0
        self.m = {k: np.zeros_like(v.value) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.value) for k, v in params.items()}

    def step(self):
        self.step_count += 1
        b1, b2 = self.cfg.adam_beta1, self.cfg.adam_beta2
        lr, eps = self.cfg.learning_rate, self.cfg.adam_eps
        for key, node in self.params.items():
            g = node.grad
            if g is None:
                continue
            self.m[key] = b1 * self.m[key] + (1 - b1) * g
            self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
            m_hat = self.m[key] / (1 - b1 ** self.step_count)
            v_hat = self.v[key] / (1 - b2 ** self.step_count)
            node.value = node.value - lr * m_hat / (np.sqrt(v_hat) + eps)


def snapshot(params: ModelParams) -> dict[str, np.ndarray]:
    return {name: node.value.copy() for name, node in params.named()}


def restore(params: ModelParams, values: dict[str, np.ndarray]):
    for name, node in params.named():
        node.value = values[name].copy()


def score_journeys(params: ModelParams, journeys: list[PatientJourney]) -> metrics.ScoredSet:
    ordered = sorted(journeys, key=lambda j: j.id)
    scores = [model.positive_score(params, j) for j in ordered]
    labels = [j.label for j in ordered]
    return metrics.ScoredSet.from_lists(scores, labels)


def evaluate(params: ModelParams, journeys: list[PatientJourney], seed: int) -> dict:
    if not journeys:
        raise ContractError("evaluate: empty split")
    return metrics.report(score_journeys(params, journeys), seed=seed)


def train(params: ModelParams, train_set: list[PatientJourney],
          valid_set: list[PatientJourney], weights: ClassWeights,
          tcfg: TrainConfig) -> tuple[ModelParams, list[dict]]:
    """Minibatch Adam on the weighted cross-entropy; retains the parameters
    with the best validation AUPRC.  Returns (params, per-epoch history)."""
    tcfg.validate()
    opt = Adam(params.as_dict(), tcfg)
    rng = np.random.default_rng(tcfg.seed)
    history: list[dict] = []
    best_auprc = -np.inf
    best_values = snapshot(params)
    stale = 0

    for epoch in range(tcfg.epochs):
        order = rng.permutation(len(train_set))
        epoch_loss = 0.0
        for start in range(0, len(order), tcfg.batch_size):
            batch = [train_set[i] for i in order[start:start + tcfg.batch_size]]
            params.zero_grad()
            terms = [model.journey_loss(params, j, weights) for j in batch]
            loss = batch_loss(terms)
            value = float(loss.value)
            if not np.isfinite(value):
                norms = {name: float(np.linalg.norm(node.value))
                         for name, node in params.named()}
                raise NumericalAbort(
                    f"non-finite loss at epoch {epoch}, batch {start // tcfg.batch_size}; "
                    f"parameter norms: {norms}")
            loss.backward()
            opt.step()
            epoch_loss += value * len(batch)
        epoch_loss /= len(train_set)

        record = {"epoch": epoch, "train_loss": epoch_loss}
        if valid_set:
            scored = score_journeys(params, valid_set)
            record["valid_auroc"] = metrics.auroc(scored)
            record["valid_auprc"] = metrics.auprc(scored)
            if record["valid_auprc"] > best_auprc:
                best_auprc = record["valid_auprc"]
                best_values = snapshot(params)
                stale = 0
            else:
                stale += 1
        history.append(record)
        logger.info("epoch %d: %s", epoch, record)
        if valid_set and stale >= tcfg.patience:
            break

    if valid_set:
        restore(params, best_values)
    return params, history


def export_attention(params: ModelParams, journey: PatientJourney, out_dir,
                     apply_obs_mask: bool = True) -> list[str]:
    """Write xi (per head), alpha, P (per target visit), beta as CSV.

    Returns the written file names: m head maps + alpha + T visit slices of P
    + beta.  Maps are cropped to the journey's real length.
    """
    _, bundle = model.forward(params, journey,
                              apply_obs_mask=apply_obs_mask and journey.obs_mask is not None)
    t = journey.t_len
    n = journey.n_features
    os.makedirs(out_dir, exist_ok=True)
    feature_names = [f"f{i}" for i in range(n)]
    visit_names = [f"v{j + 1}" for j in range(t)]
    written = []

    def write(name, header, rows, row_labels):
        path = os.path.join(out_dir, name)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([""] + header)
            for label, row in zip(row_labels, rows):
                writer.writerow([label] + [repr(float(x)) for x in row])
        written.append(name)

    for m, xi in enumerate(bundle.xi):
        write(f"xi_head{m}.csv", feature_names, xi, feature_names)
    if bundle.alpha is not None:
        write("alpha.csv", visit_names, bundle.alpha[:, :t], feature_names)
    if bundle.P is not None:
        for j in range(t):
            write(f"p_visit{j + 1}.csv", visit_names, bundle.P[:, :t, j], feature_names)
    if bundle.beta is not None:
        d_u = bundle.beta.shape[0]
        write("beta.csv", visit_names, bundle.beta[:, :t],
              [f"u{i}" for i in range(d_u)])
    return written
