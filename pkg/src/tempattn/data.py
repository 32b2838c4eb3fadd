"""Journey file format, normalization, splitting, and the synthetic generator.

One journey per line as a JSON object:

    {"id": ..., "mu": [...], "r": [[...], ...], "r_c": [set bit indices],
     "r_d": [set bit indices], "label": 0/1, "obs_mask": [[n, t], ...]}

``r`` holds N rows of length T; ``obs_mask`` lists the imputed (feature,
visit) cells and may be omitted when everything was observed.  Floats are
emitted via repr, so a write/load round trip is bit-exact.

The synthetic task plants two rules whose XOR defines the label:
  * long rule  - feature 0 exceeds a threshold at a designated early visit
                 AND diagnosis bit 0 is set (codes only reach the long-range
                 attention path, so a short-range-only model cannot see it);
  * short rule - feature 1 jumps by more than a threshold between two
                 consecutive visits whose time gap is small.
Labels are recomputed from the emitted arrays, never stored hidden state.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class JourneyDataError(ValueError):
    """Malformed journey file or invariant violation."""


@dataclass
class PatientJourney:
    id: str
    r: np.ndarray          # N x T
    mu: np.ndarray         # T, nondecreasing
    r_c: np.ndarray        # g_c binary
    r_d: np.ndarray        # g_d binary
    label: int
    obs_mask: np.ndarray | None = None  # N x T bool, True = observed

    @property
    def n_features(self) -> int:
        return self.r.shape[0]

    @property
    def t_len(self) -> int:
        return self.r.shape[1]

    def validate(self):
        if self.r.ndim != 2 or self.r.shape[1] < 1:
            raise JourneyDataError(f"journey {self.id}: r must be N x T with T >= 1")
        if self.mu.shape != (self.r.shape[1],):
            raise JourneyDataError(f"journey {self.id}: mu length must equal T")
        if np.any(np.diff(self.mu) < 0):
            raise JourneyDataError(f"journey {self.id}: timestamps mu must be nondecreasing")
        if not np.isfinite(self.r).all():
            raise JourneyDataError(f"journey {self.id}: r contains non-finite values")
        for name, vec in (("r_c", self.r_c), ("r_d", self.r_d)):
            if not np.isin(vec, (0, 1)).all():
                raise JourneyDataError(f"journey {self.id}: {name} must be binary")
        if self.label not in (0, 1):
            raise JourneyDataError(f"journey {self.id}: label must be 0 or 1")
        if self.obs_mask is not None and self.obs_mask.shape != self.r.shape:
            raise JourneyDataError(f"journey {self.id}: obs_mask shape must match r")


def _journey_to_obj(j: PatientJourney) -> dict:
    obj = {
        "id": j.id,
        "mu": j.mu.tolist(),
        "r": [row.tolist() for row in j.r],
        "r_c": np.flatnonzero(j.r_c).tolist(),
        "r_d": np.flatnonzero(j.r_d).tolist(),
        "label": int(j.label),
        "g_c": int(j.r_c.size),
        "g_d": int(j.r_d.size),
    }
    if j.obs_mask is not None:
        imputed = np.argwhere(~j.obs_mask)
        obj["obs_mask"] = [[int(a), int(b)] for a, b in imputed]
    return obj


def _journey_from_obj(obj: dict, line_no: int) -> PatientJourney:
    try:
        r = np.array(obj["r"], dtype=np.float64)
        g_c, g_d = int(obj["g_c"]), int(obj["g_d"])
        r_c = np.zeros(g_c)
        r_c[obj["r_c"]] = 1.0
        r_d = np.zeros(g_d)
        r_d[obj["r_d"]] = 1.0
        mask = None
        if "obs_mask" in obj:
            mask = np.ones(r.shape, dtype=bool)
            for a, b in obj["obs_mask"]:
                mask[a, b] = False
        journey = PatientJourney(
            id=str(obj["id"]), r=r, mu=np.array(obj["mu"], dtype=np.float64),
            r_c=r_c, r_d=r_d, label=int(obj["label"]), obs_mask=mask)
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise JourneyDataError(f"line {line_no}: malformed journey record ({exc})") from exc
    journey.validate()
    return journey


def save_journeys(journeys: list[PatientJourney], path):
    with open(path, "w") as fh:
        for j in journeys:
            fh.write(json.dumps(_journey_to_obj(j)) + "\n")


def load_journeys(path) -> list[PatientJourney]:
    journeys = []
    seen: set[str] = set()
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JourneyDataError(f"line {line_no}: invalid JSON ({exc})") from exc
            j = _journey_from_obj(obj, line_no)
            if j.id in seen:
                raise JourneyDataError(f"line {line_no}: duplicate journey id {j.id!r}")
            seen.add(j.id)
            journeys.append(j)
    return journeys


@dataclass
class NormStats:
    mean: np.ndarray  # per feature
    std: np.ndarray   # per feature; 1.0 where the fitted variance was zero

    def save(self, path):
        with open(path, "w") as fh:
            json.dump({"mean": self.mean.tolist(), "std": self.std.tolist()}, fh)

    @classmethod
    def load(cls, path) -> "NormStats":
        with open(path) as fh:
            obj = json.load(fh)
        return cls(mean=np.array(obj["mean"]), std=np.array(obj["std"]))


def fit_normalization(journeys: list[PatientJourney]) -> NormStats:
    """Per-feature mean/std over every cell of the fitting set (train only)."""
    if not journeys:
        raise JourneyDataError("cannot fit normalization on an empty set")
    cells = np.concatenate([j.r for j in journeys], axis=1)
    mean = cells.mean(axis=1)
    std = cells.std(axis=1)
    zero = std == 0.0
    if zero.any():
        logger.warning("zero-variance features %s: centering only",
                       np.flatnonzero(zero).tolist())
        std = np.where(zero, 1.0, std)
    return NormStats(mean=mean, std=std)


def apply_normalization(journeys: list[PatientJourney], stats: NormStats) -> list[PatientJourney]:
    out = []
    for j in journeys:
        r = (j.r - stats.mean[:, np.newaxis]) / stats.std[:, np.newaxis]
        out.append(PatientJourney(id=j.id, r=r, mu=j.mu, r_c=j.r_c, r_d=j.r_d,
                                  label=j.label, obs_mask=j.obs_mask))
    return out


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[str, ...]
    valid: tuple[str, ...]
    test: tuple[str, ...]
    seed: int


def split(journeys: list[PatientJourney], seed: int) -> DatasetSplit:
    """Deterministic 75:10:15 shuffle split by journey id."""
    if len(journeys) < 10:
        raise JourneyDataError(f"need at least 10 journeys to split, got {len(journeys)}")
    ids = [j.id for j in journeys]
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ids))
    n = len(ids)
    n_train = round(0.75 * n)
    n_valid = round(0.10 * n)
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        valid=tuple(shuffled[n_train:n_train + n_valid]),
        test=tuple(shuffled[n_train + n_valid:]),
        seed=seed,
    )


def class_weights(train_journeys: list[PatientJourney]):
    """Inverse-frequency weights normalized to sum to 2."""
    from .coupled import ClassWeights

    labels = np.array([j.label for j in train_journeys])
    n_pos = int(labels.sum())
    n_neg = int(labels.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise JourneyDataError("class weights need both classes in the training set")
    inv = np.array([labels.size / n_neg, labels.size / n_pos])
    inv *= 2.0 / inv.sum()
    return ClassWeights(w_neg=float(inv[0]), w_pos=float(inv[1]))


@dataclass
class SyntheticConfig:
    n_journeys: int = 2000
    n_features: int = 8
    t_min: int = 4
    t_max: int = 16
    g_c: int = 8
    g_d: int = 8
    positive_rate: float = 0.2
    noise_scale: float = 0.1
    long_threshold: float = 2.0    # feature-0 level at the early visit
    short_threshold: float = 2.0   # feature-1 consecutive jump size
    short_gap: float = 1.0         # max time gap for the short rule
    early_window: int = 3          # long rule looks at visits 1..early_window
    decoy_rate: float = 0.25       # chance of a near-miss pattern per rule
    missing_rate: float = 0.05     # fraction of non-signal cells imputed
    fallback_value: float = 0.0    # imputation value when nothing precedes

    def validate(self):
        if self.n_journeys < 1 or self.n_features < 2:
            raise JourneyDataError("need at least 1 journey and 2 features")
        if not (1 <= self.t_min <= self.t_max):
            raise JourneyDataError("need 1 <= t_min <= t_max")
        if not (0.0 < self.positive_rate < 1.0):
            raise JourneyDataError("positive_rate must be in (0, 1)")
        if self.g_c < 1 or self.g_d < 1:
            raise JourneyDataError("g_c and g_d must be positive")
        if self.noise_scale < 0.0 or not (0.0 <= self.missing_rate < 1.0):
            raise JourneyDataError("invalid noise or missing rate")
        if not (0.0 <= self.decoy_rate < 1.0):
            raise JourneyDataError("decoy_rate must be in [0, 1)")


def _long_rule(cfg: SyntheticConfig, r: np.ndarray, r_c: np.ndarray) -> bool:
    window = r[0, :min(cfg.early_window, r.shape[1])]
    return bool(window.max() > cfg.long_threshold and r_c[0] == 1.0)


def _short_rule(cfg: SyntheticConfig, r: np.ndarray, mu: np.ndarray) -> bool:
    if r.shape[1] < 2:
        return False
    jumps = np.diff(r[1])
    gaps = np.diff(mu)
    return bool(np.any((jumps > cfg.short_threshold) & (gaps < cfg.short_gap)))


def evaluate_label(cfg: SyntheticConfig, r: np.ndarray, mu: np.ndarray,
                   r_c: np.ndarray) -> int:
    """The planted rule: either the long-range or the short-range pattern."""
    return int(_long_rule(cfg, r, r_c) or _short_rule(cfg, r, mu))


def generate_synthetic(cfg: SyntheticConfig, seed: int) -> list[PatientJourney]:
    cfg.validate()
    rng = np.random.default_rng(seed)
    # Solve 2p - p^2 = positive_rate with equal, independent rule rates.
    if cfg.positive_rate > 0.5:
        raise JourneyDataError("positive_rate above 0.5 is not supported")
    p_rule = 1.0 - np.sqrt(1.0 - cfg.positive_rate)
    # Background code bits come from a small prototype pool, so the static
    # vectors cluster instead of uniquely identifying journeys.
    n_protos = 8
    proto_c = (rng.random((n_protos, cfg.g_c)) < 0.15).astype(np.float64)
    proto_d = (rng.random((n_protos, cfg.g_d)) < 0.15).astype(np.float64)
    journeys = []
    for idx in range(cfg.n_journeys):
        t = int(rng.integers(cfg.t_min, cfg.t_max + 1))
        mu = np.cumsum(rng.gamma(shape=2.0, scale=1.5, size=t))
        mu -= mu[0]
        r = rng.standard_normal((cfg.n_features, t)) * 0.5

        r_c = proto_c[int(rng.integers(0, n_protos))].copy()
        r_d = proto_d[int(rng.integers(0, n_protos))].copy()
        r_c[0] = float(rng.random() < 0.5)

        if rng.random() < p_rule:
            # Plant the long pattern: a spike on feature 0 at an early visit
            # plus the diagnosis bit.
            early = int(rng.integers(0, min(cfg.early_window, t)))
            r[0, early] = cfg.long_threshold + 1.0 + rng.random()
            r_c[0] = 1.0
        elif rng.random() < cfg.decoy_rate:
            # Decoy: the same spike without the diagnosis bit, so the spike
            # alone does not determine the label.
            early = int(rng.integers(0, min(cfg.early_window, t)))
            r[0, early] = cfg.long_threshold + 1.0 + rng.random()
            r_c[0] = 0.0
        if t >= 2 and rng.random() < p_rule:
            # Plant the short pattern: a sharp consecutive jump on feature 1
            # inside a small time gap.
            pos = int(rng.integers(1, t))
            # Close the gap before `pos` to half the allowed width.
            mu[pos:] -= mu[pos] - (mu[pos - 1] + 0.5 * cfg.short_gap)
            r[1, pos] = r[1, pos - 1] + cfg.short_threshold + 1.0 + rng.random()
        elif t >= 2 and rng.random() < cfg.decoy_rate:
            # Decoy: the same jump across a wide gap, so the jump alone does
            # not determine the label either.
            pos = int(rng.integers(1, t))
            mu[pos:] += cfg.short_gap * (2.0 + rng.random()) - (mu[pos] - mu[pos - 1])
            r[1, pos] = r[1, pos - 1] + cfg.short_threshold + 1.0 + rng.random()

        r += rng.standard_normal(r.shape) * cfg.noise_scale

        obs_mask = np.ones(r.shape, dtype=bool)
        candidates = np.argwhere(np.ones(r.shape, dtype=bool))
        candidates = candidates[candidates[:, 0] >= 2]  # keep signal rows observed
        n_miss = int(cfg.missing_rate * len(candidates))
        if n_miss > 0:
            chosen = candidates[rng.choice(len(candidates), size=n_miss, replace=False)]
            chosen = chosen[np.lexsort((chosen[:, 1], chosen[:, 0]))]  # LOCF chains left-to-right
            for a, b in chosen:
                obs_mask[a, b] = False
                r[a, b] = r[a, b - 1] if b > 0 else cfg.fallback_value  # carry forward

        label = evaluate_label(cfg, r, mu, r_c)
        journeys.append(PatientJourney(
            id=f"synth-{seed}-{idx:05d}", r=r, mu=mu, r_c=r_c, r_d=r_d,
            label=label, obs_mask=obs_mask))
    return journeys
