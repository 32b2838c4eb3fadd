"""Command line entry point.

Subcommands: gen-data, train, eval, export-attention, ablate.  Every command
takes --config (a JSON file), an optional --seed override, and --out, the only
directory the command writes to.  Exit codes: 0 success, 1 usage error, 2 data
or invariant error, 3 numerical abort.

Config file sections (all optional, defaults apply):
  "model":     ModelConfig fields
  "train":     TrainConfig fields
  "synthetic": synthetic generator fields
  "data":      path to a journeys JSONL file (train / eval / export-attention)
  "checkpoint": path to a saved model (eval / export-attention)
  "journey_id": which journey to export (export-attention; default first)
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import data, metrics, model, train as training
from .autodiff import ContractError, DegenerateSliceError
from .data import JourneyDataError, SyntheticConfig
from .metrics import MetricError
from .model import ModelConfig
from .train import NumericalAbort, TrainConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_dataclass(cls, section: dict, label: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(section) - names
    if unknown:
        raise UsageError(f"unknown {label} config keys: {sorted(unknown)}")
    return cls(**section)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}")
    if not isinstance(obj, dict):
        raise UsageError("config file must hold a JSON object")
    return obj


def _seeded(section: dict, seed_override: int | None) -> dict:
    if seed_override is not None:
        section = dict(section, seed=seed_override)
    return section


def _write_json(out_dir: str, name: str, obj) -> str:
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _load_dataset(cfg: dict):
    path = cfg.get("data")
    if not path:
        raise UsageError('config must set "data" to a journeys JSONL path')
    return data.load_journeys(path)


@dataclasses.dataclass
class Splits:
    train: list
    valid: list
    test: list


def _prepare_splits(journeys, seed: int):
    by_id = {j.id: j for j in journeys}
    split_ids = data.split(journeys, seed=seed)
    stats = data.fit_normalization([by_id[i] for i in split_ids.train])

    def take(ids):
        return data.apply_normalization([by_id[i] for i in ids], stats)

    return Splits(train=take(split_ids.train), valid=take(split_ids.valid),
                  test=take(split_ids.test)), stats


def _train_once(mcfg: ModelConfig, tcfg: TrainConfig, splits):
    params = model.assemble_model(mcfg)
    weights = data.class_weights(splits.train)
    params, history = training.train(params, splits.train, splits.valid,
                                     weights, tcfg)
    return params, history


def cmd_gen_data(cfg: dict, seed: int | None, out_dir: str) -> int:
    scfg = _build_dataclass(SyntheticConfig, cfg.get("synthetic", {}), "synthetic")
    journeys = data.generate_synthetic(scfg, seed=seed if seed is not None else 0)
    path = os.path.join(out_dir, "journeys.jsonl")
    data.save_journeys(journeys, path)
    n_pos = sum(j.label for j in journeys)
    print(f"wrote {len(journeys)} journeys ({n_pos} positive) to {path}")
    return EXIT_OK


def cmd_train(cfg: dict, seed: int | None, out_dir: str) -> int:
    mcfg = _build_dataclass(ModelConfig, _seeded(cfg.get("model", {}), seed), "model")
    tcfg = _build_dataclass(TrainConfig, _seeded(cfg.get("train", {}), seed), "train")
    journeys = _load_dataset(cfg)
    splits, stats = _prepare_splits(journeys, seed=tcfg.seed)
    params, history = _train_once(mcfg, tcfg, splits)
    model.save_checkpoint(params, os.path.join(out_dir, "model.ckpt"))
    stats.save(os.path.join(out_dir, "norm_stats.json"))
    _write_json(out_dir, "history.json", history)
    report = training.evaluate(params, splits.test, seed=tcfg.seed)
    _write_json(out_dir, "report.json", report)
    print(metrics.format_report(report))
    return EXIT_OK


def cmd_eval(cfg: dict, seed: int | None, out_dir: str) -> int:
    ckpt = cfg.get("checkpoint")
    if not ckpt:
        raise UsageError('config must set "checkpoint" for eval')
    params = model.load_checkpoint(ckpt)
    journeys = _load_dataset(cfg)
    norm_path = cfg.get("norm_stats")
    if norm_path:
        journeys = data.apply_normalization(journeys, data.NormStats.load(norm_path))
    report = training.evaluate(params, journeys,
                               seed=seed if seed is not None else 0)
    _write_json(out_dir, "report.json", report)
    print(metrics.format_report(report))
    return EXIT_OK


def cmd_export_attention(cfg: dict, seed: int | None, out_dir: str) -> int:
    ckpt = cfg.get("checkpoint")
    if not ckpt:
        raise UsageError('config must set "checkpoint" for export-attention')
    params = model.load_checkpoint(ckpt)
    journeys = _load_dataset(cfg)
    wanted = cfg.get("journey_id")
    if wanted is None:
        journey = journeys[0]
    else:
        matches = [j for j in journeys if j.id == wanted]
        if not matches:
            raise JourneyDataError(f"journey id {wanted!r} not found in data file")
        journey = matches[0]
    files = training.export_attention(params, journey, out_dir)
    print(f"wrote {len(files)} attention maps for journey {journey.id} to {out_dir}")
    return EXIT_OK


def cmd_ablate(cfg: dict, seed: int | None, out_dir: str) -> int:
    """Train the full model and the four single-module ablations on the same
    splits, repeating over seeds, and report mean test AUROC per variant."""
    base_model = cfg.get("model", {})
    tcfg_base = cfg.get("train", {})
    journeys = _load_dataset(cfg)
    variants = {
        "full": {},
        "alpha": {"disable_stacked": True},
        "beta": {"disable_short": True},
        "gamma": {"disable_long": True},
        "delta": {"disable_coupled": True},
    }
    repeats = _build_dataclass(TrainConfig, _seeded(tcfg_base, seed), "train").repeats
    base_seed = seed if seed is not None else 0
    results: dict[str, dict] = {}
    for name, flags in variants.items():
        aurocs = []
        for rep in range(repeats):
            run_seed = base_seed + rep
            mcfg = _build_dataclass(
                ModelConfig, dict(base_model, seed=run_seed, **flags), "model")
            tcfg = _build_dataclass(
                TrainConfig, dict(tcfg_base, seed=run_seed), "train")
            splits, _ = _prepare_splits(journeys, seed=run_seed)
            params, _ = _train_once(mcfg, tcfg, splits)
            report = training.evaluate(params, splits.test, seed=run_seed)
            aurocs.append(report["auroc"])
        results[name] = {
            "mean_auroc": float(np.mean(aurocs)),
            "aurocs": aurocs,
            "repeats": repeats,
        }
        print(f"{name}: mean test AUROC {results[name]['mean_auroc']:.4f}")
    _write_json(out_dir, "ablation.json", results)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "export-attention": cmd_export_attention,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tempattn", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="override every config seed")
        p.add_argument("--out", required=True, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        return COMMANDS[args.command](cfg, args.seed, args.out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (JourneyDataError, ContractError, DegenerateSliceError,
            MetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
