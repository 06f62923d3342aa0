"""One training experiment end to end: split, featurize, train, score both
evaluation splits. Shared by the command line and the acceptance tests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .dataio import DatasetRecord, SplitSpec, make_splits, select
from .doc import DEFAULT_SCHEMA, ClassSchema
from .metrics import EvalReport, evaluate
from .network import History, Model, ModelConfig, TrainConfig, class_mask, samples_from_records, train

SECTIONS = ("model", "train", "split", "schema", "synth")


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split_seed: Optional[int] = None  # None: reuse the training seed
    holdout_fraction: float = 0.1
    schema: ClassSchema = DEFAULT_SCHEMA

    @property
    def effective_split_seed(self) -> int:
        return self.train.seed if self.split_seed is None else self.split_seed

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "split": {"seed": self.effective_split_seed, "holdout_fraction": self.holdout_fraction},
            "schema": self.schema.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        unknown = set(d) - set(SECTIONS)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        split = dict(d.get("split", {}))
        bad = set(split) - {"seed", "holdout_fraction"}
        if bad:
            raise ValueError(f"unknown split config keys: {sorted(bad)}")
        schema = ClassSchema.from_dict(d["schema"]) if "schema" in d else DEFAULT_SCHEMA
        model = dict(d.get("model", {}))
        model.setdefault("class_count", len(schema))
        return cls(
            model=ModelConfig.from_dict(model),
            train=TrainConfig.from_dict(d.get("train", {})),
            split_seed=split.get("seed"),
            holdout_fraction=float(split.get("holdout_fraction", 0.1)),
            schema=schema,
        )

    def with_overrides(self, *, seed=None, neighbors=None, loss=None, targets=None,
                       no_attention=False, no_seq_conv=False, no_dropout_block=False,
                       no_text_features=False) -> "ExperimentConfig":
        """Command-line flags win over file values."""
        m, t = self.model, self.train
        if neighbors is not None:
            m = replace(m, n_neighbors=neighbors)
        if no_attention:
            m = replace(m, use_attention=False)
        if no_seq_conv:
            m = replace(m, use_seq_conv=False)
        if no_dropout_block:
            m = replace(m, use_dropout_block=False)
        if no_text_features:
            m = replace(m, use_text_features=False)
        if seed is not None:
            t = replace(t, seed=seed)
        if loss is not None:
            t = replace(t, loss=loss)
        if targets is not None:
            t = replace(t, targets=targets)
        return replace(self, model=m, train=t)


def load_config(path) -> dict:
    """Read a JSON config file; a missing path gives an empty config."""
    if path is None:
        return {}
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(d, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    return d


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class ExperimentResult:
    model: Model
    history: History
    splits: SplitSpec
    adaptation: EvalReport
    generalization: EvalReport

    def scores(self) -> dict:
        return {"adaptation": self.adaptation.to_dict(), "generalization": self.generalization.to_dict()}


def split_samples(records: Sequence[DatasetRecord], cfg: ExperimentConfig):
    """Family-aware splits and the per-page samples of each split."""
    splits = make_splits(records, cfg.effective_split_seed, cfg.holdout_fraction)
    n = cfg.model.n_neighbors
    return splits, tuple(
        samples_from_records(select(records, ids), cfg.schema, n)
        for ids in (splits.train, splits.validation, splits.generalization)
    )


def run_experiment(records: Sequence[DatasetRecord], cfg: ExperimentConfig) -> ExperimentResult:
    if cfg.model.class_count != len(cfg.schema):
        raise ValueError(f"model has {cfg.model.class_count} outputs but the schema has {len(cfg.schema)} classes")
    splits, (tr, va, ge) = split_samples(records, cfg)
    model, history = train(tr, va, cfg.model, cfg.train, cfg.schema)
    active = class_mask(cfg.train.targets, cfg.schema)
    return ExperimentResult(
        model, history, splits,
        evaluate(model, va, cfg.schema, "adaptation", active, cfg.train.batch_size),
        evaluate(model, ge, cfg.schema, "generalization", active, cfg.train.batch_size),
    )
