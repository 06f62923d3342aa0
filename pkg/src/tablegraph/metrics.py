"""Word-box level evaluation: class-averaged F1 for the line-item body and
header, micro F1 over positive occurrences of every other class."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .doc import ClassSchema

THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def binarize(probs, threshold: float = THRESHOLD) -> np.ndarray:
    return (np.asarray(probs) > threshold).astype(np.int8)


def f1(tp: int, fp: int, fn: int) -> tuple[float, bool]:
    """F1 and whether it was defined; a zero denominator scores 0."""
    denom = 2 * tp + fp + fn
    if denom == 0:
        return 0.0, False
    return 2 * tp / denom, True


def class_averaged_f1(counts: ConfusionCounts) -> float:
    pos, _ = f1(counts.tp, counts.fp, counts.fn)
    neg, _ = f1(counts.tn, counts.fn, counts.fp)
    return (pos + neg) / 2


def micro_f1_positive(counts: Sequence[ConfusionCounts]) -> float:
    tp = sum(c.tp for c in counts)
    fp = sum(c.fp for c in counts)
    fn = sum(c.fn for c in counts)
    return f1(tp, fp, fn)[0]


def confusion(pred: np.ndarray, truth: np.ndarray) -> list[ConfusionCounts]:
    """Per-class counts for ``(N, C)`` binary matrices."""
    pred = np.asarray(pred, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    tp = (pred & truth).sum(axis=0)
    fp = (pred & ~truth).sum(axis=0)
    fn = (~pred & truth).sum(axis=0)
    tn = (~pred & ~truth).sum(axis=0)
    return [ConfusionCounts(int(a), int(b), int(c), int(d)) for a, b, c, d in zip(tp, fp, fn, tn)]


@dataclass
class EvalReport:
    split: str
    body_f1: Optional[float]
    header_f1: Optional[float]
    others_micro_f1: Optional[float]
    per_class_f1: dict[str, Optional[float]] = field(default_factory=dict)
    undefined: list[str] = field(default_factory=list)
    counts: dict[str, list[int]] = field(default_factory=dict)
    boxes: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def row(self) -> list[str]:
        return [_fmt(self.body_f1), _fmt(self.header_f1), _fmt(self.others_micro_f1)]


def _fmt(v: Optional[float]) -> str:
    return "N/A" if v is None else f"{v:.4f}"


def report_from_counts(
    counts: Sequence[ConfusionCounts],
    schema: ClassSchema,
    split: str,
    active: Optional[np.ndarray] = None,
) -> EvalReport:
    n = len(schema)
    active = np.ones(n, dtype=bool) if active is None else np.asarray(active, dtype=bool)
    undefined = []
    per_class: dict[str, Optional[float]] = {}
    for c, name in enumerate(schema.names):
        if not active[c]:
            per_class[name] = None
            continue
        score, defined = f1(counts[c].tp, counts[c].fp, counts[c].fn)
        per_class[name] = score
        if not defined:
            undefined.append(name)

    def averaged(c):
        return class_averaged_f1(counts[c]) if active[c] else None

    others = [c for c in schema.other_classes if active[c]]
    micro = micro_f1_positive([counts[c] for c in others]) if others else None
    if others and sum(2 * counts[c].tp + counts[c].fp + counts[c].fn for c in others) == 0:
        undefined.append("others_micro")
    return EvalReport(
        split=split,
        body_f1=averaged(schema.body_class),
        header_f1=averaged(schema.header_class),
        others_micro_f1=micro,
        per_class_f1=per_class,
        undefined=undefined,
        counts={name: [counts[c].tp, counts[c].fp, counts[c].fn, counts[c].tn]
                for c, name in enumerate(schema.names)},
        boxes=counts[0].total if counts else 0,
    )


def evaluate_predictions(
    predictions: Sequence[np.ndarray],
    truths: Sequence[np.ndarray],
    schema: ClassSchema,
    split: str,
    active: Optional[np.ndarray] = None,
) -> EvalReport:
    """Pool per-document binary predictions over a split and score them."""
    if not predictions:
        raise ValueError(f"split {split!r} is empty")
    total = [ConfusionCounts()] * len(schema)
    for pred, truth in zip(predictions, truths):
        total = [a + b for a, b in zip(total, confusion(pred, truth))]
    return report_from_counts(total, schema, split, active)


def predict_samples(model, samples, batch_size: int = 8) -> list[np.ndarray]:
    """Per-sample probability matrices from the network, padding stripped."""
    from .network import pad_batch, predict_proba

    order = sorted(range(len(samples)), key=lambda i: len(samples[i]))
    out: list = [None] * len(samples)
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        batch = pad_batch([samples[i] for i in chunk], batch_size)[0]
        probs = predict_proba(batch, model)
        for j, i in enumerate(chunk):
            out[i] = probs[j, :batch.lengths[j]]
    return out


def evaluate(
    model,
    samples,
    schema: ClassSchema,
    split: str = "adaptation",
    active: Optional[np.ndarray] = None,
    batch_size: int = 8,
) -> EvalReport:
    """Run the network in evaluation mode over a split and score it."""
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    probs = predict_samples(model, samples, batch_size)
    return evaluate_predictions([binarize(p) for p in probs], [s.labels for s in samples],
                                schema, split, active)


def format_table(rows: Sequence[tuple[str, EvalReport, EvalReport]]) -> str:
    """Plain-text table: experiment | adaptation (body, header, micro) | generalization (same)."""
    head = ["experiment", "adapt body F1", "adapt header F1", "adapt micro F1",
            "gen body F1", "gen header F1", "gen micro F1"]
    lines = [[name, *a.row(), *g.row()] for name, a, g in rows]
    widths = [max(len(str(r[i])) for r in [head, *lines]) for i in range(len(head))]

    def fmt(r):
        return "| " + " | ".join(str(v).ljust(w) for v, w in zip(r, widths)) + " |"

    sep = "|" + "|".join("-" * (w + 2) for w in widths) + "|"
    return "\n".join([fmt(head), sep, *map(fmt, lines)])
