"""Per-class logistic regression over feature rows, optionally widened with the
rows of the k nearest neighbors on each side."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import _sigmoid
from .doc import ClassSchema
from .geometry import MISSING
from .metrics import EvalReport, binarize, evaluate_predictions
from .network.losses import class_weights


class BaselineDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class BaselineConfig:
    k_neighbors: int = 0
    l2: float = 1e-4
    epochs: int = 300
    step_size: float = 0.5
    tol: float = 1e-6

    def __post_init__(self):
        if self.k_neighbors < 0:
            raise ValueError("k_neighbors must be >= 0")


def build_design_matrix(rows: np.ndarray, neighbors: np.ndarray, k: int) -> np.ndarray:
    """Own row followed by the rows of the ``k`` nearest neighbors on the left,
    top, right and bottom edges; MISSING slots contribute zero blocks.

    ``neighbors`` is ``(N, 4, n)`` or the flattened ``(N, 4 * n)`` slot matrix.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n_boxes, d = rows.shape
    slots = np.asarray(neighbors).reshape(n_boxes, 4, -1) if n_boxes else np.zeros((0, 4, 0), int)
    if k > slots.shape[2]:
        raise ValueError(f"k={k} exceeds the graph's {slots.shape[2]} neighbors per edge")
    if k == 0:
        return rows.copy()
    chosen = slots[:, :, :k].reshape(n_boxes, 4 * k)
    padded = np.vstack([rows, np.zeros((1, d))])
    gathered = padded[np.where(chosen == MISSING, n_boxes, chosen)]
    return np.concatenate([rows, gathered.reshape(n_boxes, 4 * k * d)], axis=1)


@dataclass
class BaselineModel:
    weights: np.ndarray  # (D, C), in standardized feature space
    bias: np.ndarray  # (C,)
    mean: np.ndarray
    std: np.ndarray
    k_neighbors: int = 0

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        z = ((x - self.mean) / self.std) @ self.weights + self.bias
        return _sigmoid(z)


def train_baseline(
    x: np.ndarray,
    labels: np.ndarray,
    cfg: BaselineConfig = BaselineConfig(),
    class_mask: Optional[np.ndarray] = None,
) -> BaselineModel:
    """Independent binary logistic regressions (one column per class) fitted
    by full-batch gradient descent on standardized features."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("baseline needs at least one training row")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std[std == 0] = 1.0
    xs = (x - mean) / std
    n, d = xs.shape
    c = y.shape[1]
    cw = class_weights(y)
    mask = np.ones(c) if class_mask is None else np.asarray(class_mask, dtype=np.float64)
    sample_w = (y * cw + (1 - y)) * mask
    w = np.zeros((d, c))
    b = np.zeros(c)
    for _ in range(cfg.epochs):
        z = xs @ w + b
        p = _sigmoid(z)
        resid = sample_w * (p - y) / n
        gw = xs.T @ resid + cfg.l2 * w
        gb = resid.sum(axis=0)
        w -= cfg.step_size * gw
        b -= cfg.step_size * gb
        if not (np.isfinite(w).all() and np.isfinite(b).all()):
            raise BaselineDiverged("logistic regression weights became non-finite")
        if max(np.abs(gw).max(initial=0.0), np.abs(gb).max(initial=0.0)) < cfg.tol:
            break
    return BaselineModel(w, b, mean, std, cfg.k_neighbors)


def design_from_samples(samples: Sequence, k: int) -> list[np.ndarray]:
    return [build_design_matrix(s.features.rows(), s.neighbors, k) for s in samples]


def fit_on_samples(samples: Sequence, cfg: BaselineConfig, class_mask=None) -> BaselineModel:
    x = np.concatenate(design_from_samples(samples, cfg.k_neighbors))
    y = np.concatenate([s.labels for s in samples])
    return train_baseline(x, y, cfg, class_mask)


def evaluate_baseline(
    model: BaselineModel,
    samples: Sequence,
    schema: ClassSchema,
    split: str = "adaptation",
    active: Optional[np.ndarray] = None,
) -> EvalReport:
    preds = [binarize(model.predict_proba(x)) for x in design_from_samples(samples, model.k_neighbors)]
    return evaluate_predictions(preds, [s.labels for s in samples], schema, split, active)
