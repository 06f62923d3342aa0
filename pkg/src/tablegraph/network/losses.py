"""Weighted binary cross-entropy and focal loss over multilabel logits.

Both losses take logits (pre-sigmoid) so that the log terms stay finite for
confident predictions; ``probs = sigmoid(logits)``.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor

MIN_CLASS_WEIGHT = 1.0
MAX_CLASS_WEIGHT = 100.0


def class_weights(labels: np.ndarray, sample_weights: Optional[np.ndarray] = None) -> np.ndarray:
    """Inverse positive frequency per class, clipped to [1, 100].

    ``labels`` is ``(..., C)``; boxes with zero sample weight are not counted.
    """
    labels = np.asarray(labels, dtype=np.float64)
    n_classes = labels.shape[-1]
    flat = labels.reshape(-1, n_classes)
    if sample_weights is not None:
        flat = flat[np.asarray(sample_weights).reshape(-1) > 0]
    positives = flat.sum(axis=0)
    with np.errstate(divide="ignore"):
        raw = len(flat) / (n_classes * positives)
    return np.clip(raw, MIN_CLASS_WEIGHT, MAX_CLASS_WEIGHT)


def _check(logits: Tensor, labels: np.ndarray):
    if logits.shape != labels.shape:
        raise ValueError(f"logits shape {logits.shape} != labels shape {labels.shape}")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")


def _weighting(labels, class_weights, sample_weights, class_mask):
    n_classes = labels.shape[-1]
    cw = np.ones(n_classes) if class_weights is None else np.asarray(class_weights, dtype=np.float64)
    cm = np.ones(n_classes) if class_mask is None else np.asarray(class_mask, dtype=np.float64)
    sw = np.ones(labels.shape[:-1]) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    # class weight scales positive terms only
    w = sw[..., None] * (labels * cw + (1.0 - labels)) * cm
    denom = sw.sum() * cm.sum()
    if denom <= 0:
        raise ValueError("loss has no weighted entries")
    return w, denom


def weighted_bce(
    logits: Tensor,
    labels: np.ndarray,
    class_weights: Optional[np.ndarray] = None,
    sample_weights: Optional[np.ndarray] = None,
    class_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Mean of ``sample_weight * class_weight * BCE`` over real boxes and active classes.

    The mean divides by the summed sample weights times the number of active
    classes, so appending zero-weight padding leaves the value unchanged.
    """
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.float64)
    _check(logits, labels)
    w, denom = _weighting(labels, class_weights, sample_weights, class_mask)
    sign = 2.0 * labels - 1.0
    # -log p_t = softplus(-s z) with s = +1 for positives, -1 for negatives
    nll = ad.softplus(ad.mul(logits, -sign))
    return ad.scale(ad.reduce_sum(ad.mul(nll, w)), 1.0 / denom)


def focal_loss(
    logits: Tensor,
    labels: np.ndarray,
    gamma: float = 2.0,
    class_weights: Optional[np.ndarray] = None,
    sample_weights: Optional[np.ndarray] = None,
    class_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """BCE terms modulated by ``(1 - p_t) ** gamma``, weighted as in :func:`weighted_bce`."""
    logits = ad.as_tensor(logits)
    labels = np.asarray(labels, dtype=np.float64)
    _check(logits, labels)
    w, denom = _weighting(labels, class_weights, sample_weights, class_mask)
    sign = 2.0 * labels - 1.0
    signed = ad.mul(logits, -sign)
    nll = ad.softplus(signed)
    # 1 - p_t = sigmoid(-s z)
    modulation = ad.power(ad.sigmoid(signed), gamma)
    return ad.scale(ad.reduce_sum(ad.mul(ad.mul(modulation, nll), w)), 1.0 / denom)


def loss_fn(name: str):
    if name in ("bce", "weighted-bce"):
        return weighted_bce
    if name == "focal":
        return focal_loss
    raise ValueError(f"unknown loss {name!r}; expected 'bce' or 'focal'")
