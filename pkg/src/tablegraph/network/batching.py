"""Turning annotated pages into padded training batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..doc import Annotation, ClassSchema, Page, generate_ground_truth
from ..features import MAX_CHARS, PAD_INDEX, ROW_DIM, PageFeatures, assemble_features, augment
from ..geometry import MISSING, assign_reading_order, build_neighbor_graph


@dataclass
class Sample:
    """One page in reading-order sequence, ready for the network.

    ``neighbors`` holds sequence positions (not page indices), ``MISSING``
    for empty slots.
    """

    doc_id: str
    page_index: int
    features: PageFeatures
    neighbors: np.ndarray  # (N, 4 * n_neighbors)
    labels: np.ndarray  # (N, C)

    def __len__(self) -> int:
        return len(self.features)


def prepare_sample(
    page: Page,
    annotations: Sequence[Annotation],
    schema: ClassSchema,
    n_neighbors: int,
    doc_id: str = "",
    page_index: int = 0,
) -> Sample:
    order = assign_reading_order(page)
    feats = assemble_features(page, order)
    graph = build_neighbor_graph(page, n_neighbors).relabel(feats.order)
    labels = generate_ground_truth(page, annotations, schema)[feats.order]
    return Sample(doc_id, page_index, feats, graph.flat(), labels)


def samples_from_records(records, schema: ClassSchema, n_neighbors: int) -> list[Sample]:
    out = []
    for rec in records:
        for p, page in enumerate(rec.pages):
            out.append(prepare_sample(page.page, page.annotations, schema, n_neighbors, rec.doc_id, p))
    return out


@dataclass
class Batch:
    rows: np.ndarray  # (B, L, ROW_DIM)
    chars: np.ndarray  # (B, L, 40) symbol indices
    neighbors: np.ndarray  # (B, L, 4n) positions within the document
    mask: np.ndarray  # (B, L) True for real boxes
    labels: np.ndarray  # (B, L, C)
    sample_weights: np.ndarray  # (B, L)
    lengths: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


def collate(samples: Sequence[Sample], augment_seed: Optional[int] = None) -> Batch:
    """Zero-pad ``samples`` to the longest one.

    Padded positions carry zero rows, PAD characters, MISSING neighbors and
    zero sample weight.
    """
    if not samples:
        raise ValueError("cannot collate an empty batch")
    lengths = tuple(len(s) for s in samples)
    b, length = len(samples), max(max(lengths), 1)
    width = samples[0].neighbors.shape[1]
    n_classes = samples[0].labels.shape[1]
    rows = np.zeros((b, length, ROW_DIM))
    chars = np.full((b, length, MAX_CHARS), PAD_INDEX, dtype=np.int64)
    neighbors = np.full((b, length, width), MISSING, dtype=np.int64)
    mask = np.zeros((b, length), dtype=bool)
    labels = np.zeros((b, length, n_classes), dtype=np.float64)
    for i, s in enumerate(samples):
        feats = s.features
        if augment_seed is not None:
            feats = augment(feats, augment_seed * 100003 + i)
        n = len(s)
        if n:
            rows[i, :n] = feats.rows()
        chars[i, :n] = feats.chars
        neighbors[i, :n] = s.neighbors
        mask[i, :n] = True
        labels[i, :n] = s.labels
    return Batch(rows, chars, neighbors, mask, labels, mask.astype(np.float64), lengths)


def pad_batch(
    samples: Sequence[Sample], batch_size: int, augment_seed: Optional[int] = None
) -> list[Batch]:
    """Split ``samples`` into consecutive batches of at most ``batch_size``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [
        collate(samples[i:i + batch_size], None if augment_seed is None else augment_seed + i)
        for i in range(0, len(samples), batch_size)
    ]
