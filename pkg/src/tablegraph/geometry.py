"""Neighbor graph and reading order over word boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .doc import Page, WordBox

LEFT, TOP, RIGHT, BOTTOM = 0, 1, 2, 3
EDGES = ("left", "top", "right", "bottom")
MISSING = -1

LINE_OVERLAP = 0.5


@dataclass(frozen=True)
class GraphConfig:
    n_neighbors: int = 1

    def __post_init__(self):
        if self.n_neighbors < 0:
            raise ValueError(f"n_neighbors must be >= 0, got {self.n_neighbors}")


@dataclass(frozen=True)
class NeighborGraph:
    """``slots[i, e, k]`` is the k-th nearest box in edge ``e`` of box ``i``,
    or ``MISSING``. Indices are positions in ``page.wordboxes``."""

    slots: np.ndarray

    @property
    def n_neighbors(self) -> int:
        return self.slots.shape[2]

    def __len__(self) -> int:
        return self.slots.shape[0]

    def neighbors(self, i: int, edge: int) -> list[int]:
        return [int(j) for j in self.slots[i, edge] if j != MISSING]

    def edge_count(self) -> int:
        return int((self.slots != MISSING).sum())

    def flat(self) -> np.ndarray:
        """(N, 4 * n) slot matrix in left, top, right, bottom order, nearest first."""
        return self.slots.reshape(len(self), -1)

    def relabel(self, perm: np.ndarray) -> "NeighborGraph":
        """Reindex for nodes listed in ``perm`` order (``perm[new] = old``)."""
        inverse = np.empty(len(perm), dtype=np.int64)
        inverse[perm] = np.arange(len(perm))
        slots = self.slots[perm]
        mapped = np.where(slots == MISSING, MISSING, inverse[np.where(slots == MISSING, 0, slots)])
        return NeighborGraph(mapped)


def edge_of(center_w, center_c) -> int:
    """Edge of box W whose 90 degree field of view contains ``center_c``.

    Exact diagonals go to the horizontal edge.
    """
    dx = center_c[0] - center_w[0]
    dy = center_c[1] - center_w[1]
    if dx == 0 and dy == 0:
        raise ValueError(f"identical centers {tuple(center_w)!r}; exclude the box itself")
    if abs(dx) >= abs(dy):
        return RIGHT if dx > 0 else LEFT
    return BOTTOM if dy > 0 else TOP


def _centers(page: Page) -> np.ndarray:
    b = page.bboxes()
    return np.stack([(b[:, 0] + b[:, 2]) / 2, (b[:, 1] + b[:, 3]) / 2], axis=1)


def edge_matrix(centers: np.ndarray) -> np.ndarray:
    """Vectorized ``edge_of`` over all ordered pairs; -1 on the diagonal and
    for coincident centers."""
    dx = centers[None, :, 0] - centers[:, None, 0]
    dy = centers[None, :, 1] - centers[:, None, 1]
    horizontal = np.abs(dx) >= np.abs(dy)
    edges = np.where(horizontal, np.where(dx > 0, RIGHT, LEFT), np.where(dy > 0, BOTTOM, TOP))
    edges[(dx == 0) & (dy == 0)] = -1
    return edges


def build_neighbor_graph(page: Page, cfg: GraphConfig | int = GraphConfig()) -> NeighborGraph:
    n = cfg if isinstance(cfg, int) else cfg.n_neighbors
    count = len(page)
    slots = np.full((count, 4, n), MISSING, dtype=np.int64)
    if count < 2 or n == 0:
        return NeighborGraph(slots)
    centers = _centers(page)
    dx = centers[None, :, 0] - centers[:, None, 0]
    dy = centers[None, :, 1] - centers[:, None, 1]
    dist2 = dx * dx + dy * dy
    edges = edge_matrix(centers)
    take = min(n, count - 1)
    for e in range(4):
        key = np.where(edges == e, dist2, np.inf)
        # stable sort keeps ascending index among equal distances
        order = np.argsort(key, axis=1, kind="stable")[:, :take]
        chosen = np.take_along_axis(key, order, axis=1)
        slots[:, e, :take] = np.where(np.isfinite(chosen), order, MISSING)
    return NeighborGraph(slots)


@dataclass(frozen=True)
class ReadingOrder:
    line_number: np.ndarray
    order_in_line: np.ndarray
    rot_line_number: np.ndarray
    rot_order_in_line: np.ndarray

    def as_matrix(self) -> np.ndarray:
        """(N, 4) integers: line, order, rotated line, rotated order."""
        return np.stack(
            [self.line_number, self.order_in_line, self.rot_line_number, self.rot_order_in_line], axis=1
        )

    def sequence(self) -> np.ndarray:
        """Box positions sorted by (line_number, order_in_line)."""
        return np.lexsort((self.order_in_line, self.line_number))


def _assign_lines(bboxes: np.ndarray, threshold: float) -> tuple[np.ndarray, np.ndarray]:
    count = len(bboxes)
    line = np.full(count, -1, dtype=np.int64)
    order = np.zeros(count, dtype=np.int64)
    if count == 0:
        return line, order
    idx = np.arange(count)
    sorted_ix = np.lexsort((idx, bboxes[:, 0], bboxes[:, 1]))
    tops, bottoms = bboxes[:, 1], bboxes[:, 3]
    heights = bottoms - tops
    current = 0
    for pos, seed in enumerate(sorted_ix):
        if line[seed] >= 0:
            continue
        members = [seed]
        line[seed] = current
        for other in sorted_ix[pos + 1:]:
            if tops[other] >= bottoms[seed]:
                break
            if line[other] >= 0:
                continue
            inter = min(bottoms[seed], bottoms[other]) - max(tops[seed], tops[other])
            if inter > threshold * min(heights[seed], heights[other]):
                line[other] = current
                members.append(other)
        members.sort(key=lambda j: (bboxes[j, 0], j))
        for k, j in enumerate(members):
            order[j] = k
        current += 1
    return line, order


def rotate_bboxes(bboxes: np.ndarray) -> np.ndarray:
    """Clockwise quarter turn of normalized boxes: (l, t, r, b) -> (1-b, l, 1-t, r)."""
    if len(bboxes) == 0:
        return bboxes.copy()
    return np.stack([1.0 - bboxes[:, 3], bboxes[:, 0], 1.0 - bboxes[:, 1], bboxes[:, 2]], axis=1)


def rotate_page_90(page: Page) -> Page:
    rotated = rotate_bboxes(page.bboxes())
    boxes = tuple(
        WordBox(b.index, tuple(r), b.text, b.features) for b, r in zip(page.wordboxes, rotated)
    )
    return Page(page.height, page.width, boxes)


def assign_reading_order(page: Page, overlap_threshold: float = LINE_OVERLAP) -> ReadingOrder:
    """Group boxes into lines by vertical overlap, on the page and on its
    clockwise-rotated copy.

    A box joins the current line when its y-interval shares more than
    ``overlap_threshold`` of the smaller height with the line's first box.
    """
    bboxes = page.bboxes()
    line, order = _assign_lines(bboxes, overlap_threshold)
    rot_line, rot_order = _assign_lines(rotate_bboxes(bboxes), overlap_threshold)
    return ReadingOrder(line, order, rot_line, rot_order)
