from __future__ import annotations

import numpy as np
from tablegraph.doc import Page, WordBox

GRID = 1024


def random_page(rng: np.random.Generator, max_boxes: int = 60, grid: int = GRID) -> Page:
    """Random page whose coordinates lie on a dyadic grid, so that sums,
    halvings and translations by grid multiples are exact in floating point.
    The coarse grid also produces plenty of distance and overlap ties."""
    n = int(rng.integers(0, max_boxes + 1))
    boxes = []
    for i in range(n):
        w = int(rng.integers(1, grid // 8))
        h = int(rng.integers(1, grid // 16))
        left = int(rng.integers(0, grid - w))
        top = int(rng.integers(0, grid - h))
        boxes.append(WordBox(i, (left / grid, top / grid, (left + w) / grid, (top + h) / grid)))
    return Page(1.0, 1.0, tuple(boxes))


def page_of(*rects, texts=None) -> Page:
    texts = texts or [None] * len(rects)
    return Page(1.0, 1.0, tuple(WordBox(i, r, t) for i, (r, t) in enumerate(zip(rects, texts))))


def naive_counts(preds, truths, n_classes):
    """Single pass over every (box, class) pair, tallying tp/fp/fn/tn."""
    counts = [[0, 0, 0, 0] for _ in range(n_classes)]
    for pred, truth in zip(preds, truths):
        for i in range(len(truth)):
            for c in range(n_classes):
                p, t = bool(pred[i][c]), bool(truth[i][c])
                counts[c][(0 if t else 1) if p else (2 if t else 3)] += 1
    return counts


def naive_scores(counts, body, header, others):
    """Scores straight from the metric definitions, written independently."""

    def f1(tp, fp, fn):
        return 0.0 if tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)

    def averaged(c):
        tp, fp, fn, tn = counts[c]
        return (f1(tp, fp, fn) + f1(tn, fn, fp)) / 2

    tp = sum(counts[c][0] for c in others)
    fp = sum(counts[c][1] for c in others)
    fn = sum(counts[c][2] for c in others)
    return averaged(body), averaged(header), f1(tp, fp, fn)


# one summary line per acceptance criterion, printed at the end of the run
CRITERIA: dict[int, str] = {}


class criterion:
    """Context manager recording PASS or FAIL for an acceptance criterion.

    The body may set ``.detail`` to a short description of what was measured.
    """

    def __init__(self, number: int, title: str):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        head = f"criterion {self.number:>2} [{self.title}]"
        if exc_type is None:
            CRITERIA[self.number] = f"PASS {head} {self.detail}"
        else:
            reason = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
            CRITERIA[self.number] = f"FAIL {head} {self.detail} :: {reason[:200]}"
        print(CRITERIA[self.number])
        return False
