"""Pages, word boxes, annotations and ground-truth label generation.

All coordinates stored on these types are normalized to the page: ``(left, top,
right, bottom)`` with the origin in the top-left corner and ``y`` growing
downwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

Rect = tuple[float, float, float, float]

GROUND_TRUTH_OVERLAP = 0.20


class InvalidBoxError(ValueError):
    """Raised for malformed or degenerate rectangles."""


def check_rect(rect: Sequence[float], what: str = "rectangle") -> Rect:
    if len(rect) != 4:
        raise InvalidBoxError(f"{what}: expected 4 coordinates, got {len(rect)}")
    left, top, right, bottom = (float(v) for v in rect)
    for v in (left, top, right, bottom):
        if not (0.0 <= v <= 1.0):
            raise InvalidBoxError(f"{what}: coordinate {v!r} outside [0, 1] in {rect!r}")
    if not (left < right and top < bottom):
        raise InvalidBoxError(f"{what}: degenerate or inverted rectangle {rect!r}")
    return left, top, right, bottom


@dataclass(frozen=True)
class WordBox:
    index: int
    bbox: Rect
    text: Optional[str] = None
    # opaque precomputed text features (anonymized datasets carry no text)
    features: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "bbox", check_rect(self.bbox, f"wordbox {self.index}"))
        if self.features is not None:
            object.__setattr__(self, "features", tuple(float(v) for v in self.features))

    @property
    def center(self) -> tuple[float, float]:
        left, top, right, bottom = self.bbox
        return (left + right) / 2, (top + bottom) / 2

    @property
    def height(self) -> float:
        return self.bbox[3] - self.bbox[1]


@dataclass(frozen=True)
class Page:
    width: float
    height: float
    wordboxes: tuple[WordBox, ...] = ()

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"page dimensions must be positive, got {self.width}x{self.height}")
        object.__setattr__(self, "wordboxes", tuple(self.wordboxes))
        seen = set()
        for box in self.wordboxes:
            if box.index in seen:
                raise ValueError(f"duplicate wordbox index {box.index}")
            seen.add(box.index)

    @classmethod
    def from_raw(cls, width: float, height: float, boxes) -> "Page":
        """Build a page from boxes given in page units.

        ``boxes`` yields ``(left, top, right, bottom)`` or ``(bbox, text)`` pairs.
        Coordinates are divided by the page size; zero-area boxes are rejected
        with the offending indices listed.
        """
        wordboxes = []
        bad = []
        for i, item in enumerate(boxes):
            if len(item) == 2:
                bbox, text = item
            else:
                bbox, text = item, None
            left, top, right, bottom = (float(v) for v in bbox)
            norm = (left / width, top / height, right / width, bottom / height)
            if not (norm[0] < norm[2] and norm[1] < norm[3]):
                bad.append(i)
                continue
            wordboxes.append(WordBox(i, norm, text))
        if bad:
            raise InvalidBoxError(f"zero-area or inverted wordboxes at indices {bad}")
        return cls(width, height, tuple(wordboxes))

    def __len__(self) -> int:
        return len(self.wordboxes)

    def bboxes(self) -> np.ndarray:
        if not self.wordboxes:
            return np.zeros((0, 4))
        return np.array([b.bbox for b in self.wordboxes], dtype=np.float64)


@dataclass(frozen=True)
class Annotation:
    class_id: int
    rect: Rect

    def __post_init__(self):
        object.__setattr__(self, "rect", check_rect(self.rect, f"annotation of class {self.class_id}"))


@dataclass(frozen=True)
class ClassSchema:
    names: tuple[str, ...]
    body_class: int = 0
    header_class: int = 1

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise ValueError("class schema needs at least two classes")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"class names must be unique: {self.names}")
        for c in (self.body_class, self.header_class):
            if not 0 <= c < len(self.names):
                raise ValueError(f"class index {c} outside schema of {len(self.names)} classes")
        if self.body_class == self.header_class:
            raise ValueError("body and header classes must differ")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def other_classes(self) -> list[int]:
        return [c for c in range(len(self.names)) if c not in (self.body_class, self.header_class)]

    def to_dict(self) -> dict:
        return {"names": list(self.names), "body_class": self.body_class, "header_class": self.header_class}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSchema":
        return cls(tuple(d["names"]), d.get("body_class", 0), d.get("header_class", 1))


DEFAULT_SCHEMA = ClassSchema(("lineitem_body", "lineitem_header", "total_amount", "due_date"), 0, 1)


def _area(rect) -> float:
    return (rect[2] - rect[0]) * (rect[3] - rect[1])


def overlap_fraction(box: Sequence[float], rect: Sequence[float]) -> float:
    """Fraction of ``box``'s area covered by ``rect``."""
    area = _area(box)
    if not area > 0:
        raise InvalidBoxError(f"zero-area box {tuple(box)!r}")
    w = min(box[2], rect[2]) - max(box[0], rect[0])
    h = min(box[3], rect[3]) - max(box[1], rect[1])
    if w <= 0 or h <= 0:
        return 0.0
    return min(1.0, (w * h) / area)


def generate_ground_truth(
    page: Page, annotations: Sequence[Annotation], schema: ClassSchema
) -> np.ndarray:
    """Multilabel targets: a box gets class ``c`` when some annotation of that
    class covers strictly more than 20% of the box area."""
    labels = np.zeros((len(page), len(schema)), dtype=np.int8)
    for ann in annotations:
        if not 0 <= ann.class_id < len(schema):
            raise ValueError(f"annotation class {ann.class_id} not in schema of {len(schema)} classes")
    for i, box in enumerate(page.wordboxes):
        for ann in annotations:
            if overlap_fraction(box.bbox, ann.rect) > GROUND_TRUTH_OVERLAP:
                labels[i, ann.class_id] = 1
    return labels


@dataclass(frozen=True)
class AnnotatedPage:
    page: Page
    annotations: tuple[Annotation, ...] = field(default_factory=tuple)

    def labels(self, schema: ClassSchema) -> np.ndarray:
        return generate_ground_truth(self.page, self.annotations, schema)
