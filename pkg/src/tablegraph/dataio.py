"""Line-oriented dataset files and family-aware splits.

File layout::

    #tablegraph-dataset v1
    {"id": ..., "layout_family": ..., "pages": [...]}   <- one document per line

Each page holds ``width``, ``height``, ``boxes`` (``bbox`` as fractions of the
page size, optional ``text`` and ``features``) and ``annotations`` as
``[class_id, left, top, right, bottom]`` lists. Unknown document-level keys
survive a load/save round trip.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .doc import AnnotatedPage, Annotation, InvalidBoxError, Page, WordBox

HEADER = "#tablegraph-dataset v1"
KNOWN_KEYS = {"id", "layout_family", "pages"}


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    doc_id: str
    pages: tuple[AnnotatedPage, ...]
    layout_family: str = "unknown"
    extra: dict = field(default_factory=dict, compare=True)

    def box_count(self) -> int:
        return sum(len(p.page) for p in self.pages)


def record_to_dict(rec: DatasetRecord) -> dict:
    pages = []
    for ap in rec.pages:
        boxes = []
        for b in ap.page.wordboxes:
            entry: dict = {"bbox": list(b.bbox)}
            if b.text is not None:
                entry["text"] = b.text
            if b.features is not None:
                entry["features"] = list(b.features)
            boxes.append(entry)
        pages.append({
            "width": ap.page.width,
            "height": ap.page.height,
            "boxes": boxes,
            "annotations": [[a.class_id, *a.rect] for a in ap.annotations],
        })
    out = {"id": rec.doc_id, "layout_family": rec.layout_family, "pages": pages}
    out.update(rec.extra)
    return out


def _fail(lineno, doc_id, where, msg):
    raise DatasetFormatError(f"line {lineno}: document {doc_id!r}: {where}: {msg}")


def record_from_dict(d: dict, lineno: int = 0, n_classes: Optional[int] = None) -> DatasetRecord:
    doc_id = d.get("id")
    if not isinstance(doc_id, str) or not doc_id:
        _fail(lineno, doc_id, "id", "missing or not a non-empty string")
    pages_raw = d.get("pages")
    if not isinstance(pages_raw, list):
        _fail(lineno, doc_id, "pages", "missing or not a list")
    pages = []
    for p, page in enumerate(pages_raw):
        where = f"pages[{p}]"
        try:
            width, height = float(page["width"]), float(page["height"])
        except (KeyError, TypeError, ValueError) as exc:
            _fail(lineno, doc_id, f"{where}.width/height", f"invalid page size ({exc})")
        boxes = []
        for i, box in enumerate(page.get("boxes", [])):
            try:
                boxes.append(WordBox(i, tuple(box["bbox"]), box.get("text"), box.get("features")))
            except (KeyError, TypeError, InvalidBoxError) as exc:
                _fail(lineno, doc_id, f"{where}.boxes[{i}].bbox", str(exc))
        anns = []
        for a, ann in enumerate(page.get("annotations", [])):
            try:
                class_id, *rect = ann
                if not isinstance(class_id, int):
                    raise TypeError(f"class id {class_id!r} is not an integer")
                if n_classes is not None and not 0 <= class_id < n_classes:
                    raise ValueError(f"class id {class_id} outside schema of {n_classes} classes")
                anns.append(Annotation(class_id, tuple(rect)))
            except (TypeError, ValueError) as exc:
                _fail(lineno, doc_id, f"{where}.annotations[{a}]", str(exc))
        try:
            pages.append(AnnotatedPage(Page(width, height, tuple(boxes)), tuple(anns)))
        except ValueError as exc:
            _fail(lineno, doc_id, where, str(exc))
    extra = {k: v for k, v in d.items() if k not in KNOWN_KEYS}
    return DatasetRecord(doc_id, tuple(pages), str(d.get("layout_family", "unknown")), extra)


def dumps_dataset(records: Iterable[DatasetRecord]) -> str:
    lines = [HEADER]
    for rec in records:
        lines.append(json.dumps(record_to_dict(rec), ensure_ascii=False, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def save_dataset(records: Iterable[DatasetRecord], path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_dataset(records), encoding="utf-8")
    os.replace(tmp, path)


def loads_dataset(text: str, n_classes: Optional[int] = None) -> list[DatasetRecord]:
    lines = text.splitlines()
    if not lines or (len(lines) == 1 and not lines[0].strip()):
        return []
    if lines[0].strip() != HEADER:
        raise DatasetFormatError(f"line 1: expected header {HEADER!r}, got {lines[0][:40]!r}")
    records, seen = [], set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"line {lineno}: invalid JSON ({exc})") from None
        if not isinstance(d, dict):
            raise DatasetFormatError(f"line {lineno}: record is not an object")
        rec = record_from_dict(d, lineno, n_classes)
        if rec.doc_id in seen:
            _fail(lineno, rec.doc_id, "id", "duplicate document id")
        seen.add(rec.doc_id)
        records.append(rec)
    return records


def load_dataset(path, n_classes: Optional[int] = None) -> list[DatasetRecord]:
    return loads_dataset(Path(path).read_text(encoding="utf-8"), n_classes)


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    generalization: tuple[str, ...]

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("train", "validation", "generalization")}


def make_splits(
    records: Sequence[DatasetRecord], seed: int, holdout_fraction: float = 0.1
) -> SplitSpec:
    """Hold out whole layout families for generalization, then split the
    remaining documents 3:1 into train and validation."""
    families = sorted({r.layout_family for r in records})
    if len(families) < 3:
        raise ValueError(f"need at least 3 layout families, got {len(families)}")
    rng = np.random.default_rng(seed)
    n_hold = max(1, int(round(holdout_fraction * len(families))))
    held = set(rng.choice(families, n_hold, replace=False).tolist())
    generalization = tuple(r.doc_id for r in records if r.layout_family in held)
    rest = [r.doc_id for r in records if r.layout_family not in held]
    perm = rng.permutation(len(rest))
    n_val = int(round(len(rest) / 4))
    validation = tuple(rest[i] for i in sorted(perm[:n_val]))
    train = tuple(rest[i] for i in sorted(perm[n_val:]))
    return SplitSpec(train, validation, generalization)


def select(records: Sequence[DatasetRecord], ids: Iterable[str]) -> list[DatasetRecord]:
    wanted = set(ids)
    return [r for r in records if r.doc_id in wanted]
