"""Seeded generator of invoice-like pages with annotated line-item tables.

Every layout family fixes the page geometry (margins, font size, block order,
column positions, header presence, which key-value tables appear and where);
documents of one family differ in row counts, texts and small positional
jitter. Coordinates are produced in page units and normalized on output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .doc import DEFAULT_SCHEMA, AnnotatedPage, Annotation, ClassSchema, Page, WordBox
from .dataio import DatasetRecord

PAGE_W, PAGE_H = 595.0, 842.0
CHAR_W = 0.55  # average glyph width relative to font size

ITEM_WORDS = (
    "widget bolt nut screw cable adapter bracket panel sensor valve pump filter hose clamp "
    "service consulting license support module board case lamp switch relay motor gear "
    "washer spring tape label box pallet paint brush kit set unit frame cover seal"
).split()
PARAGRAPH_WORDS = (
    "the and of to in for is on with as by this that be are at from or an will "
    "payment invoice please goods delivery terms conditions order company customer "
    "any within days after receipt all prices our your we shall not liable return "
    "contact questions regarding thank you business registered office number account "
    "late fees may apply interest per month law court jurisdiction agreed"
).split()
STREETS = "Main High Park Oak Mill Church Station Bridge Green Hill".split()
CITIES = "Prague Brno Vienna Berlin Dresden Leipzig Munich Linz Graz Krakow".split()
COMPANY = "Acme Globex Initech Umbrella Hooli Vandelay Stark Wayne Tyrell Soylent".split()
SUFFIX = "Ltd. GmbH s.r.o. Inc. AG a.s.".split()

COLUMN_KINDS = ("description", "code", "qty", "unit", "price", "vat", "amount")
COLUMN_TITLES = {
    "description": ["Description", "Item", "Product", "Article"],
    "code": ["Code", "SKU", "Part no."],
    "qty": ["Qty", "Quantity", "Pcs"],
    "unit": ["Unit", "UoM"],
    "price": ["Unit price", "Price", "Rate"],
    "vat": ["VAT %", "Tax", "VAT"],
    "amount": ["Amount", "Total", "Line total"],
}
COLUMN_WIDTH = {"description": 150, "code": 60, "qty": 35, "unit": 35, "price": 60, "vat": 40, "amount": 65}

TOTALS_KEYS = ["Subtotal:", "VAT:", "Discount:", "Shipping:"]
TERMS_KEYS = ["Invoice date:", "Order no.:", "Payment terms:", "Variable symbol:"]
INFO_KEYS = ["Bank:", "IBAN:", "SWIFT:", "Account:"]


@dataclass(frozen=True)
class SynthConfig:
    n_documents: int = 200
    n_families: int = 5
    seed: int = 0
    rows_min: int = 3
    rows_max: int = 8
    cols_min: int = 3
    cols_max: int = 5
    header_prob: float = 0.85
    distractors_min: int = 0
    distractors_max: int = 3
    noise_lines_min: int = 16
    noise_lines_max: int = 30
    column_jitter: float = 3.0
    block_jitter: float = 6.0

    def __post_init__(self):
        if self.n_documents < 1 or self.n_families < 1:
            raise ValueError("n_documents and n_families must be positive")
        for lo, hi in (("rows_min", "rows_max"), ("cols_min", "cols_max"),
                       ("distractors_min", "distractors_max"), ("noise_lines_min", "noise_lines_max")):
            if getattr(self, lo) > getattr(self, hi) or getattr(self, lo) < 0:
                raise ValueError(f"invalid range {lo}..{hi}")
        if self.rows_min < 1 or self.cols_min < 2:
            raise ValueError("tables need at least one row and two columns")
        if self.cols_max > len(COLUMN_KINDS):
            raise ValueError(f"at most {len(COLUMN_KINDS)} columns are supported")
        if self.distractors_max > 3:
            raise ValueError("at most 3 distractor tables are supported")
        if not 0 <= self.header_prob <= 1:
            raise ValueError("header_prob must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class Family:
    name: str
    font: float
    line_gap: float
    margin: float
    columns: list[str]
    col_x: list[float]
    has_header: bool
    row_gap: float
    distractors: list[tuple[str, str]]  # (kind, placement) kind in totals/terms/info
    terms_keys: list[str]
    totals_keys: list[str]
    info_keys: list[str]
    decimal: str
    date_fmt: int
    right_info_block: bool
    footer_columns: int
    title: str


class _Canvas:
    def __init__(self, font: float):
        self.font = font
        self.words: list[tuple[tuple[float, float, float, float], str]] = []

    def word(self, x: float, y: float, text: str, font: Optional[float] = None) -> tuple:
        f = font or self.font
        w = max(len(text), 1) * f * CHAR_W
        box = (x, y, x + w, y + f)
        self.words.append((box, text))
        return box

    def phrase(self, x: float, y: float, text: str, font: Optional[float] = None) -> list[tuple]:
        f = font or self.font
        boxes = []
        for token in text.split():
            boxes.append(self.word(x, y, token, f))
            x = boxes[-1][2] + f * CHAR_W
        return boxes

    def width(self, text: str, font: Optional[float] = None) -> float:
        return len(text) * (font or self.font) * CHAR_W


def _union(boxes, pad: float) -> tuple[float, float, float, float]:
    arr = np.array(boxes)
    return (arr[:, 0].min() - pad, arr[:, 1].min() - pad, arr[:, 2].max() + pad, arr[:, 3].max() + pad)


def _make_family(cfg: SynthConfig, idx: int, rng: np.random.Generator) -> Family:
    n_cols = int(rng.integers(cfg.cols_min, cfg.cols_max + 1))
    kinds = ["description"] + list(rng.choice(COLUMN_KINDS[1:], n_cols - 1, replace=False))
    order = [kinds[0]] + sorted(kinds[1:], key=COLUMN_KINDS.index)
    if "amount" in order:
        order.remove("amount")
        order.append("amount")
    if rng.random() < 0.3:
        order[0], order[1] = order[1], order[0]
    font = float(rng.uniform(7.0, 9.0))
    margin = float(rng.uniform(35, 60))
    scale = font / 8.5
    widths = [COLUMN_WIDTH[k] * scale for k in order]
    usable = PAGE_W - 2 * margin
    spare = usable - sum(widths)
    if spare < 0:
        widths = [w * usable / sum(widths) for w in widths]
        spare = 0.0
    gaps = rng.dirichlet(np.ones(len(order))) * spare * float(rng.uniform(0.3, 1.0))
    col_x, x = [], margin
    for w, g in zip(widths, gaps):
        col_x.append(float(x))
        x += w + g
    n_dist = int(rng.integers(cfg.distractors_min, cfg.distractors_max + 1))
    chosen = list(rng.choice(["totals", "terms", "info"], n_dist, replace=False)) if n_dist else []
    distractors = []
    for kind in chosen:
        if kind == "totals":
            placement = "after"
        elif kind == "terms":
            placement = str(rng.choice(["beside_recipient", "before_table", "after"]))
        else:
            placement = str(rng.choice(["before_table", "after", "footer"]))
        distractors.append((str(kind), placement))

    def keys(pool):
        k = int(rng.integers(1, 4))
        return [str(v) for v in rng.choice(pool, k, replace=False)]

    return Family(
        name=f"family-{idx:02d}",
        font=font,
        line_gap=float(rng.uniform(1.3, 1.6)),
        margin=margin,
        columns=[str(k) for k in order],
        col_x=col_x,
        has_header=bool(rng.random() < cfg.header_prob),
        row_gap=float(rng.uniform(1.5, 2.1)),
        distractors=distractors,
        terms_keys=keys(TERMS_KEYS),
        totals_keys=keys(TOTALS_KEYS),
        info_keys=keys(INFO_KEYS),
        decimal=str(rng.choice([".", ","])),
        date_fmt=int(rng.integers(0, 3)),
        right_info_block=bool(rng.random() < 0.6),
        footer_columns=int(rng.integers(1, 3)),
        title=str(rng.choice(["INVOICE", "Invoice", "Tax invoice", "Pro forma invoice", "Debit note"])),
    )


def _date(rng, fmt: int) -> str:
    d, m, y = int(rng.integers(1, 29)), int(rng.integers(1, 13)), int(rng.integers(2015, 2021))
    return [f"{d:02d}.{m:02d}.{y}", f"{y}-{m:02d}-{d:02d}", f"{m:02d}/{d:02d}/{y}"][fmt]


def _money(rng, decimal: str, hi: float = 5000.0) -> str:
    return f"{rng.uniform(1, hi):.2f}".replace(".", decimal)


def _cell(kind: str, rng, fam: Family) -> str:
    if kind == "description":
        n = int(rng.integers(1, 4))
        return " ".join(str(w) for w in rng.choice(ITEM_WORDS, n))
    if kind == "code":
        letters = "".join(rng.choice(list("ABCDEFGHKLMNPRSTX"), 2))
        return f"{letters}-{int(rng.integers(100, 99999))}"
    if kind == "qty":
        return str(int(rng.integers(1, 250)))
    if kind == "unit":
        return str(rng.choice(["pcs", "kg", "m", "h", "box", "set"]))
    if kind == "vat":
        return str(rng.choice(["0%", "10%", "15%", "21%", "19%", "20%"]))
    return _money(rng, fam.decimal, 900.0 if kind == "price" else 9000.0)


def _paragraph_line(rng, font: float, width: float) -> str:
    """Random words filling at most ``width`` page units, ragged right."""
    target = width * float(rng.uniform(0.6, 0.95))
    words, used = [], 0.0
    while True:
        w = str(rng.choice(PARAGRAPH_WORDS))
        extra = (len(w) + (1 if words else 0)) * font * CHAR_W
        if used + extra > target and words:
            return " ".join(words)
        words.append(w)
        used += extra


class _Doc:
    def __init__(self, fam: Family, rng: np.random.Generator, cfg: SynthConfig, schema: ClassSchema):
        self.fam, self.rng, self.cfg, self.schema = fam, rng, cfg, schema
        self.canvas = _Canvas(fam.font)
        self.regions: list[tuple[int, tuple]] = []  # page units, validated once the layout fits
        self.field_classes = schema.other_classes
        self.worst_case = False

    def jitter(self) -> float:
        if self.worst_case:
            return self.cfg.block_jitter
        return float(self.rng.uniform(-self.cfg.block_jitter, self.cfg.block_jitter))

    def annotate(self, class_id: int, rect) -> None:
        self.regions.append((class_id, rect))

    def annotations(self) -> list[Annotation]:
        return [Annotation(c, (max(l, 0.0) / PAGE_W, max(t, 0.0) / PAGE_H,
                               min(r, PAGE_W) / PAGE_W, min(b, PAGE_H) / PAGE_H))
                for c, (l, t, r, b) in self.regions]

    def text_block(self, x: float, y: float, lines: list[str]) -> float:
        step = self.fam.font * self.fam.line_gap
        for line in lines:
            self.canvas.phrase(x, y, line)
            y += step
        return y

    def key_value(self, kind: str, x: float, y: float) -> float:
        fam, rng = self.fam, self.rng
        step = fam.font * fam.line_gap
        keys = {"totals": fam.totals_keys, "terms": fam.terms_keys, "info": fam.info_keys}[kind]
        key_w = max(self.canvas.width(k) for k in keys + ["Total due:", "Due date:"]) + fam.font
        rows = []
        for k in keys:
            if kind == "totals":
                v = _money(rng, fam.decimal)
            elif kind == "terms":
                v = _date(rng, fam.date_fmt) if "date" in k else str(int(rng.integers(1000, 999999)))
            else:
                v = "".join(rng.choice(list("0123456789ABCDEFGH"), int(rng.integers(6, 14))))
            rows.append((k, v, None))
        field_idx = {"totals": 0, "terms": 1}.get(kind)
        if field_idx is not None and field_idx < len(self.field_classes):
            label = "Total due:" if kind == "totals" else "Due date:"
            value = _money(rng, fam.decimal, 20000.0) if kind == "totals" else _date(rng, fam.date_fmt)
            pos = len(rows) if kind == "totals" else int(rng.integers(0, len(rows) + 1))
            rows.insert(pos, (label, value, self.field_classes[field_idx]))
        for k, v, cls in rows:
            self.canvas.phrase(x, y, k)
            box = self.canvas.word(x + key_w, y, v)
            if cls is not None:
                self.annotate(cls, (box[0] - 1, box[1] - 1, box[2] + 1, box[3] + 1))
            y += step
        return y

    def table(self, y: float, n_rows: int) -> float:
        fam, rng, canvas = self.fam, self.rng, self.canvas
        xs = [x + float(rng.uniform(-self.cfg.column_jitter, self.cfg.column_jitter)) for x in fam.col_x]
        row_step = fam.font * fam.row_gap
        if fam.has_header:
            head = []
            for kind, x in zip(fam.columns, xs):
                head += canvas.phrase(x, y, str(rng.choice(COLUMN_TITLES[kind])))
            self.annotate(self.schema.header_class, _union(head, 1.5))
            y += row_step * 1.2
        body = []
        for _ in range(n_rows):
            for kind, x in zip(fam.columns, xs):
                body += canvas.phrase(x, y, _cell(kind, rng, fam))
            y += row_step
        self.annotate(self.schema.body_class, _union(body, 1.5))
        return y

    def build(self, n_rows: Optional[int] = None, n_lines: Optional[int] = None) -> tuple[Page, list[Annotation]]:
        fam, rng, cfg = self.fam, self.rng, self.cfg
        canvas = self.canvas
        step = fam.font * fam.line_gap
        m = fam.margin
        y = 30.0 + self.jitter() / 2 + 6
        # sender block and invoice title
        company = f"{rng.choice(COMPANY)} {rng.choice(SUFFIX)}"
        sender = [company, f"{int(rng.integers(1, 200))} {rng.choice(STREETS)} Street",
                  f"{int(rng.integers(10000, 99999))} {rng.choice(CITIES)}",
                  f"VAT ID: CZ{int(rng.integers(10**7, 10**8))}"]
        y_left = self.text_block(m, y, sender)
        title_x = PAGE_W - m - 170 if fam.right_info_block else m + 260
        canvas.phrase(title_x, y, fam.title, fam.font * 1.4)
        y_right = self.text_block(title_x, y + fam.font * 2, [f"No. {int(rng.integers(10**5, 10**7))}"])
        y = max(y_left, y_right) + 12 + self.jitter() / 2 + 6
        # recipient, optionally with a key-value table beside it
        recipient = ["Bill to:", f"{rng.choice(COMPANY)} {rng.choice(SUFFIX)}",
                     f"{int(rng.integers(1, 200))} {rng.choice(STREETS)} Road",
                     f"{int(rng.integers(10000, 99999))} {rng.choice(CITIES)}"]
        y_rec = self.text_block(m, y, recipient)
        y_side = y
        for kind, place in fam.distractors:
            if place == "beside_recipient":
                y_side = self.key_value(kind, PAGE_W / 2 + 20, y)
        y = max(y_rec, y_side) + 12
        for kind, place in fam.distractors:
            if place == "before_table":
                y = self.key_value(kind, m if kind != "totals" else PAGE_W / 2, y) + 10
        y += 6 + self.jitter() / 2 + 6
        if n_rows is None:
            n_rows = int(rng.integers(cfg.rows_min, cfg.rows_max + 1))
        y = self.table(y, n_rows) + 14
        y_after = y
        for kind, place in fam.distractors:
            if place == "after":
                x = PAGE_W - m - 190 if kind == "totals" else m
                y_after = max(y_after, self.key_value(kind, x, y) + 10)
                if kind != "totals":
                    y = y_after
        y = max(y, y_after) + 8
        # free text: notes and terms paragraphs, possibly in two columns
        if n_lines is None:
            n_lines = int(rng.integers(cfg.noise_lines_min, cfg.noise_lines_max + 1))
        col_w = (PAGE_W - 2 * m) / fam.footer_columns
        per_col = -(-n_lines // fam.footer_columns)
        y_foot = y
        for c in range(fam.footer_columns):
            lines = [_paragraph_line(rng, fam.font, col_w - 12)
                     for _ in range(min(per_col, n_lines - c * per_col))]
            y_foot = max(y_foot, self.text_block(m + c * col_w, y, lines))
        y = y_foot + 8
        for kind, place in fam.distractors:
            if place == "footer":
                y = self.key_value(kind, m, y) + 6
        bad = [b for b, _ in canvas.words if b[3] > PAGE_H - 4 or b[2] > PAGE_W - 2]
        if bad:
            raise ValueError(f"layout {fam.name} does not fit on the page with {n_rows} rows and "
                             f"{n_lines} free-text lines; reduce rows_max or noise_lines_max")
        boxes = tuple(
            WordBox(i, (b[0] / PAGE_W, b[1] / PAGE_H, b[2] / PAGE_W, b[3] / PAGE_H), text)
            for i, (b, text) in enumerate(canvas.words)
        )
        return Page(PAGE_W, PAGE_H, boxes), self.annotations()


FAMILY_ATTEMPTS = 25


def _fitting_family(cfg: SynthConfig, idx: int, rng: np.random.Generator, schema: ClassSchema) -> Family:
    """Draw family parameters until the largest configured document fits on the page."""
    for attempt in range(FAMILY_ATTEMPTS):
        fam = _make_family(cfg, idx, rng)
        # dry run with the largest table and the most free text
        probe = _Doc(fam, np.random.default_rng(0), cfg, schema)
        probe.worst_case = True
        try:
            probe.build(cfg.rows_max, cfg.noise_lines_max)
            return fam
        except ValueError:
            if attempt == FAMILY_ATTEMPTS - 1:
                raise
    raise AssertionError("unreachable")


def synth_generate(cfg: SynthConfig, schema: ClassSchema = DEFAULT_SCHEMA) -> list[DatasetRecord]:
    """Documents spread round-robin over ``cfg.n_families`` layout families."""
    root = np.random.default_rng(cfg.seed)
    family_seeds = root.integers(0, 2**63 - 1, cfg.n_families)
    doc_seeds = root.integers(0, 2**63 - 1, cfg.n_documents)
    families = [_fitting_family(cfg, i, np.random.default_rng(int(s)), schema)
                for i, s in enumerate(family_seeds)]
    records = []
    for d in range(cfg.n_documents):
        fam = families[d % cfg.n_families]
        page, anns = _Doc(fam, np.random.default_rng(int(doc_seeds[d])), cfg, schema).build()
        records.append(DatasetRecord(f"doc-{d:05d}", (AnnotatedPage(page, tuple(anns)),), fam.name))
    return records


def positive_rate(records, schema: ClassSchema = DEFAULT_SCHEMA) -> float:
    """Fraction of positive entries in the pooled label matrix."""
    pos, total = 0, 0
    for rec in records:
        for ap in rec.pages:
            labels = ap.labels(schema)
            pos += int(labels.sum())
            total += labels.size
    return pos / total if total else 0.0
