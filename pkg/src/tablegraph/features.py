"""Per-box numeric features and character encodings."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass

import numpy as np

from .doc import Page
from .geometry import ReadingOrder

LETTERS = "abcdefghijklmnopqrstuvwxyz"
DIGITS = "0123456789"
SPECIALS = " ,.-+:/%?$£€#()&'"
PAD = "<pad>"
ALPHABET: tuple[str, ...] = tuple(LETTERS + DIGITS + SPECIALS) + (PAD,)
CHAR_INDEX = {ch: i for i, ch in enumerate(ALPHABET[:-1])}
N_SYMBOLS = len(ALPHABET)  # 54
N_CHARS = N_SYMBOLS - 1  # 53, PAD excluded
PAD_INDEX = N_SYMBOLS - 1
MAX_CHARS = 40

NUMBER_SCALES = tuple(10.0 ** k for k in range(7))
TEXT_DIM = 3 * N_CHARS + 5 + len(NUMBER_SCALES)  # 171

EMBED_HALF = 4
EMBED_DIM = 2 * EMBED_HALF
EMBED_DIVISOR = 10000.0
COORD_SCALE = 100.0

COORD_DIM = 4 * EMBED_DIM
ORDER_DIM = 4 * EMBED_DIM
ROW_DIM = COORD_DIM + ORDER_DIM + TEXT_DIM  # 235

_NUMBER = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+|\d+,\d+)")


@dataclass(frozen=True)
class EmbeddingConfig:
    half_dims: int = EMBED_HALF
    divisor: float = EMBED_DIVISOR


def normalize_text(word: str) -> str:
    decomposed = unicodedata.normalize("NFD", word)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    # recompose so that alphabet symbols made of several code points survive
    lowered = unicodedata.normalize("NFC", stripped).lower()
    return "".join(ch for ch in lowered if ch in CHAR_INDEX)


def parse_number(word: str):
    token = word.strip()
    if not _NUMBER.fullmatch(token):
        return None
    return float(token.replace(",", "."))


def extract_text_features(word: str) -> np.ndarray:
    """Fixed-width textual description of one word.

    Layout: character counts (53), counts over the first two characters (53),
    counts over the last two characters (53), length, uppercase, lowercase,
    alphabetic and digit counts, then the parsed number clipped against seven
    powers of ten (zeros when the word is not a number).
    """
    out = np.zeros(TEXT_DIM)
    if not word:
        return out
    norm = normalize_text(word)
    for ch in norm:
        out[CHAR_INDEX[ch]] += 1
    for ch in norm[:2]:
        out[N_CHARS + CHAR_INDEX[ch]] += 1
    for ch in norm[-2:]:
        out[2 * N_CHARS + CHAR_INDEX[ch]] += 1
    base = 3 * N_CHARS
    out[base] = len(word)
    out[base + 1] = sum(ch.isupper() for ch in word)
    out[base + 2] = sum(ch.islower() for ch in word)
    out[base + 3] = sum(ch.isalpha() for ch in word)
    out[base + 4] = sum(ch.isdigit() for ch in word)
    value = parse_number(word)
    if value is not None:
        scales = np.array(NUMBER_SCALES)
        out[base + 5:] = np.clip(value / scales, -1.0, 1.0)
    return out


def positional_embedding(value, cfg: EmbeddingConfig = EmbeddingConfig()) -> np.ndarray:
    """Sinusoidal embedding; scalar input gives 8 values, array input appends
    a trailing axis of 8."""
    value = np.asarray(value, dtype=np.float64)
    freqs = cfg.divisor ** (np.arange(cfg.half_dims) / cfg.half_dims)
    angles = value[..., None] / freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=-1)


def char_indices(word: str) -> np.ndarray:
    idx = np.full(MAX_CHARS, PAD_INDEX, dtype=np.int64)
    norm = normalize_text(word or "")[:MAX_CHARS]
    for i, ch in enumerate(norm):
        idx[i] = CHAR_INDEX[ch]
    return idx


def encode_chars(word: str) -> np.ndarray:
    """(40, 54) one-hot character matrix, PAD rows after the word."""
    return np.eye(N_SYMBOLS)[char_indices(word)]


def _text_block(box) -> np.ndarray:
    if box.text is not None:
        return extract_text_features(box.text)
    if box.features is not None and len(box.features) == TEXT_DIM:
        return np.asarray(box.features, dtype=np.float64)
    return np.zeros(TEXT_DIM)


@dataclass
class PageFeatures:
    """Raw per-box inputs in reading-order sequence.

    ``order`` maps sequence position to the box position in the page.
    Embedded rows are derived on demand so that augmentation can perturb the
    raw values and re-embed.
    """

    order: np.ndarray
    coords: np.ndarray  # (N, 4) normalized bbox
    positions: np.ndarray  # (N, 4) reading-order integers
    text: np.ndarray  # (N, TEXT_DIM)
    chars: np.ndarray  # (N, 40) symbol indices

    def __len__(self) -> int:
        return len(self.order)

    def rows(self) -> np.ndarray:
        return embed_rows(self.coords, self.positions, self.text)


def embed_rows(coords: np.ndarray, positions: np.ndarray, text: np.ndarray) -> np.ndarray:
    n = len(coords)
    coord_emb = positional_embedding(coords * COORD_SCALE).reshape(n, COORD_DIM)
    pos_emb = positional_embedding(positions.astype(np.float64)).reshape(n, ORDER_DIM)
    return np.concatenate([coord_emb, pos_emb, text], axis=1)


def assemble_features(page: Page, order: ReadingOrder) -> PageFeatures:
    seq = order.sequence()
    boxes = [page.wordboxes[i] for i in seq]
    n = len(boxes)
    coords = page.bboxes()[seq] if n else np.zeros((0, 4))
    positions = order.as_matrix()[seq] if n else np.zeros((0, 4), dtype=np.int64)
    text = np.stack([_text_block(b) for b in boxes]) if n else np.zeros((0, TEXT_DIM))
    chars = (
        np.stack([char_indices(b.text or "") for b in boxes])
        if n
        else np.zeros((0, MAX_CHARS), dtype=np.int64)
    )
    return PageFeatures(seq, coords, positions, text, chars)


def augment(features: PageFeatures, seed: int, amplitude: float = 0.01) -> PageFeatures:
    rng = np.random.default_rng(seed)
    coords = features.coords * (1.0 + rng.uniform(-amplitude, amplitude, features.coords.shape))
    text = features.text * (1.0 + rng.uniform(-amplitude, amplitude, features.text.shape))
    return PageFeatures(features.order, coords, features.positions, text, features.chars)
