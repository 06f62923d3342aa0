"""Word-box classifier: character convolution, graph convolution, convolution
over the reading-order sequence, multi-head self-attention and a sigmoid head.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..features import MAX_CHARS, N_SYMBOLS, PAD_INDEX, ROW_DIM, TEXT_DIM

TEXT_SLICE = slice(ROW_DIM - TEXT_DIM, ROW_DIM)


@dataclass
class ModelConfig:
    class_count: int = 4
    n_neighbors: int = 1
    char_kernel: int = 3
    char_filters: int = 32
    hidden_width: int = 64
    seq_conv_kernel: int = 5
    attention_units: int = 64
    attention_heads: int = 8
    ffn_width: int = 128
    post_conv_kernel: int = 3
    dropout_rate: float = 0.1
    use_attention: bool = True
    use_seq_conv: bool = True
    use_dropout_block: bool = True
    use_text_features: bool = True
    use_char_embedding: bool = True
    input_dim: int = ROW_DIM

    def __post_init__(self):
        if self.attention_units % self.attention_heads:
            raise ValueError(
                f"attention units {self.attention_units} not divisible by heads {self.attention_heads}"
            )
        if self.attention_units != self.hidden_width and self.use_attention:
            raise ValueError("attention units must equal hidden_width for the residual connection")
        for name in ("char_kernel", "char_filters", "hidden_width", "seq_conv_kernel",
                     "ffn_width", "post_conv_kernel", "class_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_neighbors < 0:
            raise ValueError("n_neighbors must be >= 0")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape or (fan_in, fan_out))


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0) -> "Model":
        rng = np.random.default_rng(seed)
        h = config.hidden_width
        shapes: list[tuple[str, np.ndarray]] = []

        def dense(name, n_in, n_out):
            shapes.append((f"{name}.w", _glorot(rng, n_in, n_out)))
            shapes.append((f"{name}.b", np.zeros(n_out)))

        if config.use_char_embedding:
            k, f = config.char_kernel, config.char_filters
            shapes.append(("char_conv.w", _glorot(rng, k * N_SYMBOLS, f, (k * N_SYMBOLS, f))))
            shapes.append(("char_conv.b", np.zeros(f)))
        dense("input", config.input_dim + (config.char_filters if config.use_char_embedding else 0), h)
        dense("graph", h * (1 + 4 * config.n_neighbors), h)
        if config.use_seq_conv:
            dense("seq_conv", h * config.seq_conv_kernel, h)
        if config.use_attention:
            u = config.attention_units
            for name in ("attn.q", "attn.k", "attn.v", "attn.o"):
                dense(name, u, u)
            shapes.append(("attn.ln1.g", np.ones(u)))
            shapes.append(("attn.ln1.b", np.zeros(u)))
            dense("attn.ffn1", u, config.ffn_width)
            dense("attn.ffn2", config.ffn_width, u)
            shapes.append(("attn.ln2.g", np.ones(u)))
            shapes.append(("attn.ln2.b", np.zeros(u)))
        if config.use_dropout_block:
            dense("post_conv", h * config.post_conv_kernel, h)
        dense("output", h, config.class_count)
        return cls(config, {name: ad.parameter(v, name) for name, v in shapes})

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def parameter_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if self.params[k].shape != v.shape:
                raise ValueError(f"parameter {k}: shape {v.shape} != {self.params[k].shape}")
            self.params[k].data = np.array(v, dtype=np.float64)


# ---------------------------------------------------------------- layers


def dense(x: Tensor, model: Model, name: str, activation=ad.relu) -> Tensor:
    y = ad.matmul(x, model[f"{name}.w"]) + model[f"{name}.b"]
    return activation(y) if activation is not None else y


def char_embed(chars: np.ndarray, model: Model) -> Tensor:
    """Valid 1-D convolution over the character axis, relu, max over positions.

    ``chars`` holds symbol indices of shape ``(..., 40)``. Convolving a one-hot
    sequence with a ``(kernel * 54, filters)`` kernel is a sum of kernel-row
    lookups, which is how it is evaluated here. The convolution runs once per
    distinct word, and windows lying entirely in the PAD tail are represented
    by the first of them (they all produce the same value).
    """
    k = model.config.char_kernel
    lead = chars.shape[:-1]
    flat = chars.reshape(-1, MAX_CHARS)
    words, inverse = np.unique(flat, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    lengths = (words != PAD_INDEX).sum(axis=1)
    positions = min(MAX_CHARS - k + 1, int(lengths.max(initial=0)) + 1)
    offsets = np.arange(k) * N_SYMBOLS
    window = np.stack([words[:, j:j + positions] for j in range(k)], axis=-1) + offsets
    taps = ad.gather(model["char_conv.w"], window)  # (U, P, k, F)
    conv = ad.relu(ad.reduce_sum(taps, axis=2) + model["char_conv.b"])
    pooled = ad.gather(ad.reduce_max(conv, axis=1), inverse)
    return ad.reshape(pooled, lead + (model.config.char_filters,))


def char_embed_dense(onehot: np.ndarray, model: Model) -> Tensor:
    """Reference evaluation of :func:`char_embed` on one-hot ``(..., 40, 54)`` input."""
    k = model.config.char_kernel
    positions = MAX_CHARS - k + 1
    lead = onehot.shape[:-2]
    x = ad.Tensor(onehot.reshape((-1, MAX_CHARS, N_SYMBOLS)))
    cols = ad.concat([ad.take(x, (slice(None), slice(j, j + positions))) for j in range(k)], axis=-1)
    conv = ad.relu(ad.matmul(cols, model["char_conv.w"]) + model["char_conv.b"])
    return ad.reshape(ad.reduce_max(conv, axis=1), lead + (model.config.char_filters,))


def graph_conv(h: Tensor, neighbors: np.ndarray, model: Model) -> Tensor:
    """Concatenate each box with its neighbor slots (zeros for MISSING) and
    apply a dense layer.

    ``h`` is ``(B, L, D)``; ``neighbors`` is ``(B, L, 4n)`` of in-document
    positions.
    """
    b, length, d = h.shape
    width = neighbors.shape[-1]
    if width:
        if neighbors.size and neighbors.max() >= length:
            raise IndexError(f"neighbor index {neighbors.max()} out of range for length {length}")
        offsets = (np.arange(b) * length)[:, None, None]
        flat_idx = np.where(neighbors >= 0, neighbors + offsets, -1)
        gathered = ad.gather(ad.reshape(h, (b * length, d)), flat_idx)  # (B, L, 4n, D)
        x = ad.concat([h, ad.reshape(gathered, (b, length, width * d))], axis=-1)
    else:
        x = h
    return dense(x, model, "graph")


def _same_conv(h: Tensor, model: Model, name: str, kernel: int) -> Tensor:
    length = h.shape[1]
    before = (kernel - 1) // 2
    padded = ad.pad(h, before, kernel - 1 - before, axis=1)
    cols = ad.concat(
        [ad.take(padded, (slice(None), slice(j, j + length))) for j in range(kernel)], axis=-1
    )
    return dense(cols, model, name, activation=None)


def seq_conv(h: Tensor, model: Model) -> Tensor:
    """Zero-padded 'same' convolution along the sequence axis, relu."""
    return ad.relu(_same_conv(h, model, "seq_conv", model.config.seq_conv_kernel))


def self_attention(
    h: Tensor, mask: np.ndarray, model: Model, return_weights: bool = False
):
    """Multi-head scaled dot-product attention masking padded keys only,
    followed by residual + layer norm, feed-forward, residual + layer norm."""
    if not mask.any():
        raise ValueError("self_attention: every sequence is entirely padding")
    # an all-padding sequence inside a batch attends uniformly; its rows are masked later
    key_mask = mask | ~mask.any(axis=1, keepdims=True)
    b, length, u = h.shape
    heads = model.config.attention_heads
    dk = u // heads

    def split(t):
        return ad.transpose(ad.reshape(t, (b, length, heads, dk)), (0, 2, 1, 3))

    q = split(ad.scale(dense(h, model, "attn.q", None), 1.0 / np.sqrt(dk)))
    k = split(dense(h, model, "attn.k", None))
    v = split(dense(h, model, "attn.v", None))
    scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2)))
    weights = ad.softmax(scores, axis=-1, mask=key_mask[:, None, None, :])
    ctx = ad.reshape(ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3)), (b, length, u))
    attended = dense(ctx, model, "attn.o", None)
    x = ad.layer_norm(h + attended, model["attn.ln1.g"], model["attn.ln1.b"])
    ff = dense(dense(x, model, "attn.ffn1"), model, "attn.ffn2", None)
    out = ad.layer_norm(x + ff, model["attn.ln2.g"], model["attn.ln2.b"])
    return (out, weights) if return_weights else out


def post_block(h: Tensor, model: Model, rng: Optional[np.random.Generator]) -> Tensor:
    """Convolution (kernel 3 by default), dropout in training, relu."""
    y = _same_conv(h, model, "post_conv", model.config.post_conv_kernel)
    return ad.relu(ad.dropout(y, model.config.dropout_rate, rng))


def forward(batch, model: Model, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Logits ``(B, L, C)`` for a padded batch.

    ``rng`` switches dropout on (training mode); pass None for evaluation.
    Activations of padded positions are zeroed after every layer so that
    padding never leaks into real boxes through the sequence convolutions.
    """
    cfg = model.config
    keep = batch.mask[..., None].astype(np.float64)

    def masked(t: Tensor) -> Tensor:
        return t * np.broadcast_to(keep, t.shape)

    rows = batch.rows
    if not cfg.use_text_features:
        rows = rows.copy()
        rows[..., TEXT_SLICE] = 0.0
    x = ad.Tensor(rows)
    if cfg.use_char_embedding:
        x = ad.concat([x, char_embed(batch.chars, model)], axis=-1)
    h = masked(dense(x, model, "input"))
    h = masked(graph_conv(h, batch.neighbors, model))
    if cfg.use_seq_conv:
        h = masked(seq_conv(h, model))
    if cfg.use_attention:
        h = masked(self_attention(h, batch.mask, model))
    if cfg.use_dropout_block:
        h = masked(post_block(h, model, rng))
    return dense(h, model, "output", activation=None)


def predict_proba(batch, model: Model) -> np.ndarray:
    return ad.sigmoid(forward(batch, model)).data
