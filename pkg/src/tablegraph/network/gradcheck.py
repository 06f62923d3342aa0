"""Finite-difference checks of every network layer and both losses.

Each check builds a small random instance of one layer, reduces its output to
a scalar with a fixed random projection and compares backward gradients of the
layer parameters (and of its continuous input, where it has one) against
central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .. import autodiff as ad
from ..autodiff import GradCheckReport, Tensor
from ..features import MAX_CHARS, N_CHARS, PAD_INDEX
from ..geometry import MISSING
from .losses import focal_loss, weighted_bce
from .model import Model, ModelConfig, char_embed, dense, graph_conv, post_block, self_attention, seq_conv

SMALL = ModelConfig(
    class_count=3, n_neighbors=2, char_kernel=3, char_filters=4, hidden_width=8,
    seq_conv_kernel=5, attention_units=8, attention_heads=2, ffn_width=6,
    post_conv_kernel=3, input_dim=5,
)


@dataclass
class LayerCheck:
    name: str
    report: GradCheckReport

    @property
    def passed(self) -> bool:
        return self.report.passed


def _project(out: Tensor, rng: np.random.Generator) -> Callable[[], Tensor]:
    w = rng.normal(size=out.shape)
    return lambda t: ad.reduce_sum(ad.mul(t, w))


def _params(model: Model, prefix: str) -> list[Tensor]:
    return [t for n, t in model.params.items() if n.startswith(prefix)]


def _case(name, build, inputs, step, tol, rng) -> LayerCheck:
    proj = _project(build(), rng)
    return LayerCheck(name, ad.grad_check(lambda: proj(build()), inputs, step=step, tol=tol))


def run_layer_checks(seed: int = 0, step: float = 1e-5, tol: float = 1e-4,
                     only: Optional[set] = None) -> list[LayerCheck]:
    """Check char conv, dense, graph conv, seq conv, attention, the dropout
    block and both losses; ``only`` restricts to a subset of names."""
    rng = np.random.default_rng(seed)
    model = Model.init(SMALL, seed)
    for t in model.params.values():
        # non-trivial biases and norm gains so that every path carries signal
        t.data = t.data + rng.normal(scale=0.1, size=t.shape)
    b, length, h = 2, 6, SMALL.hidden_width
    mask = np.ones((b, length), dtype=bool)
    mask[1, 4:] = False
    x = ad.parameter(rng.normal(size=(b, length, h)), "x")
    checks: list[LayerCheck] = []

    def want(name):
        return only is None or name in only

    if want("char_conv"):
        chars = np.full((b, length, MAX_CHARS), PAD_INDEX)
        for i in range(b):
            for j in range(length):
                n = rng.integers(1, 9)
                chars[i, j, :n] = rng.integers(0, N_CHARS, n)
        checks.append(_case("char_conv", lambda: char_embed(chars, model),
                            _params(model, "char_conv."), step, tol, rng))
    if want("dense"):
        rows = ad.parameter(rng.normal(size=(b, length, SMALL.input_dim + SMALL.char_filters)), "rows")
        checks.append(_case("dense", lambda: dense(rows, model, "input"),
                            [rows, *_params(model, "input.")], step, tol, rng))
    if want("graph_conv"):
        nb = rng.integers(0, length, (b, length, 4 * SMALL.n_neighbors))
        nb[rng.random(nb.shape) < 0.3] = MISSING
        checks.append(_case("graph_conv", lambda: graph_conv(x, nb, model),
                            [x, *_params(model, "graph.")], step, tol, rng))
    if want("seq_conv"):
        checks.append(_case("seq_conv", lambda: seq_conv(x, model),
                            [x, *_params(model, "seq_conv.")], step, tol, rng))
    if want("attention"):
        checks.append(_case("attention", lambda: self_attention(x, mask, model),
                            [x, *_params(model, "attn.")], step, tol, rng))
    if want("post_conv"):
        drop_seed = int(rng.integers(1 << 31))
        checks.append(_case(
            "post_conv", lambda: post_block(x, model, np.random.default_rng(drop_seed)),
            [x, *_params(model, "post_conv.")], step, tol, rng))
    logits = ad.parameter(rng.normal(scale=2.0, size=(b, length, SMALL.class_count)), "logits")
    labels = (rng.random(logits.shape) < 0.3).astype(np.float64)
    cw = np.array([3.0, 1.0, 7.5])
    sw = mask.astype(np.float64)
    if want("weighted_bce"):
        checks.append(LayerCheck("weighted_bce", ad.grad_check(
            lambda: weighted_bce(logits, labels, cw, sw), [logits], step=step, tol=tol)))
    if want("focal"):
        checks.append(LayerCheck("focal", ad.grad_check(
            lambda: focal_loss(logits, labels, 2.0, cw, sw), [logits], step=step, tol=tol)))
    return checks


def format_checks(checks: list[LayerCheck]) -> str:
    lines = []
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        lines.append(f"{c.name:<14} max_rel_error={c.report.max_rel_error:.3e}  {status}")
    return "\n".join(lines)
