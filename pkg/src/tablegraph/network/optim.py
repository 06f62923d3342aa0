from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    hyper: AdamHyper = AdamHyper(),
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update. Returns new arrays; inputs are not mutated."""
    t = state.step + 1
    new_params, m_out, v_out = {}, {}, {}
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        m = hyper.beta1 * state.m.get(name, np.zeros_like(p)) + (1 - hyper.beta1) * g
        v = hyper.beta2 * state.v.get(name, np.zeros_like(p)) + (1 - hyper.beta2) * g * g
        new_params[name] = p - hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        m_out[name], v_out[name] = m, v
    return new_params, AdamState(t, m_out, v_out)
