from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from tablegraph import autodiff as ad
from tablegraph.doc import DEFAULT_SCHEMA, Annotation, ClassSchema, Page, WordBox
from tablegraph.features import MAX_CHARS, N_CHARS, N_SYMBOLS, PAD_INDEX
from tablegraph.geometry import MISSING
from tablegraph.network import (
    AdamHyper,
    AdamState,
    CheckpointError,
    Model,
    ModelConfig,
    TrainConfig,
    adam_step,
    char_embed,
    class_weights,
    collate,
    focal_loss,
    forward,
    graph_conv,
    load_checkpoint,
    pad_batch,
    predict_proba,
    prepare_sample,
    save_checkpoint,
    self_attention,
    seq_conv,
    train,
    weighted_bce,
)
from tablegraph.network.gradcheck import format_checks, run_layer_checks
from tablegraph.network.model import char_embed_dense, dense
from tablegraph.network.train import EarlyStopping, bucketed_order, class_mask

SMALL = ModelConfig(class_count=4, n_neighbors=1, char_filters=6, hidden_width=16,
                    attention_units=16, attention_heads=4, ffn_width=12)


def _random_chars(rng, shape):
    chars = np.full(shape + (MAX_CHARS,), PAD_INDEX)
    for ix in np.ndindex(shape):
        n = rng.integers(0, 12)
        chars[ix][:n] = rng.integers(0, N_CHARS, n)
    return chars


def _samples(records, n=1, schema=DEFAULT_SCHEMA):
    from tablegraph.network import samples_from_records

    return samples_from_records(records, schema, n)


# ---------------------------------------------------------------- char conv


def test_char_embed_all_pad_is_constant():
    model = Model.init(SMALL, 0)
    out = char_embed(np.full((2, 3, MAX_CHARS), PAD_INDEX), model).data
    assert out.shape == (2, 3, SMALL.char_filters)
    w = model["char_conv.w"].data.reshape(SMALL.char_kernel, N_SYMBOLS, -1)
    want = np.maximum(w[:, PAD_INDEX].sum(axis=0) + model["char_conv.b"].data, 0)
    np.testing.assert_allclose(out, np.broadcast_to(want, out.shape), atol=1e-15)


def test_char_embed_matches_one_hot_convolution():
    rng = np.random.default_rng(0)
    model = Model.init(SMALL, 1)
    chars = _random_chars(rng, (3, 7))
    chars[0, 0, :] = rng.integers(0, N_CHARS, MAX_CHARS)  # a full-length word
    onehot = np.eye(N_SYMBOLS)[chars]
    np.testing.assert_allclose(char_embed(chars, model).data, char_embed_dense(onehot, model).data,
                               rtol=0, atol=1e-12)


def test_char_embed_permutation_equivariant():
    rng = np.random.default_rng(1)
    model = Model.init(SMALL, 2)
    chars = _random_chars(rng, (9,))
    perm = rng.permutation(9)
    np.testing.assert_array_equal(char_embed(chars[perm], model).data, char_embed(chars, model).data[perm])


# ---------------------------------------------------------------- graph conv


def test_graph_conv_all_missing_depends_only_on_self():
    rng = np.random.default_rng(2)
    model = Model.init(SMALL, 0)
    h = ad.Tensor(rng.normal(size=(1, 5, 16)))
    nb = np.full((1, 5, 4), MISSING)
    out = graph_conv(h, nb, model).data
    w = model["graph.w"].data[:16]
    np.testing.assert_allclose(out, np.maximum(h.data @ w + model["graph.b"].data, 0), atol=1e-12)


def test_graph_conv_zero_neighbors_is_dense():
    cfg = replace(SMALL, n_neighbors=0)
    model = Model.init(cfg, 0)
    h = ad.Tensor(np.random.default_rng(3).normal(size=(2, 4, 16)))
    out = graph_conv(h, np.zeros((2, 4, 0), dtype=np.int64), model).data
    np.testing.assert_array_equal(out, dense(h, model, "graph").data)


def test_graph_conv_hand_chain():
    # 3 boxes in a row, width-1 features, identity-like weights
    cfg = ModelConfig(class_count=1, n_neighbors=1, hidden_width=1, attention_units=1, attention_heads=1,
                      use_attention=False)
    model = Model.init(cfg, 0)
    # slots: self, left, top, right, bottom
    model["graph.w"].data = np.array([[1.0], [10.0], [0.0], [100.0], [0.0]])
    model["graph.b"].data = np.array([0.5])
    h = ad.Tensor(np.array([[[1.0], [2.0], [3.0]]]))
    nb = np.array([[[MISSING, MISSING, 1, MISSING], [0, MISSING, 2, MISSING], [1, MISSING, MISSING, MISSING]]])
    out = graph_conv(h, nb, model).data.ravel()
    np.testing.assert_array_equal(out, [1 + 200 + 0.5, 2 + 10 + 300 + 0.5, 3 + 20 + 0.5])
    with pytest.raises(IndexError):
        graph_conv(h, np.full((1, 3, 4), 3), model)


# ---------------------------------------------------------------- seq conv


def test_seq_conv_kernel_one_is_per_box_dense():
    cfg = replace(SMALL, seq_conv_kernel=1)
    model = Model.init(cfg, 0)
    h = ad.Tensor(np.random.default_rng(4).normal(size=(2, 6, 16)))
    np.testing.assert_allclose(seq_conv(h, model).data, dense(h, model, "seq_conv").data, atol=1e-14)


def test_seq_conv_constant_input_constant_interior():
    model = Model.init(SMALL, 0)
    h = ad.Tensor(np.ones((1, 9, 16)))
    out = seq_conv(h, model).data[0]
    for row in out[2:-2]:
        np.testing.assert_allclose(row, out[2], atol=1e-14)


def test_seq_conv_hand_kernel():
    cfg = ModelConfig(class_count=1, hidden_width=1, attention_units=1, attention_heads=1, seq_conv_kernel=3,
                      use_attention=False)
    model = Model.init(cfg, 0)
    model["seq_conv.w"].data = np.array([[1.0], [10.0], [100.0]])  # taps at t-1, t, t+1
    model["seq_conv.b"].data = np.array([0.0])
    h = ad.Tensor(np.array([[[1.0], [2.0], [3.0], [4.0]]]))
    np.testing.assert_array_equal(seq_conv(h, model).data.ravel(), [210.0, 321.0, 432.0, 43.0])


# ---------------------------------------------------------------- attention


def test_attention_single_box_attends_to_itself():
    model = Model.init(SMALL, 0)
    h = ad.Tensor(np.random.default_rng(5).normal(size=(1, 1, 16)))
    _, weights = self_attention(h, np.ones((1, 1), bool), model, return_weights=True)
    np.testing.assert_array_equal(weights.data, 1.0)


def test_attention_rows_normalized_over_real_keys():
    model = Model.init(SMALL, 0)
    rng = np.random.default_rng(6)
    h = ad.Tensor(rng.normal(size=(2, 5, 16)))
    mask = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], bool)
    _, w = self_attention(h, mask, model, return_weights=True)
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-14)
    assert (w.data[1, :, :, 3:] == 0).all()
    with pytest.raises(ValueError, match="padding"):
        self_attention(h, np.zeros((2, 5), bool), model)


def test_attention_permutation_equivariant():
    model = Model.init(SMALL, 0)
    rng = np.random.default_rng(7)
    h = rng.normal(size=(1, 6, 16))
    perm = rng.permutation(6)
    mask = np.ones((1, 6), bool)
    a = self_attention(ad.Tensor(h), mask, model).data
    b = self_attention(ad.Tensor(h[:, perm]), mask, model).data
    np.testing.assert_allclose(b, a[:, perm], atol=1e-12)


def test_every_layer_passes_gradient_check():
    checks = run_layer_checks()
    assert {c.name for c in checks} == {"char_conv", "dense", "graph_conv", "seq_conv", "attention",
                                        "post_conv", "weighted_bce", "focal"}
    assert all(c.passed for c in checks), format_checks(checks)


def test_gradient_check_catches_injected_bug(monkeypatch):
    real = ad.relu

    def wrong_relu(x):
        x = ad.as_tensor(x)
        positive = x.data > 0
        return ad._make(np.where(positive, x.data, 0.0), (x,), lambda g: (g * positive * 1.5,))

    monkeypatch.setattr(ad, "relu", wrong_relu)
    checks = run_layer_checks(only={"seq_conv"})
    monkeypatch.setattr(ad, "relu", real)
    assert not checks[0].passed


# ---------------------------------------------------------------- full model


@pytest.fixture(scope="module")
def samples(small_records):
    return _samples(small_records[:6])


def test_forward_probabilities_and_eval_determinism(samples):
    model = Model.init(SMALL, 0)
    batch = collate(samples[:3])
    p1, p2 = predict_proba(batch, model), predict_proba(batch, model)
    assert p1.shape == batch.labels.shape
    assert ((p1 > 0) & (p1 < 1)).all()
    np.testing.assert_array_equal(p1, p2)
    # training mode is stochastic
    a = forward(batch, model, np.random.default_rng(0)).data
    b = forward(batch, model, np.random.default_rng(1)).data
    assert not np.array_equal(a, b)


def test_zero_output_layer_gives_one_half(samples):
    model = Model.init(SMALL, 0)
    model["output.w"].data[:] = 0
    model["output.b"].data[:] = 0
    np.testing.assert_array_equal(predict_proba(collate(samples[:2]), model), 0.5)


def test_padding_does_not_leak_into_real_rows(samples):
    model = Model.init(SMALL, 3)
    alone = forward(collate([samples[0]]), model).data[0]
    n = len(samples[0])
    longer = max(samples, key=len)
    assert len(longer) > n
    mixed = forward(collate([samples[0], longer]), model).data[0, :n]
    np.testing.assert_allclose(mixed, alone, rtol=0, atol=1e-12)


@pytest.mark.parametrize("flag", ["use_attention", "use_seq_conv", "use_dropout_block", "use_text_features",
                                  "use_char_embedding"])
def test_ablations_build_and_run(samples, flag):
    cfg = replace(SMALL, **{flag: False})
    model = Model.init(cfg, 0)
    p = predict_proba(collate(samples[:2]), model)
    assert np.isfinite(p).all()
    if flag in ("use_attention", "use_seq_conv", "use_dropout_block", "use_char_embedding"):
        assert model.parameter_count() < Model.init(SMALL, 0).parameter_count()


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(attention_units=64, attention_heads=7)
    with pytest.raises(ValueError):
        ModelConfig(dropout_rate=1.0)
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_dict({"bogus": 1})


# ---------------------------------------------------------------- losses


def _ref_bce(logits, labels, cw, sw):
    total = 0.0
    for ix in np.ndindex(labels.shape):
        p = 1 / (1 + math.exp(-logits[ix]))
        y = labels[ix]
        w = sw[ix[:-1]] * (cw[ix[-1]] if y else 1.0)
        total += -w * (y * math.log(p) + (1 - y) * math.log(1 - p))
    return total / (sw.sum() * labels.shape[-1])


def _ref_focal(logits, labels, cw, sw, gamma):
    total = 0.0
    for ix in np.ndindex(labels.shape):
        p = 1 / (1 + math.exp(-logits[ix]))
        y = labels[ix]
        pt = p if y else 1 - p
        w = sw[ix[:-1]] * (cw[ix[-1]] if y else 1.0)
        total += -w * (1 - pt) ** gamma * math.log(pt)
    return total / (sw.sum() * labels.shape[-1])


def test_loss_reference_values():
    rng = np.random.default_rng(8)
    logits = rng.normal(scale=2, size=(2, 5, 3))
    labels = (rng.random((2, 5, 3)) < 0.3).astype(float)
    cw = np.array([2.0, 1.0, 9.0])
    sw = np.array([[1, 1, 1, 1, 1], [1, 1, 1, 0, 0]], float)
    got = float(weighted_bce(ad.Tensor(logits), labels, cw, sw).data)
    assert got == pytest.approx(_ref_bce(logits, labels, cw, sw), rel=1e-12)
    got = float(focal_loss(ad.Tensor(logits), labels, 2.0, cw, sw).data)
    assert got == pytest.approx(_ref_focal(logits, labels, cw, sw, 2.0), rel=1e-12)


def test_loss_trivial_cases():
    labels = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert float(weighted_bce(ad.Tensor(np.zeros((2, 2))), labels).data) == pytest.approx(math.log(2), abs=1e-15)
    confident = ad.Tensor(np.where(labels == 1, 40.0, -40.0))
    assert float(weighted_bce(confident, labels).data) < 1e-15
    assert float(focal_loss(confident, labels).data) < 1e-30


def test_focal_gamma_zero_equals_bce():
    rng = np.random.default_rng(9)
    logits = ad.Tensor(rng.normal(scale=3, size=(3, 7, 4)))
    labels = (rng.random((3, 7, 4)) < 0.2).astype(float)
    cw = class_weights(labels)
    a = float(weighted_bce(logits, labels, cw).data)
    b = float(focal_loss(logits, labels, 0.0, cw).data)
    assert abs(a - b) <= 1e-12


def test_loss_invariant_to_padding(samples):
    model = Model.init(SMALL, 0)
    base = collate(samples[:2])
    padded = collate(samples[:2] + [samples[3]])
    # make the third document all padding
    padded.mask[2] = False
    padded.sample_weights[2] = 0
    cw = class_weights(base.labels, base.sample_weights)
    for fn in (weighted_bce, lambda z, y, w, s: focal_loss(z, y, 2.0, w, s)):
        a = float(fn(forward(base, model), base.labels, cw, base.sample_weights).data)
        b = float(fn(forward(padded, model), padded.labels, cw, padded.sample_weights).data)
        assert abs(a - b) <= 1e-12


def test_class_weights_clipped():
    labels = np.zeros((1000, 3))
    labels[:1, 0] = 1
    labels[:500, 1] = 1
    labels[:, 2] = 1
    np.testing.assert_allclose(class_weights(labels), [100.0, 1.0, 1.0])
    labels[:5, 0] = 1
    assert class_weights(labels)[0] == pytest.approx(1000 / 15)


def test_loss_rejects_bad_inputs():
    with pytest.raises(ValueError, match="shape"):
        weighted_bce(ad.Tensor(np.zeros((2, 2))), np.zeros((2, 3)))
    with pytest.raises(ValueError, match="0 or 1"):
        weighted_bce(ad.Tensor(np.zeros((2, 2))), np.full((2, 2), 0.5))


def test_class_mask_targets():
    assert class_mask("lineitems", DEFAULT_SCHEMA).tolist() == [1, 1, 0, 0]
    assert class_mask("others", DEFAULT_SCHEMA).tolist() == [0, 0, 1, 1]
    assert class_mask("no-header", DEFAULT_SCHEMA).tolist() == [1, 0, 1, 1]


# ---------------------------------------------------------------- batching


def test_collate_padding(samples):
    by_len = sorted(samples, key=len)
    a, b = by_len[0], by_len[-1]
    batch = collate([a, b])
    assert batch.shape == (2, len(b))
    assert batch.mask[0].sum() == len(a) and batch.sample_weights[0, len(a):].sum() == 0
    assert (batch.rows[0, len(a):] == 0).all() and (batch.chars[0, len(a):] == PAD_INDEX).all()
    assert (batch.neighbors[0, len(a):] == MISSING).all()
    same = collate([a, a])
    assert same.shape == (2, len(a)) and same.mask.all()


def test_pad_batch_and_bucketing(samples):
    batches = pad_batch(samples, 4)
    n = len(samples)
    assert [len(b.lengths) for b in batches] == [4] * (n // 4) + ([n % 4] if n % 4 else [])
    order = bucketed_order(samples, 2, np.random.default_rng(0))
    assert sorted(order.tolist()) == list(range(len(samples)))
    again = bucketed_order(samples, 2, np.random.default_rng(0))
    np.testing.assert_array_equal(order, again)


def test_prepare_sample_neighbors_use_sequence_positions():
    page = Page(1, 1, (WordBox(0, (0.5, 0.1, 0.6, 0.2), "b"), WordBox(1, (0.1, 0.1, 0.2, 0.2), "a")))
    s = prepare_sample(page, [Annotation(0, (0.45, 0.05, 0.65, 0.25))], DEFAULT_SCHEMA, 1)
    assert s.features.order.tolist() == [1, 0]
    # sequence position 0 is box 1 (left), whose right neighbor is position 1
    assert s.neighbors[0].tolist() == [MISSING, MISSING, 1, MISSING]
    assert s.labels[:, 0].tolist() == [0, 1]


# ---------------------------------------------------------------- optimizer


def test_adam_zero_gradient_and_first_step():
    p = {"w": np.array([1.0, -2.0])}
    new, _ = adam_step(p, {"w": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(new["w"], p["w"])
    new, _ = adam_step(p, {"w": np.array([1e3, -1e3])}, AdamState())
    np.testing.assert_allclose(new["w"] - p["w"], [-1e-3, 1e-3], rtol=1e-6)


def test_adam_matches_scalar_reference_and_converges():
    hyper = AdamHyper(lr=0.02)
    x, state = {"x": np.array(0.5)}, AdamState()
    rx, m, v = 0.5, 0.0, 0.0
    for t in range(1, 101):
        g = 2 * x["x"]
        x, state = adam_step(x, {"x": g}, state, hyper)
        rg = 2 * rx
        m = 0.9 * m + 0.1 * rg
        v = 0.999 * v + 0.001 * rg * rg
        rx -= 0.02 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert float(x["x"]) == pytest.approx(rx, abs=1e-14)
    assert abs(float(x["x"])) < 1e-3


# ---------------------------------------------------------------- training


def test_early_stopping_rule():
    stop = EarlyStopping(1)
    assert not stop.update(0, 1.0)
    assert stop.update(1, 1.5)  # worse: stops after the second epoch
    stop = EarlyStopping(2)
    assert [stop.update(e, v) for e, v in enumerate([3.0, 2.0, 2.0, 1.0, 1.5, 1.2])] == \
        [False, False, False, False, False, True]
    assert stop.best_epoch == 3


def test_zero_learning_rate_leaves_parameters(samples):
    cfg = TrainConfig(lr=0.0, max_epochs=2, batch_size=3)
    model, hist = train(samples[:3], samples[3:5], SMALL, cfg, DEFAULT_SCHEMA)
    ref = Model.init(SMALL, cfg.seed)
    for k in ref.params:
        np.testing.assert_array_equal(model[k].data, ref[k].data)
    assert len(hist.epochs) == 2


def _toy_samples(rng, count):
    schema = ClassSchema(("right_half", "other"), 0, 1)
    out = []
    for _ in range(count):
        boxes = []
        for i in range(12):
            l, t = rng.uniform(0, 0.9), rng.uniform(0, 0.95)
            boxes.append(WordBox(i, (l, t, l + 0.05, t + 0.02), "w"))
        page = Page(1, 1, tuple(boxes))
        s = prepare_sample(page, [], schema, 1)
        s.labels[:, 0] = (s.features.coords[:, 0] > 0.5).astype(np.int8)
        out.append(s)
    return out, schema


def test_separable_toy_problem_is_learned():
    rng = np.random.default_rng(10)
    tr, schema = _toy_samples(rng, 16)
    va, _ = _toy_samples(rng, 4)
    cfg = ModelConfig(class_count=2, char_filters=4, hidden_width=8, attention_units=8, attention_heads=2,
                      ffn_width=8)
    tcfg = TrainConfig(max_epochs=200, patience=200, batch_size=8, augment=False, targets="all")
    _, hist = train(tr, va, cfg, tcfg, schema)
    assert min(e.train_loss for e in hist.epochs) < 0.05


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises(samples):
    from tablegraph.network import TrainingDiverged

    import copy

    bad = copy.deepcopy(samples[0])
    bad.features.text[0, 0] = np.nan
    with pytest.raises(TrainingDiverged):
        train([bad], samples[1:3], SMALL, TrainConfig(max_epochs=1, augment=False), DEFAULT_SCHEMA)


# ---------------------------------------------------------------- checkpoints


def test_checkpoint_roundtrip(tmp_path, samples):
    model = Model.init(SMALL, 4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, {"note": "x"})
    loaded, extra = load_checkpoint(path)
    assert extra == {"note": "x"} and loaded.config == model.config
    for k in model.params:
        np.testing.assert_array_equal(loaded[k].data, model[k].data)
    batch = collate(samples[:2])
    np.testing.assert_array_equal(predict_proba(batch, loaded), predict_proba(batch, model))
    (tmp_path / "bad.ckpt").write_bytes(b"nope")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
