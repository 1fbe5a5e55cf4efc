from dataclasses import replace

import numpy as np
import pytest

from gesa.corpus import build_vocab
from gesa.model import (ModelConfig, NumericalError, batch_examples, embed, forward_batch, init_params,
                        layer_forward, layer_view, load_checkpoint, model_forward, param_shapes,
                        prepare_example, save_checkpoint)
from gesa.synthetic import gen_synthetic, gen_synthetic_dataset

CFG = ModelConfig(L=16, H=4, n_heads=2, n_layers=2, k=2, entity_embed_dim=8, P_max=96)


def _random(cfg, vocab_size, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    return {k: v + rng.normal(0, scale, v.shape) for k, v in init_params(cfg, vocab_size, seed).items()}


def _example(seed=0, cfg=CFG):
    inst = gen_synthetic(3, 4, 1, seed)
    vocab = build_vocab([inst])
    return prepare_example(inst, vocab, cfg), vocab


def test_config_defaults_and_vocab_size():
    c = ModelConfig()
    assert (c.L, c.H, c.n_heads, c.k, c.P_max) == (64, 16, 4, 4, 128)
    assert c.V == 2 * c.k + 11
    big = ModelConfig.full_scale()
    assert (big.n_layers, big.L, big.H, big.n_heads, big.k, big.P_max, big.max_q_len, big.entity_embed_dim) == \
        (24, 1024, 64, 16, 150, 512, 90, 256)


def test_config_roundtrip_and_unknown_keys():
    c = ModelConfig(ablations=("LOCAL_E2E",), k=3)
    assert ModelConfig.from_dict(c.to_dict()) == c
    with pytest.raises(ValueError, match="unknown"):
        ModelConfig.from_dict({"L": 8, "depth": 3})
    with pytest.raises(ValueError):
        ModelConfig(w2w_mode="sparse")


def test_init_scheme():
    p = init_params(CFG, 30, 0)
    assert set(p) == set(param_shapes(CFG, 30))
    assert np.array_equal(p["layers.0.wq_e2e"], p["layers.0.wq_w2w"])
    assert (p["layers.1.ln1_g"] == 1).all() and (p["layers.1.ffn_b1"] == 0).all()
    assert p["layers.0.rel"].shape == (CFG.V, CFG.H)
    assert np.array_equal(init_params(CFG, 30, 0)["word_embeddings"], p["word_embeddings"])


def test_init_schemes_differ_in_rel_and_keys():
    rel = init_params(CFG, 30, 0)
    assert np.array_equal(rel["layers.1.wk"], rel["layers.1.wq_w2w"])
    assert 1.0 < rel["layers.0.rel"].std() < 3.0
    plain = init_params(replace(CFG, init="normal"), 30, 0)
    assert not np.array_equal(plain["layers.1.wk"], plain["layers.1.wq_w2w"])
    assert plain["layers.0.rel"].std() < 0.05
    with pytest.raises(ValueError):
        replace(CFG, init="xavier")


def test_embed_zero_params_and_identical_entities():
    ex, vocab = _example()
    zero = {k: np.zeros_like(v) for k, v in init_params(CFG, len(vocab)).items()}
    assert not embed(ex.seq, zero).any()
    x = embed(ex.seq, _random(CFG, len(vocab)))
    W = ex.seq.n_words
    assert np.array_equal(x[W + 1], x[W + 2]) and np.array_equal(x[W], x[W + 1])


def test_embed_type_only():
    ex, vocab = _example()
    p = {k: np.zeros_like(v) for k, v in init_params(CFG, len(vocab)).items()}
    p["type_embeddings"][0, 0] = 1.0
    p["type_embeddings"][1, 1] = 1.0
    x = embed(ex.seq, p)
    W = ex.seq.n_words
    assert (x[:W] == np.eye(16)[0]).all() and (x[W:] == np.eye(16)[1]).all()


def test_embed_has_no_position_term():
    ex, vocab = _example()
    p = _random(CFG, len(vocab))
    x = embed(ex.seq, p)
    ids = np.asarray(ex.seq.word_ids)
    for i, j in [(1, 5), (0, ex.seq.n_words - 1)]:
        if ids[i] == ids[j]:
            assert np.array_equal(x[i], x[j])
    same = [(i, j) for i in range(len(ids)) for j in range(i + 1, len(ids)) if ids[i] == ids[j]]
    assert same and all(np.array_equal(x[i], x[j]) for i, j in same)


def test_embed_id_out_of_range():
    ex, vocab = _example()
    with pytest.raises(IndexError):
        embed(ex.seq, init_params(CFG, 3))


def test_zero_layer_is_identity():
    ex, vocab = _example()
    lp = {k: np.zeros_like(v) for k, v in layer_view(init_params(CFG, len(vocab)), 0).items()}
    x = np.random.default_rng(0).normal(size=(ex.labels.P, 16))
    assert np.array_equal(layer_forward(x, lp, ex.labels), x)


def test_zero_ffn_leaves_attention_residual():
    from gesa.attention import attention_forward
    from gesa.model import layer_norm

    ex, vocab = _example()
    lp = layer_view(_random(CFG, len(vocab)), 0)
    for k in ("ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2"):
        lp[k] = np.zeros_like(lp[k])
    x = np.random.default_rng(1).normal(size=(ex.labels.P, 16))
    h, _ = layer_norm(x, lp["ln1_g"], lp["ln1_b"])
    expected = x + attention_forward(h, lp, ex.labels).y
    assert np.allclose(layer_forward(x, lp, ex.labels), expected, atol=1e-12)


def test_nonfinite_reports_layer():
    ex, vocab = _example()
    lp = layer_view(_random(CFG, len(vocab)), 0)
    lp["ffn_w2"] = lp["ffn_w2"].copy()
    lp["ffn_w2"][0, 0] = np.inf
    with pytest.raises(NumericalError, match="layer 3"):
        layer_forward(np.ones((ex.labels.P, 16)), lp, ex.labels, layer_index=3)


def test_model_forward_zero_layers_is_embedding():
    cfg = ModelConfig(L=16, H=4, n_heads=2, n_layers=0, k=2, entity_embed_dim=8)
    ex, vocab = _example(cfg=cfg)
    p = _random(cfg, len(vocab))
    assert np.array_equal(model_forward(ex.seq, ex.graph, p, cfg), embed(ex.seq, p))


def test_model_forward_deterministic_and_finite():
    ex, vocab = _example(3)
    p = _random(CFG, len(vocab), 3)
    a = model_forward(ex.seq, ex.graph, p, CFG)
    assert np.isfinite(a).all() and a.shape == (ex.seq.P, 16)
    assert np.array_equal(a, model_forward(ex.seq, ex.graph, p, CFG))


def test_padded_batch_matches_single():
    data = gen_synthetic_dataset(5, 3, 5, 1, seed=4)
    vocab = build_vocab(data)
    exs = [prepare_example(d, vocab, CFG) for d in data]
    p = _random(CFG, len(vocab), 2)
    batch = batch_examples(exs)
    hidden, _ = forward_batch(p, batch, CFG)
    W = batch.n_words
    for b, ex in enumerate(exs):
        single = model_forward(ex.seq, ex.graph, p, CFG)
        w, e = ex.seq.n_words, ex.seq.n_entities
        assert np.allclose(hidden[b, :w], single[:w], atol=1e-12)
        assert np.allclose(hidden[b, W:W + e], single[w:], atol=1e-12)


def test_label_matrix_built_once(monkeypatch):
    import gesa.model as model

    calls = []
    real = model.build_label_matrix

    def counting(*a, **k):
        calls.append(1)
        return real(*a, **k)

    ex, vocab = _example()
    monkeypatch.setattr(model, "build_label_matrix", counting)
    model_forward(ex.seq, ex.graph, init_params(CFG, len(vocab)), CFG)
    assert len(calls) == 1


def test_checkpoint_roundtrip(tmp_path):
    ex, vocab = _example()
    p = _random(CFG, len(vocab))
    path = tmp_path / "ck.npz"
    save_checkpoint(path, p, CFG, vocab, {"seed": 7})
    q, cfg, v2, extra = load_checkpoint(path)
    assert cfg == CFG and v2.token_to_id == vocab.token_to_id and extra == {"seed": 7}
    assert set(q) == set(p) and all(np.array_equal(q[k], p[k]) and q[k].dtype == p[k].dtype for k in p)
