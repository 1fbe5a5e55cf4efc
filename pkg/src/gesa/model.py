"""Embedding layer, pre-norm transformer stack, reader head and their gradients.

Parameters live in a flat ``dict[str, ndarray]``. Layer ``i`` owns the keys
``layers.{i}.*``; the reader owns ``reader.w`` and ``reader.b``.
"""

from __future__ import annotations

import hashlib
import math
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .attention import QUERY_KEYS, _flat, attention_backward, attention_forward_batch, relative_flags
from .corpus import ClozeInstance, Vocabulary, normalize_answer
from .graph import HeterogeneousGraph, build_graph
from .labels import W2W_MODES, LabelMatrix, LabelVocabulary, build_label_matrix, parse_ablations
from .sequence import TokenSequence, build_sequence

LN_EPS = 1e-5
CHECKPOINT_VERSION = 1
_GELU_C = math.sqrt(2.0 / math.pi)


class NumericalError(FloatingPointError):
    """Non-finite activations or loss."""


# scheme -> (weight std, R std or None for weight std, keys copied from w2w queries)
INIT_SCHEMES = {"relational": (0.05, 2.0, True), "normal": (0.02, None, False)}


@dataclass
class ModelConfig:
    P_max: int = 128
    L: int = 64
    H: int = 16
    n_heads: int = 4
    n_layers: int = 3
    k: int = 4
    entity_embed_dim: int = 32
    max_q_len: int = 32
    w2w_mode: str = "clipped_dense"
    ablations: tuple[str, ...] = ()
    dropout: float = 0.0
    dtype: str = "float64"
    # "relational": wide R, keys start equal to w2w queries; "normal": plain N(0, 0.02)
    init: str = "relational"

    def __post_init__(self):
        self.ablations = tuple(sorted(a.value for a in parse_ablations(self.ablations)))
        if self.w2w_mode not in W2W_MODES:
            raise ValueError(f"w2w_mode must be one of {W2W_MODES}")
        if min(self.L, self.H, self.n_heads, self.entity_embed_dim, self.P_max) <= 0 or self.n_layers < 0:
            raise ValueError("model dimensions must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")
        if self.init not in INIT_SCHEMES:
            raise ValueError(f"init must be one of {tuple(INIT_SCHEMES)}")

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Full-size configuration (LUKE-large geometry)."""
        base = dict(P_max=512, L=1024, H=64, n_heads=16, n_layers=24, k=150,
                    entity_embed_dim=256, max_q_len=90)
        base.update(overrides)
        return cls(**base)

    @property
    def label_vocab(self) -> LabelVocabulary:
        return LabelVocabulary(self.k, parse_ablations(self.ablations))

    @property
    def V(self) -> int:
        return len(self.label_vocab)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablations"] = list(self.ablations)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        d = dict(d)
        if "ablations" in d:
            d["ablations"] = tuple(d["ablations"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha1(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:12]


# --- parameters ------------------------------------------------------------

LAYER_KEYS = ("ln1_g", "ln1_b", *QUERY_KEYS, "wk", "wv", "wo", "rel",
              "ln2_g", "ln2_b", "ffn_w1", "ffn_b1", "ffn_w2", "ffn_b2")


def param_shapes(config: ModelConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    L, D = config.L, config.n_heads * config.H
    shapes = {
        "word_embeddings": (vocab_size, L),
        "mask_entity_embedding": (1, config.entity_embed_dim),
        "entity_projection": (config.entity_embed_dim, L),
        "type_embeddings": (2, L),
    }
    for i in range(config.n_layers):
        p = f"layers.{i}."
        shapes.update({
            p + "ln1_g": (L,), p + "ln1_b": (L,),
            **{p + q: (L, D) for q in QUERY_KEYS},
            p + "wk": (L, D), p + "wv": (L, D), p + "wo": (D, L),
            p + "rel": (config.V, config.H),
            p + "ln2_g": (L,), p + "ln2_b": (L,),
            p + "ffn_w1": (L, 4 * L), p + "ffn_b1": (4 * L,),
            p + "ffn_w2": (4 * L, L), p + "ffn_b2": (L,),
        })
    shapes["reader.w"] = (2 * L,)
    shapes["reader.b"] = (1,)
    return shapes


def init_params(config: ModelConfig, vocab_size: int, seed: int = 0, std: float | None = None) -> dict[str, np.ndarray]:
    """Zero biases/offsets, unit gains, N(0, std) elsewhere; the four query matrices start equal.

    Under the "relational" scheme R is drawn with std 2 and every key matrix
    starts as a copy of the w2w query. With small R and independent keys the
    relative term is too weak to break the symmetry between candidates, and
    training sits on a plateau at chance accuracy.
    """
    weight_std, rel_std, tie_keys = INIT_SCHEMES[config.init]
    if std is not None:
        weight_std = std
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config, vocab_size).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.endswith("_g"):
            arr = np.ones(shape)
        elif leaf.endswith("_b") or leaf in ("ffn_b1", "ffn_b2", "b"):
            arr = np.zeros(shape)
        elif leaf.startswith("wq_") and leaf != "wq_w2w":
            arr = params[name.rsplit(".", 1)[0] + ".wq_w2w"].copy()
        elif leaf == "rel":
            arr = rng.normal(0.0, weight_std if rel_std is None else rel_std, size=shape)
        else:
            arr = rng.normal(0.0, weight_std, size=shape)
        params[name] = arr.astype(config.np_dtype)
    if tie_keys:
        for i in range(config.n_layers):
            params[f"layers.{i}.wk"] = params[f"layers.{i}.wq_w2w"].copy()
    return params


def layer_view(params: Mapping[str, np.ndarray], i: int) -> dict[str, np.ndarray]:
    prefix = f"layers.{i}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


def save_checkpoint(path: str | Path, params: Mapping[str, np.ndarray], config: ModelConfig,
                    vocab: Vocabulary, extra: Mapping | None = None) -> None:
    """Write an ``.npz`` holding every named array plus a JSON metadata entry.

    The metadata records the format version, model config, vocabulary and any
    caller-supplied provenance (run config, seed, epoch).
    """
    meta = {"version": CHECKPOINT_VERSION, "config": config.to_dict(), "vocab": vocab.to_list(),
            "extra": dict(extra or {})}
    arrays = {f"param/{k}": v for k, v in params.items()}
    arrays["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path):
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        params = {k[len("param/"):]: data[k].copy() for k in data.files if k.startswith("param/")}
    config = ModelConfig.from_dict(meta["config"])
    return params, config, Vocabulary.from_list(meta["vocab"]), meta["extra"]


# --- examples and batches --------------------------------------------------

@dataclass
class Example:
    instance: ClozeInstance
    seq: TokenSequence
    graph: HeterogeneousGraph
    labels: LabelMatrix
    targets: np.ndarray = field(repr=False)  # (E,), 1.0 for scored entities matching a gold answer


def candidate_targets(seq: TokenSequence, gold_answers: Sequence[str]) -> np.ndarray:
    golds = {normalize_answer(a) for a in gold_answers}
    return np.array([float(s and normalize_answer(surf) in golds)
                     for s, surf in zip(seq.scored, seq.surfaces)])


def prepare_example(instance: ClozeInstance, vocab: Vocabulary, config: ModelConfig) -> Example:
    seq = build_sequence(instance, vocab, config.P_max, config.max_q_len)
    graph = build_graph(seq.entity_tokens, instance.mentions)
    lm = build_label_matrix(seq, graph, config.k, config.w2w_mode, parse_ablations(config.ablations),
                            config.label_vocab)
    return Example(instance, seq, graph, lm, candidate_targets(seq, instance.gold_answers))


@dataclass
class Batch:
    word_ids: np.ndarray  # (B, W)
    n_words: int
    n_entities: int
    labels: np.ndarray  # (B, P, P)
    mask: np.ndarray  # (B, P, P)
    scored: np.ndarray  # (B, E) bool
    targets: np.ndarray  # (B, E)

    @property
    def size(self) -> int:
        return self.word_ids.shape[0]


def make_batch(seqs: Sequence[TokenSequence], lms: Sequence[LabelMatrix], targets=None) -> Batch:
    """Pad to ``[W words | E entities]``.

    Padded keys are masked for real queries; padded query rows see every
    column so that softmax stays finite, and nothing reads them.
    """
    B = len(seqs)
    W = max(s.n_words for s in seqs)
    E = max(s.n_entities for s in seqs)
    P = W + E
    word_ids = np.zeros((B, W), dtype=np.int64)
    labels = np.zeros((B, P, P), dtype=np.int64)
    mask = np.ones((B, P, P), dtype=bool)
    scored = np.zeros((B, E), dtype=bool)
    tgt = np.zeros((B, E))
    for b, (s, lm) in enumerate(zip(seqs, lms)):
        w, e = s.n_words, s.n_entities
        word_ids[b, :w] = s.word_ids
        pos = np.r_[np.arange(w), W + np.arange(e)]
        valid = np.zeros(P, dtype=bool)
        valid[pos] = True
        labels[b][np.ix_(pos, pos)] = lm.labels
        m = np.zeros((P, P), dtype=bool)
        m[np.ix_(pos, pos)] = lm.mask
        m[~valid] = True
        mask[b] = m
        scored[b, :e] = s.scored
        if targets is not None:
            tgt[b, :e] = targets[b]
    return Batch(word_ids, W, E, labels, mask, scored, tgt)


def batch_examples(examples: Sequence[Example]) -> Batch:
    return make_batch([ex.seq for ex in examples], [ex.labels for ex in examples],
                      [ex.targets for ex in examples])


# --- forward / backward ----------------------------------------------------

def embed_batch(params, batch: Batch) -> np.ndarray:
    """Token embedding plus word/entity type embedding. No position term."""
    wemb = params["word_embeddings"]
    if batch.word_ids.size and (batch.word_ids.min() < 0 or batch.word_ids.max() >= wemb.shape[0]):
        raise IndexError("word id out of vocabulary range")
    types = params["type_embeddings"]
    words = wemb[batch.word_ids] + types[0]
    ent_row = (params["mask_entity_embedding"] @ params["entity_projection"])[0] + types[1]
    ents = np.broadcast_to(ent_row, (batch.size, batch.n_entities, ent_row.shape[0]))
    return np.concatenate([words, ents], axis=1)


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd, g)


def layer_norm_backward(dy, cache):
    xhat, rstd, g = cache
    dg = (dy * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0)
    db = dy.reshape(-1, xhat.shape[-1]).sum(axis=0)
    dxhat = dy * g
    n = xhat.shape[-1]
    dx = rstd / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                     - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
    return dx, dg, db


def gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * (x * x * x)))
    return 0.5 * x * (1.0 + t), t


def gelu_backward(dy, x, t):
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner)


def _dropout(x, rate, rng):
    if rate <= 0.0 or rng is None:
        return x, None
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * keep, keep


def layer_forward_batch(x, lp, labels, mask, W, rel_on, dropout=0.0, rng=None, layer_index=0):
    h1, ln1 = layer_norm(x, lp["ln1_g"], lp["ln1_b"])
    a, attn_cache = attention_forward_batch(h1, lp, labels, mask, W, rel_on)
    a, drop1 = _dropout(a, dropout, rng)
    x1 = x + a
    h2, ln2 = layer_norm(x1, lp["ln2_g"], lp["ln2_b"])
    u = h2 @ lp["ffn_w1"] + lp["ffn_b1"]
    g, t = gelu(u)
    f = g @ lp["ffn_w2"] + lp["ffn_b2"]
    f, drop2 = _dropout(f, dropout, rng)
    out = x1 + f
    if not np.isfinite(out).all():
        raise NumericalError(f"non-finite activations in layer {layer_index}")
    return out, dict(ln1=ln1, attn=attn_cache, drop1=drop1, ln2=ln2, h2=h2, u=u, g=g, t=t, drop2=drop2)


def layer_backward_batch(dout, lp, cache):
    grads = {}
    df = dout if cache["drop2"] is None else dout * cache["drop2"]
    grads["ffn_b2"] = df.reshape(-1, df.shape[-1]).sum(axis=0)
    grads["ffn_w2"] = _flat(cache["g"]).T @ _flat(df)
    du = gelu_backward(df @ lp["ffn_w2"].T, cache["u"], cache["t"])
    grads["ffn_b1"] = du.reshape(-1, du.shape[-1]).sum(axis=0)
    grads["ffn_w1"] = _flat(cache["h2"]).T @ _flat(du)
    dh2 = du @ lp["ffn_w1"].T
    dx1_ln, grads["ln2_g"], grads["ln2_b"] = layer_norm_backward(dh2, cache["ln2"])
    dx1 = dout + dx1_ln
    da = dx1 if cache["drop1"] is None else dx1 * cache["drop1"]
    dh1, attn_grads = attention_backward(da, lp, cache["attn"])
    grads.update(attn_grads)
    dx_ln, grads["ln1_g"], grads["ln1_b"] = layer_norm_backward(dh1, cache["ln1"])
    return dx1 + dx_ln, grads


def forward_batch(params, batch: Batch, config: ModelConfig, train_rng=None):
    """Run embedding and all layers; returns (hidden (B, P, L), caches)."""
    rel_on = relative_flags(parse_ablations(config.ablations))
    x = embed_batch(params, batch)
    caches = []
    for i in range(config.n_layers):
        x, c = layer_forward_batch(x, layer_view(params, i), batch.labels, batch.mask, batch.n_words,
                                   rel_on, config.dropout, train_rng, i)
        caches.append(c)
    return x, caches


def reader_logits(params, hidden, W: int) -> np.ndarray:
    """Logit of f_o([y_plc; y_e]) for every entity slot, shape (B, E)."""
    L = hidden.shape[-1]
    w = params["reader.w"]
    y_plc = hidden[:, W]
    y_e = hidden[:, W:]
    return (y_plc @ w[:L])[:, None] + y_e @ w[L:] + params["reader.b"][0]


def _bce_from_logits(z, t):
    # softplus(z) - t z == -[t ln s + (1 - t) ln(1 - s)] with s = sigmoid(z)
    return np.logaddexp(0.0, z) - t * z


def loss_and_grads(params, batch: Batch, config: ModelConfig, train_rng=None, need_grads=True):
    """Mean over instances of the per-instance mean BCE over scored candidates."""
    hidden, caches = forward_batch(params, batch, config, train_rng)
    W = batch.n_words
    z = reader_logits(params, hidden, W)
    n_cand = batch.scored.sum(axis=1)
    if (n_cand == 0).any():
        raise ValueError("instance without scored candidates in batch")
    weight = batch.scored / n_cand[:, None] / batch.size
    loss = float((_bce_from_logits(z, batch.targets) * weight).sum())
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    if not need_grads:
        return loss, None, z
    dz = ((1.0 / (1.0 + np.exp(-z)) - batch.targets) * weight).astype(hidden.dtype)

    L = hidden.shape[-1]
    w = params["reader.w"]
    grads = {"reader.b": np.array([dz.sum()], dtype=hidden.dtype)}
    y_plc, y_e = hidden[:, W], hidden[:, W:]
    grads["reader.w"] = np.concatenate([dz.sum(axis=1) @ y_plc, np.einsum("be,bel->l", dz, y_e)])
    dx = np.zeros_like(hidden)
    dx[:, W] += dz.sum(axis=1)[:, None] * w[:L]
    dx[:, W:] += dz[:, :, None] * w[L:]

    for i in reversed(range(config.n_layers)):
        dx, lg = layer_backward_batch(dx, layer_view(params, i), caches[i])
        for k, v in lg.items():
            grads[f"layers.{i}.{k}"] = v

    dwords, dents = dx[:, :W], dx[:, W:]
    dwe = np.zeros_like(params["word_embeddings"])
    np.add.at(dwe, batch.word_ids.ravel(), dwords.reshape(-1, L))
    # padded word slots read id 0; their rows never reach the loss so dwords there is 0
    grads["word_embeddings"] = dwe
    dent_row = dents.reshape(-1, L).sum(axis=0)
    grads["type_embeddings"] = np.stack([dwords.reshape(-1, L).sum(axis=0), dent_row])
    m = params["mask_entity_embedding"]
    grads["entity_projection"] = m.T @ dent_row[None]
    grads["mask_entity_embedding"] = (params["entity_projection"] @ dent_row)[None]
    return loss, grads, z


# --- single-instance API ---------------------------------------------------

def embed(seq: TokenSequence, params) -> np.ndarray:
    lm = LabelMatrix(np.zeros((seq.P, seq.P), dtype=np.int64), np.ones((seq.P, seq.P), dtype=bool),
                     seq.n_words, seq.n_entities, LabelVocabulary(0))
    return embed_batch(params, make_batch([seq], [lm]))[0]


def layer_forward(x, lp, labels: LabelMatrix, ablations=(), layer_index=0) -> np.ndarray:
    out, _ = layer_forward_batch(x[None], lp, labels.labels[None], labels.mask[None], labels.n_words,
                                 relative_flags(parse_ablations(ablations)), layer_index=layer_index)
    return out[0]


def model_forward(seq: TokenSequence, graph: HeterogeneousGraph, params, config: ModelConfig) -> np.ndarray:
    """Final hidden states (P, L); the label matrix is built once and shared by every layer."""
    lm = build_label_matrix(seq, graph, config.k, config.w2w_mode, parse_ablations(config.ablations),
                            config.label_vocab)
    hidden, _ = forward_batch(params, make_batch([seq], [lm]), config)
    return hidden[0]
