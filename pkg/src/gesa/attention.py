"""Entity-aware self-attention with relative-position label embeddings.

Scores for a query row i and key column j are

    (q_i . k_j + q_i . R[label(i, j)]) / sqrt(H)

where q_i comes from one of four query projections picked by the (type(i),
type(j)) pair: w2w, w2e, e2w or e2e. The EQ3_IN_* ablations drop the
label term. ``R`` has one row per label and width H, shared by all heads of a
layer.

Everything works on padded batches laid out as ``[words | entities]`` with a
common word count ``W`` per batch; forward passes return a cache consumed by
:func:`attention_backward`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .labels import Ablation, LabelMatrix

BLOCKS = ("w2w", "w2e", "e2w", "e2e")
QUERY_KEYS = tuple(f"wq_{b}" for b in BLOCKS)


def relative_flags(ablations=()) -> dict[str, bool]:
    """Which blocks keep the label term."""
    ab = frozenset(ablations)
    mixed = Ablation.EQ3_IN_W2E_E2W_E2E not in ab
    return {"w2w": Ablation.EQ3_IN_W2W not in ab, "w2e": mixed, "e2w": mixed, "e2e": mixed}


def _block_slices(W: int, P: int) -> dict[str, tuple[slice, slice]]:
    w, e = slice(0, W), slice(W, P)
    return {"w2w": (w, w), "w2e": (w, e), "e2w": (e, w), "e2e": (e, e)}


def _flat(t: np.ndarray) -> np.ndarray:
    return t.reshape(-1, t.shape[-1])


def _split_heads(t: np.ndarray, n_heads: int) -> np.ndarray:
    B, P, D = t.shape
    return t.reshape(B, P, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(t: np.ndarray) -> np.ndarray:
    B, nh, P, H = t.shape
    return t.transpose(0, 2, 1, 3).reshape(B, P, nh * H)


def softmax_masked(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    s = np.where(mask, scores, -np.inf)
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def attention_forward_batch(h, params: Mapping[str, np.ndarray], labels, mask, W: int, rel_on: Mapping[str, bool]):
    """Batched forward. ``h``: (B, P, L); ``labels``/``mask``: (B, P, P).

    Returns (out (B, P, L), cache).
    """
    B, P, _ = h.shape
    rel = params["rel"]
    H = rel.shape[1]
    nh = params["wk"].shape[1] // H
    scale = 1.0 / math.sqrt(H)

    K = _split_heads(h @ params["wk"], nh)
    V = _split_heads(h @ params["wv"], nh)
    S = np.empty((B, nh, P, P), dtype=h.dtype)
    Qs = {}
    for name, (rows, cols) in _block_slices(W, P).items():
        Q = _split_heads(h[:, rows] @ params[f"wq_{name}"], nh)
        Qs[name] = Q
        Sb = Q @ K[:, :, cols].swapaxes(-1, -2)
        if rel_on[name]:
            QR = Q @ rel.T
            Sb = Sb + np.take_along_axis(QR, labels[:, None, rows, cols], axis=-1)
        S[:, :, rows, cols] = Sb
    A = softmax_masked(S * scale, mask[:, None])
    Oc = _merge_heads(A @ V)
    out = Oc @ params["wo"]
    cache = dict(h=h, K=K, V=V, Qs=Qs, A=A, Oc=Oc, labels=labels, W=W, rel_on=dict(rel_on), nh=nh, scale=scale)
    return out, cache


def _scatter_labels(dS: np.ndarray, lab: np.ndarray, n_labels: int) -> np.ndarray:
    """d(QR)[b,h,i,v] = sum_j dS[b,h,i,j] * [lab[b,i,j] == v]."""
    B, nh, Pi, Pj = dS.shape
    if dS.size == 0:
        return np.zeros((B, nh, Pi, n_labels), dtype=dS.dtype)
    row = (np.arange(B * nh * Pi).reshape(B, nh, Pi, 1)) * n_labels
    idx = row + lab[:, None]
    out = np.bincount(idx.ravel(), weights=dS.ravel(), minlength=B * nh * Pi * n_labels)
    return out.reshape(B, nh, Pi, n_labels).astype(dS.dtype, copy=False)


def attention_backward(dout: np.ndarray, params: Mapping[str, np.ndarray], cache):
    """Return (dh, grads) for the batch forward that produced ``cache``."""
    h, K, V, A, Oc = cache["h"], cache["K"], cache["V"], cache["A"], cache["Oc"]
    nh, W, scale, labels = cache["nh"], cache["W"], cache["scale"], cache["labels"]
    rel = params["rel"]
    B, P, _ = h.shape
    grads = {}

    grads["wo"] = _flat(Oc).T @ _flat(dout)
    dO = _split_heads(dout @ params["wo"].T, nh)
    dA = dO @ V.swapaxes(-1, -2)
    dV = A.swapaxes(-1, -2) @ dO
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) * scale

    dK = np.zeros_like(K)
    drel = np.zeros_like(rel)
    dh = np.zeros_like(h)
    for name, (rows, cols) in _block_slices(W, P).items():
        Q = cache["Qs"][name]
        dSb = dS[:, :, rows, cols]
        dQ = dSb @ K[:, :, cols]
        dK[:, :, cols] += dSb.swapaxes(-1, -2) @ Q
        if cache["rel_on"][name]:
            dQR = _scatter_labels(dSb, labels[:, rows, cols], rel.shape[0])
            dQ += dQR @ rel
            drel += _flat(dQR).T @ _flat(Q)
        dQm = _merge_heads(dQ)
        wq = params[f"wq_{name}"]
        grads[f"wq_{name}"] = _flat(h[:, rows]).T @ _flat(dQm)
        dh[:, rows] += dQm @ wq.T
    grads["rel"] = drel
    dKm, dVm = _merge_heads(dK), _merge_heads(dV)
    grads["wk"] = _flat(h).T @ _flat(dKm)
    grads["wv"] = _flat(h).T @ _flat(dVm)
    dh += dKm @ params["wk"].T + dVm @ params["wv"].T
    return dh, grads


# --- single-instance API ---------------------------------------------------

@dataclass
class AttentionOutput:
    y: np.ndarray  # (P, L)
    a: np.ndarray  # (heads, P, P)


def _single(x, labels: LabelMatrix):
    return x[None], labels.labels[None], labels.mask[None]


def attention_scores(x, params, labels: LabelMatrix, head: int, ablations=()) -> np.ndarray:
    """Scaled pre-softmax scores of one head; masked cells are -inf."""
    rel = params["rel"]
    H = rel.shape[1]
    nh = params["wk"].shape[1] // H
    if not 0 <= head < nh:
        raise IndexError(f"head {head} out of range for {nh} heads")
    if x.shape != (labels.P, params["wk"].shape[0]):
        raise ValueError(f"x has shape {x.shape}, expected {(labels.P, params['wk'].shape[0])}")
    rel_on = relative_flags(ablations)
    W, P = labels.n_words, labels.P
    sl = slice(head * H, (head + 1) * H)
    k = x @ params["wk"][:, sl]
    S = np.empty((P, P), dtype=x.dtype)
    for name, (rows, cols) in _block_slices(W, P).items():
        q = x[rows] @ params[f"wq_{name}"][:, sl]
        Sb = q @ k[cols].T
        if rel_on[name]:
            Sb = Sb + np.take_along_axis(q @ rel.T, labels.labels[rows, cols], axis=-1)
        S[rows, cols] = Sb
    return np.where(labels.mask, S / np.sqrt(H), -np.inf)


def attention_forward(x, params, labels: LabelMatrix, ablations=()) -> AttentionOutput:
    if x.shape[0] != labels.P:
        raise ValueError(f"x has {x.shape[0]} rows, label matrix is {labels.P} x {labels.P}")
    if not labels.mask.any(axis=1).all():
        raise ValueError("a token has every attention cell masked")
    xb, lab, mask = _single(x, labels)
    out, cache = attention_forward_batch(xb, params, lab, mask, labels.n_words, relative_flags(ablations))
    return AttentionOutput(out[0], cache["A"][0])
