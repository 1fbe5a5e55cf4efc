"""Relative-position label vocabulary and the P x P label/mask matrix.

The matrix is partitioned by token type into w2w, w2e, e2w and e2e blocks.
Words use clipped window offsets with dedicated labels for the global tokens
([CLS] and question words); word/entity cells encode mention and placeholder
relations; entity/entity cells encode the heterogeneous graph.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable

import numpy as np

from .corpus import DataError
from .graph import EdgeType, HeterogeneousGraph
from .sequence import EntityKind, Role, TokenSequence

W2W_MODES = ("clipped_dense", "masked_window")


class Ablation(str, Enum):
    NO_GLOBAL_W2W = "NO_GLOBAL_W2W"
    LOCAL_E2E = "LOCAL_E2E"
    EQ3_IN_W2E_E2W_E2E = "EQ3_IN_W2E_E2W_E2E"
    EQ3_IN_W2W = "EQ3_IN_W2W"
    DROP_GLOB_CLS = "DROP_GLOB_CLS"
    DROP_GLOB_Q = "DROP_GLOB_Q"
    DROP_W2E_MENTION = "DROP_W2E_MENTION"
    DROP_W2E_PLCQ = "DROP_W2E_PLCQ"
    DROP_E2E_SENT = "DROP_E2E_SENT"
    DROP_E2E_MATCH = "DROP_E2E_MATCH"
    DROP_E2E_PLC = "DROP_E2E_PLC"
    ONE_LABEL_ALL_EDGES = "ONE_LABEL_ALL_EDGES"


def parse_ablations(specs: Iterable[str | Ablation] | str | None) -> frozenset[Ablation]:
    if specs is None:
        return frozenset()
    if isinstance(specs, str):
        specs = [s for s in specs.replace("+", ",").split(",") if s.strip() and s.strip() != "FULL"]
    out = set()
    for s in specs:
        try:
            out.add(Ablation(s.strip() if isinstance(s, str) else s))
        except ValueError:
            raise ValueError(f"unknown ablation spec {s!r}") from None
    return frozenset(out)


class LabelVocabulary:
    """Dense label ids: ``WIN(d) = d + k`` for ``d in [-k, k]``, then named labels in fixed order."""

    NAMED = ("GLOB_CLS", "GLOB_Q", "W2E_MENTION", "W2E_NONE", "W2E_PLCQ",
             "E2E_PLC", "E2E_SENT", "E2E_MATCH", "E2E_NO_EDGE", "E2E_SELF")

    def __init__(self, k: int, ablations: Iterable[Ablation] = ()):
        if k < 0:
            raise ValueError("window radius must be non-negative")
        self.k = k
        self.ablations = frozenset(ablations)
        ab = self.ablations
        names = []
        for name in self.NAMED:
            if name == "GLOB_CLS" and (Ablation.NO_GLOBAL_W2W in ab or Ablation.DROP_GLOB_CLS in ab):
                continue
            if name == "GLOB_Q" and (Ablation.NO_GLOBAL_W2W in ab or Ablation.DROP_GLOB_Q in ab):
                continue
            if name == "W2E_MENTION" and Ablation.DROP_W2E_MENTION in ab:
                continue
            if name == "W2E_PLCQ" and Ablation.DROP_W2E_PLCQ in ab:
                continue
            if name.startswith("E2E_") and Ablation.LOCAL_E2E in ab:
                continue
            if name in ("E2E_PLC", "E2E_SENT", "E2E_MATCH") and Ablation.ONE_LABEL_ALL_EDGES in ab:
                if "E2E_EDGE" not in names:
                    names.append("E2E_EDGE")
                continue
            if name == "E2E_SENT" and Ablation.DROP_E2E_SENT in ab:
                continue
            if name == "E2E_MATCH" and Ablation.DROP_E2E_MATCH in ab:
                continue
            if name == "E2E_PLC" and Ablation.DROP_E2E_PLC in ab:
                continue
            names.append(name)
        self.names = tuple(names)
        self._ids = {n: 2 * k + 1 + i for i, n in enumerate(names)}

    def __len__(self) -> int:
        return 2 * self.k + 1 + len(self.names)

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    def __getitem__(self, name: str) -> int:
        return self._ids[name]

    def win(self, offset):
        return np.clip(offset, -self.k, self.k) + self.k

    def edge_label(self, kind: EdgeType | None) -> int:
        """Label id for an e2e pair with the given edge type (None = unconnected)."""
        if kind is None:
            return self["E2E_NO_EDGE"]
        name = {EdgeType.PLC: "E2E_PLC", EdgeType.SENT_BASED: "E2E_SENT", EdgeType.MATCH: "E2E_MATCH"}[kind]
        dropped = {"E2E_PLC": Ablation.DROP_E2E_PLC, "E2E_SENT": Ablation.DROP_E2E_SENT,
                   "E2E_MATCH": Ablation.DROP_E2E_MATCH}[name]
        if dropped in self.ablations:
            return self["E2E_NO_EDGE"]
        if "E2E_EDGE" in self:
            return self["E2E_EDGE"]
        return self[name]

    def name_of(self, label: int) -> str:
        if label <= 2 * self.k:
            return f"WIN({label - self.k:+d})"
        return self.names[label - 2 * self.k - 1]


def window_label(i: int, j: int, k: int) -> int:
    return int(np.clip(j - i, -k, k) + k)


@dataclass(frozen=True)
class LabelMatrix:
    labels: np.ndarray  # (P, P) int
    mask: np.ndarray  # (P, P) bool, True = may attend
    n_words: int
    n_entities: int
    vocab: LabelVocabulary

    @property
    def P(self) -> int:
        return self.n_words + self.n_entities


def build_label_matrix(
    seq: TokenSequence,
    graph: HeterogeneousGraph,
    k: int,
    w2w_mode: str = "clipped_dense",
    ablations: Iterable[Ablation] = (),
    vocab: LabelVocabulary | None = None,
) -> LabelMatrix:
    if w2w_mode not in W2W_MODES:
        raise ValueError(f"unknown w2w mode {w2w_mode!r}")
    if graph.node_count != seq.n_entities:
        raise DataError(f"graph has {graph.node_count} nodes but sequence has {seq.n_entities} entities")
    ab = frozenset(ablations)
    vocab = vocab or LabelVocabulary(k, ab)
    W, E = seq.n_words, seq.n_entities
    P = W + E
    roles = np.asarray(seq.word_roles, dtype=np.int64)
    labels = np.empty((P, P), dtype=np.int64)
    mask = np.ones((P, P), dtype=bool)

    # w2w
    idx = np.arange(W)
    offset = idx[None, :] - idx[:, None]
    ww = vocab.win(offset)
    local = np.ones((W, W), dtype=bool)
    is_q = (roles == Role.QUESTION) | (roles == Role.PLC_WORD)
    is_cls = roles == Role.CLS
    if "GLOB_Q" in vocab:
        cells = is_q[:, None] | is_q[None, :]
        ww[cells] = vocab["GLOB_Q"]
        local &= ~cells
    if "GLOB_CLS" in vocab:
        cells = is_cls[:, None] | is_cls[None, :]
        ww[cells] = vocab["GLOB_CLS"]
        local &= ~cells
    labels[:W, :W] = ww
    if w2w_mode == "masked_window":
        mask[:W, :W] = ~(local & (np.abs(offset) > k))

    # w2e, mirrored into e2w
    we = np.full((W, E), vocab["W2E_NONE"], dtype=np.int64)
    if "W2E_PLCQ" in vocab:
        we[roles == Role.QUESTION, 0] = vocab["W2E_PLCQ"]
    if "W2E_MENTION" in vocab:
        for e, tok in enumerate(seq.entity_tokens):
            if tok.kind == EntityKind.PLC_ENTITY:
                we[roles == Role.PLC_WORD, e] = vocab["W2E_MENTION"]
            else:
                a, b = tok.mention_word_span
                we[a:b, e] = vocab["W2E_MENTION"]
    labels[:W, W:] = we
    labels[W:, :W] = we.T

    # e2e
    if Ablation.LOCAL_E2E in ab:
        eidx = np.arange(E)
        eoff = eidx[None, :] - eidx[:, None]
        labels[W:, W:] = vocab.win(eoff)
        if w2w_mode == "masked_window":
            mask[W:, W:] = np.abs(eoff) <= k
    else:
        ee = np.full((E, E), vocab["E2E_NO_EDGE"], dtype=np.int64)
        for a, b, t in graph.edges:
            ee[a, b] = ee[b, a] = vocab.edge_label(t)
        np.fill_diagonal(ee, vocab["E2E_SELF"])
        labels[W:, W:] = ee
    return LabelMatrix(labels, mask, W, E, vocab)


def export_pattern(m: LabelMatrix | tuple[np.ndarray, np.ndarray], path: str | Path, header: str = "") -> None:
    """Write the label grid as CSV rows; masked cells are written as -1."""
    labels, mask = (m.labels, m.mask) if isinstance(m, LabelMatrix) else m
    grid = np.where(mask, labels, -1)
    with open(path, "w", encoding="utf-8") as fh:
        if header:
            fh.writelines(f"# {line}\n" for line in header.splitlines())
        for row in grid:
            fh.write(",".join(str(int(v)) for v in row) + "\n")


def import_pattern(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or not line.strip():
                continue
            rows.append([int(v) for v in line.strip().split(",")])
    grid = np.array(rows, dtype=np.int64)
    mask = grid >= 0
    return np.where(mask, grid, 0), mask
