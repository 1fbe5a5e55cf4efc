"""Heterogeneous entity graph over the entity input, plus the fallback sentence segmenter."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Sequence

from .corpus import DataError, Mention, normalize_answer
from .sequence import EntityKind, EntityToken

_TERMINATORS = (".", "!", "?")


class EdgeType(IntEnum):
    SENT_BASED = 0
    MATCH = 1
    PLC = 2


@dataclass(frozen=True)
class HeterogeneousGraph:
    node_count: int
    edges: frozenset[tuple[int, int, EdgeType]]

    def edge_type(self, i: int, j: int) -> EdgeType | None:
        return self._lookup.get((min(i, j), max(i, j)))

    @property
    def _lookup(self) -> dict[tuple[int, int], EdgeType]:
        cache = self.__dict__.get("_cache")
        if cache is None:
            cache = {(a, b): t for a, b, t in self.edges}
            object.__setattr__(self, "_cache", cache)
        return cache

    def degree(self, node: int, kind: EdgeType | None = None) -> int:
        return sum(1 for a, b, t in self.edges if node in (a, b) and (kind is None or t == kind))

    def sorted_edges(self) -> list[tuple[int, int, EdgeType]]:
        return sorted(self.edges, key=lambda e: (e[0], e[1]))


def segment_sentences(tokens: Sequence[str]) -> list[list[str]]:
    """Split after every token ending in ``.``, ``!`` or ``?``."""
    out: list[list[str]] = []
    cur: list[str] = []
    for tok in tokens:
        cur.append(tok)
        if tok.endswith(_TERMINATORS):
            out.append(cur)
            cur = []
    if cur:
        out.append(cur)
    return out


def build_graph(entities: Sequence[EntityToken], mentions: Sequence[Mention]) -> HeterogeneousGraph:
    if not entities or entities[0].kind != EntityKind.PLC_ENTITY:
        raise DataError("entity input must start with the placeholder entity")
    resolved: list[Mention] = []
    for idx, ent in enumerate(entities[1:], 1):
        if ent.mention_ref is None or not 0 <= ent.mention_ref < len(mentions):
            raise DataError(f"entity {idx}: dangling mention_ref {ent.mention_ref}")
        resolved.append(mentions[ent.mention_ref])

    n = len(entities)
    edges = {(0, j, EdgeType.PLC) for j in range(1, n)}
    keys = [normalize_answer(m.surface) for m in resolved]
    for a in range(len(resolved)):
        for b in range(a + 1, len(resolved)):
            if resolved[a].sentence_index == resolved[b].sentence_index:
                edges.add((a + 1, b + 1, EdgeType.SENT_BASED))
            elif keys[a] == keys[b]:
                edges.add((a + 1, b + 1, EdgeType.MATCH))
    return HeterogeneousGraph(n, frozenset(edges))


def export_graph(graph: HeterogeneousGraph, path: str | Path, header: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"# {line}\n" for line in header.splitlines())
        for i, j, t in graph.sorted_edges():
            fh.write(f"{i} {j} {t.name}\n")
