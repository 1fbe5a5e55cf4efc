"""Model input assembly: ``[CLS] Q [SEP] [SEP] D [SEP]`` followed by the entity input."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import IntEnum

from .corpus import CLS, ENT, PLC, SEP, ClozeInstance, DataError, Vocabulary

logger = logging.getLogger(__name__)


class Role(IntEnum):
    CLS = 0
    QUESTION = 1
    PLC_WORD = 2
    SEP = 3
    DOC = 4
    ENT_MARK = 5


class EntityKind(IntEnum):
    PLC_ENTITY = 0
    CANDIDATE = 1


@dataclass(frozen=True)
class EntityToken:
    kind: EntityKind
    mention_ref: int | None = None
    # half-open word-index range of the mention tokens, [ENT] markers excluded
    mention_word_span: tuple[int, int] | None = None


@dataclass
class TokenSequence:
    word_ids: list[int]
    word_roles: list[Role]
    entity_tokens: list[EntityToken]
    # entity index -> whether the reader scores it (mention_ref is in instance.candidates)
    scored: list[bool]
    surfaces: list[str | None]
    dropped_mentions: int = 0

    @property
    def n_words(self) -> int:
        return len(self.word_ids)

    @property
    def n_entities(self) -> int:
        return len(self.entity_tokens)

    @property
    def P(self) -> int:
        return self.n_words + self.n_entities

    @property
    def candidate_indices(self) -> list[int]:
        return [i for i, s in enumerate(self.scored) if s]


def _doc_layout(instance: ClozeInstance):
    """Flatten the document; return tokens and mention spans in flat coordinates (doc order)."""
    offsets, flat = [], []
    for sent in instance.sentences:
        offsets.append(len(flat))
        flat.extend(sent)
    spans = []
    for idx, m in enumerate(instance.mentions):
        spans.append((offsets[m.sentence_index] + m.token_start, offsets[m.sentence_index] + m.token_end, idx))
    spans.sort()
    for (s0, e0, i0), (s1, e1, i1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise DataError(f"mentions {i0} and {i1} overlap")
    return flat, spans


def build_sequence(instance: ClozeInstance, vocab: Vocabulary, max_len: int, max_q_len: int) -> TokenSequence:
    """Lay out words then entities, truncating the document tail to fit ``max_len``.

    Mentions cut by truncation lose their [ENT] markers and their entity token.
    """
    q = instance.question_tokens
    if len(q) + 2 > max_q_len:
        raise DataError(f"question length {len(q) + 2} exceeds max_q_len {max_q_len}")
    if not instance.mentions:
        raise DataError("no candidates")
    flat, spans = _doc_layout(instance)

    def total(n_doc: int) -> tuple[int, list]:
        kept = [sp for sp in spans if sp[1] <= n_doc]
        n_words = 1 + len(q) + 3 + n_doc + 2 * len(kept)
        return n_words + 1 + len(kept), kept

    n_doc = len(flat)
    size, kept = total(n_doc)
    while size > max_len and n_doc > 0:
        n_doc -= 1
        size, kept = total(n_doc)
    if size > max_len:
        raise DataError(f"question alone does not fit max_len {max_len}")
    cand_set = set(instance.candidates)
    if not any(sp[2] in cand_set for sp in kept):
        raise DataError("all candidates truncated away")

    ids, roles = [vocab[CLS]], [Role.CLS]
    for tok in q:
        ids.append(vocab[tok])
        roles.append(Role.PLC_WORD if tok == PLC else Role.QUESTION)
    ids += [vocab[SEP], vocab[SEP]]
    roles += [Role.SEP, Role.SEP]

    starts = {sp[0]: sp for sp in kept}
    entities = [EntityToken(EntityKind.PLC_ENTITY)]
    scored, surfaces = [False], [None]
    pos = 0
    while pos < n_doc:
        if pos in starts:
            s, e, midx = starts[pos]
            ids.append(vocab[ENT])
            roles.append(Role.ENT_MARK)
            first = len(ids)
            for tok in flat[s:e]:
                ids.append(vocab[tok])
                roles.append(Role.DOC)
            entities.append(EntityToken(EntityKind.CANDIDATE, midx, (first, len(ids))))
            scored.append(midx in cand_set)
            surfaces.append(instance.mentions[midx].surface)
            ids.append(vocab[ENT])
            roles.append(Role.ENT_MARK)
            pos = e
        else:
            ids.append(vocab[flat[pos]])
            roles.append(Role.DOC)
            pos += 1
    ids.append(vocab[SEP])
    roles.append(Role.SEP)

    dropped = len(spans) - len(kept)
    if dropped:
        logger.info("%s: %d mentions dropped by truncation", instance.id, dropped)
    return TokenSequence(ids, roles, entities, scored, surfaces, dropped)
