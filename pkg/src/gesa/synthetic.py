"""Synthetic cloze tasks whose answers are fixed by entity co-occurrence structure.

hops=1: the question names a cue entity; the answer is the only candidate that
shares a sentence with the cue.

hops=2: the cue shares a sentence with a bridge entity B; another mention of B
(a MATCH edge away) shares a sentence with the answer. Leftover sentences may
echo a distractor's partner elsewhere, so "my partner has a MATCH edge" alone
does not identify the answer.

Cue, bridge and partner entities are mentions but not candidates.
"""

from __future__ import annotations

from itertools import product
from typing import Sequence

import numpy as np

from .corpus import PLC, ClozeInstance, Mention

_VOWELS = ("a", "e", "i", "o", "u")
NAMES = tuple(a + b + c + d for a, b, c, d in product(("k", "l", "m", "r", "t", "v"), _VOWELS, ("n", "r", "s"), ("a", "o")))
RELATIONS = ("met", "joined", "visited", "praised", "called", "helped", "followed", "thanked")
FILLER = ("the", "weather", "was", "mild", "today", "rain", "fell", "later", "a", "crowd", "gathered",
          "quietly", "news", "spread", "fast", "bells", "rang", "at", "noon", "market", "stayed", "open")
QUESTION_TEMPLATES = (
    (PLC, "was", "with", "{cue}"),
    ("{cue}", "was", "seen", "with", PLC),
    ("who", "joined", "{cue}", "?", PLC),
)


def _pair_sentence(rng, first: str, second: str) -> list[str]:
    return [first, str(rng.choice(RELATIONS)), second, "."]


def _filler_sentence(rng) -> list[str]:
    n = int(rng.integers(3, 6))
    return [str(t) for t in rng.choice(FILLER, size=n)] + ["."]


def gen_synthetic(n_candidates: int, n_sentences: int, hops: int, seed, index: int | None = None) -> ClozeInstance:
    """Generate one instance; ``seed`` (plus optional ``index``) fixes it completely."""
    if hops not in (1, 2):
        raise ValueError("hops must be 1 or 2")
    if n_candidates < 2:
        raise ValueError("need at least 2 candidates")
    min_sentences = n_candidates + (hops - 1)
    if n_sentences < min_sentences:
        raise ValueError(f"hops={hops} needs n_sentences >= {min_sentences}")
    leftover = n_sentences - min_sentences
    need = 2 * n_candidates + 2 * leftover
    if need > len(NAMES):
        raise ValueError("name pool too small for these parameters")
    rng = np.random.default_rng(seed if index is None else [seed, index])

    names = [str(n) for n in rng.choice(NAMES, size=need, replace=False)]
    cands, partners, fresh = names[:n_candidates], names[n_candidates:2 * n_candidates], names[2 * n_candidates:]
    cue = partners[0]
    answer = cands[0]

    # (tokens, {token position: is_candidate})
    sentences: list[tuple[list[str], dict[int, bool]]] = []

    def add_pair(a: str, a_cand: bool, b: str, b_cand: bool) -> None:
        if rng.random() < 0.5:
            a, a_cand, b, b_cand = b, b_cand, a, a_cand
        sentences.append((_pair_sentence(rng, a, b), {0: a_cand, 2: b_cand}))

    if hops == 1:
        for c, p in zip(cands, partners):
            add_pair(c, True, p, False)
    else:
        bridge = partners[0]
        cue = str(rng.choice([n for n in NAMES if n not in names]))
        add_pair(cue, False, bridge, False)
        for c, p in zip(cands, partners):
            add_pair(c, True, p, False)
    for _ in range(leftover):
        roll = rng.random()
        if roll < 1 / 3:
            sentences.append((_filler_sentence(rng), {}))
        elif roll < 2 / 3 and n_candidates > 1:
            echo = partners[int(rng.integers(1, n_candidates))]
            add_pair(echo, False, fresh.pop(), False)
        else:
            add_pair(fresh.pop(), False, fresh.pop(), False)
    order = rng.permutation(len(sentences))
    sentences = [sentences[i] for i in order]

    toks, mentions, candidates = [], [], []
    for si, (sent, spans) in enumerate(sentences):
        toks.append(sent)
        for pos in sorted(spans):
            if spans[pos]:
                candidates.append(len(mentions))
            mentions.append(Mention(sent[pos], si, pos, pos + 1))
    template = QUESTION_TEMPLATES[int(rng.integers(len(QUESTION_TEMPLATES)))]
    question = [cue if t == "{cue}" else t for t in template]
    sid = f"synth-h{hops}-{seed}" + ("" if index is None else f"-{index}")
    inst = ClozeInstance(sid, question, toks, mentions, candidates, [answer])
    inst.validate()
    return inst


def gen_synthetic_dataset(n: int, n_candidates: int = 4, n_sentences: int = 6, hops: int = 1,
                          seed: int = 0) -> list[ClozeInstance]:
    return [gen_synthetic(n_candidates, n_sentences, hops, seed, i) for i in range(n)]


def rule_answer(instance: ClozeInstance, hops: int) -> list[str]:
    """Re-derive the gold answer from the co-occurrence rule alone (independent of generation)."""
    q = set(instance.question_tokens)
    by_sentence: dict[int, list[int]] = {}
    for idx, m in enumerate(instance.mentions):
        by_sentence.setdefault(m.sentence_index, []).append(idx)
    cand = set(instance.candidates)
    cue_sents = {m.sentence_index for m in instance.mentions if m.surface in q}
    if hops == 2:
        bridges = {instance.mentions[i].surface for s in cue_sents for i in by_sentence[s]
                   if instance.mentions[i].surface not in q}
        cue_sents = {m.sentence_index for m in instance.mentions
                     if m.surface in bridges and m.sentence_index not in cue_sents}
    return sorted({instance.mentions[i].surface for s in cue_sents for i in by_sentence[s] if i in cand})


def sample_sizes(instances: Sequence[ClozeInstance]) -> tuple[int, int]:
    """(max words, max mentions) over a dataset, handy for picking P_max."""
    words = max(len(i.question_tokens) + sum(map(len, i.sentences)) + 2 * len(i.mentions) + 4 for i in instances)
    return words, max(len(i.mentions) for i in instances)
