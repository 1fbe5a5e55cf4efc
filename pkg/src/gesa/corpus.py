"""Cloze instances, the native JSON-lines format, source converters and the word vocabulary."""

from __future__ import annotations

import json
import logging
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

PLC = "[PLC]"
CLS = "[CLS]"
SEP = "[SEP]"
ENT = "[ENT]"
UNK = "[UNK]"
RESERVED_TOKENS = (CLS, SEP, ENT, PLC, UNK)

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


class DataError(ValueError):
    """Raised for malformed or inconsistent input records."""


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


@dataclass(frozen=True)
class Mention:
    surface: str
    sentence_index: int
    token_start: int
    token_end: int


@dataclass
class ClozeInstance:
    id: str
    question_tokens: list[str]
    sentences: list[list[str]]
    mentions: list[Mention]
    candidates: list[int]
    gold_answers: list[str]

    def validate(self) -> None:
        n_plc = sum(tok == PLC for tok in self.question_tokens)
        if n_plc != 1:
            raise DataError(f"placeholder count ≠ 1 (found {n_plc})")
        for idx, m in enumerate(self.mentions):
            if not 0 <= m.sentence_index < len(self.sentences):
                raise DataError(f"mention {idx}: sentence index {m.sentence_index} out of range")
            sent = self.sentences[m.sentence_index]
            if not 0 <= m.token_start < m.token_end <= len(sent):
                raise DataError(
                    f"mention {idx}: span ({m.token_start}, {m.token_end}) outside sentence "
                    f"of length {len(sent)}"
                )
            joined = " ".join(sent[m.token_start:m.token_end])
            if joined != m.surface:
                raise DataError(f"mention {idx}: surface {m.surface!r} != span tokens {joined!r}")
        if not self.candidates:
            raise DataError("no candidates")
        for c in self.candidates:
            if not 0 <= c < len(self.mentions):
                raise DataError(f"candidate index {c} does not name a mention")
        if not self.gold_answers:
            raise DataError("empty gold answer set")

    @property
    def answerable(self) -> bool:
        """True when some candidate surface matches a gold answer after normalization."""
        golds = {normalize_answer(a) for a in self.gold_answers}
        return any(normalize_answer(self.mentions[c].surface) in golds for c in self.candidates)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "question": list(self.question_tokens),
            "sentences": [list(s) for s in self.sentences],
            "mentions": [
                {"surface": m.surface, "sent": m.sentence_index, "start": m.token_start, "end": m.token_end}
                for m in self.mentions
            ],
            "candidates": list(self.candidates),
            "answers": list(self.gold_answers),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ClozeInstance":
        expected = {"id", "question", "sentences", "mentions", "candidates", "answers"}
        if set(rec) != expected:
            raise DataError(f"record keys {sorted(rec)} != {sorted(expected)}")
        try:
            mentions = [Mention(str(m["surface"]), int(m["sent"]), int(m["start"]), int(m["end"]))
                        for m in rec["mentions"]]
        except (KeyError, TypeError) as exc:
            raise DataError(f"bad mention entry: {exc}") from exc
        inst = cls(
            id=str(rec["id"]),
            question_tokens=[str(t) for t in rec["question"]],
            sentences=[[str(t) for t in s] for s in rec["sentences"]],
            mentions=mentions,
            candidates=[int(c) for c in rec["candidates"]],
            gold_answers=[str(a) for a in rec["answers"]],
        )
        inst.validate()
        return inst


def parse_native(path: str | Path) -> list[ClozeInstance]:
    """Read a native JSON-lines file. Errors carry the 1-based line number; ``#`` lines are skipped."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                out.append(ClozeInstance.from_record(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: malformed record: {exc}") from exc
            except DataError as exc:
                raise DataError(f"line {lineno}: {exc}") from exc
    return out


def write_native(instances: Iterable[ClozeInstance], path: str | Path, header: str = "") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"# {line}\n" for line in header.splitlines())
        for inst in instances:
            fh.write(json.dumps(inst.to_record(), ensure_ascii=False) + "\n")


# --- ReCoRD-style ----------------------------------------------------------

def _whitespace_tokens(text: str) -> list[tuple[str, int, int]]:
    return [(m.group(), m.start(), m.end()) for m in re.finditer(r"\S+", text)]


def _char_span_to_tokens(tokens: Sequence[tuple[str, int, int]], start: int, end: int) -> tuple[int, int, bool]:
    """Map a half-open char span to the covering half-open token range.

    Returns (first, last_exclusive, widened).
    """
    covered = [i for i, (_, s, e) in enumerate(tokens) if s < end and e > start]
    if not covered:
        raise DataError(f"character span ({start}, {end}) covers no token")
    first, last = covered[0], covered[-1] + 1
    widened = tokens[first][1] != start or tokens[last - 1][2] != end
    return first, last, widened


def _replace_marker(query_tokens: list[str], marker: str) -> list[str] | None:
    hits = [i for i, tok in enumerate(query_tokens) if marker in tok]
    if len(hits) != 1 or query_tokens[hits[0]].count(marker) != 1:
        return None
    i = hits[0]
    pre, post = query_tokens[i].split(marker)
    replacement = [t for t in (pre, PLC, post) if t]
    return query_tokens[:i] + replacement + query_tokens[i + 1:]


def convert_record_style(
    path: str | Path,
    placeholder_marker: str = "@placeholder",
    end_inclusive: bool = True,
) -> list[ClozeInstance]:
    """Convert a ReCoRD-style JSON file to cloze instances.

    Entity and answer spans are character offsets into the passage text; the
    ReCoRD release stores inclusive end offsets, hence ``end_inclusive``.
    Spans that cut through a whitespace token are widened to whole tokens.
    Queries without exactly one marker are skipped.
    """
    from .graph import segment_sentences

    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    entries = payload["data"] if isinstance(payload, dict) else payload
    shift = 1 if end_inclusive else 0

    out: list[ClozeInstance] = []
    skipped = 0
    for entry in entries:
        text = entry["passage"]["text"]
        toks = _whitespace_tokens(text)
        words = [t for t, _, _ in toks]
        sentences = segment_sentences(words)
        # global token index -> (sentence, local index)
        where = [(si, li) for si, sent in enumerate(sentences) for li in range(len(sent))]

        mentions: list[Mention] = []
        seen: set[tuple[int, int]] = set()
        for ent in entry["passage"].get("entities", []):
            first, last, widened = _char_span_to_tokens(toks, ent["start"], ent["end"] + shift)
            if widened:
                logger.warning("%s: entity span %r widened to token boundary %r",
                               entry.get("id", "?"), text[ent["start"]:ent["end"] + shift],
                               " ".join(words[first:last]))
            s_first, l_first = where[first]
            s_last, l_last = where[last - 1]
            if s_first != s_last:
                logger.warning("%s: entity span crosses a sentence boundary; dropped", entry.get("id", "?"))
                continue
            if (first, last) in seen:
                continue
            if any(first < b and a < last for a, b in seen):
                logger.warning("%s: overlapping entity span dropped", entry.get("id", "?"))
                continue
            seen.add((first, last))
            mentions.append(Mention(" ".join(words[first:last]), s_first, l_first, l_last + 1))
        mentions.sort(key=lambda m: (m.sentence_index, m.token_start))

        for qa in entry.get("qas", []):
            question = _replace_marker(qa["query"].split(), placeholder_marker)
            if question is None:
                skipped += 1
                logger.warning("%s: query lacks a single %r marker; skipped", qa.get("id", "?"),
                               placeholder_marker)
                continue
            answers = list(dict.fromkeys(a["text"] for a in qa.get("answers", [])))
            inst = ClozeInstance(
                id=str(qa.get("id", entry.get("id"))),
                question_tokens=question,
                sentences=[list(s) for s in sentences],
                mentions=list(mentions),
                candidates=list(range(len(mentions))),
                gold_answers=answers,
            )
            try:
                inst.validate()
            except DataError as exc:
                skipped += 1
                logger.warning("%s: %s; skipped", inst.id, exc)
                continue
            out.append(inst)
    if skipped:
        logger.warning("convert_record_style: %d queries skipped", skipped)
    return out


# --- WikiHop-style ---------------------------------------------------------

def convert_wikihop_query(prop: str, subject_tokens: Sequence[str]) -> list[str]:
    """``(?, record_label, get ready)`` -> ``[PLC] record label get ready``."""
    if not prop:
        raise DataError("empty WikiHop property")
    return [PLC] + prop.split("_") + list(subject_tokens)


def _find_token_runs(tokens: Sequence[str], needle: Sequence[str]) -> list[int]:
    n = len(needle)
    return [i for i in range(len(tokens) - n + 1) if list(tokens[i:i + n]) == list(needle)]


def convert_wikihop_record(rec: dict) -> ClozeInstance | None:
    """Convert one WikiHop record whose candidates are located by exact token match.

    The support documents are whitespace-tokenized and segmented; each
    candidate string found in a sentence becomes a mention. Returns None when
    the answer is never mentioned.
    """
    from .graph import segment_sentences

    prop, _, subject = rec["query"].partition(" ")
    question = convert_wikihop_query(prop, subject.split())
    sentences: list[list[str]] = []
    for doc in rec["supports"]:
        sentences.extend(segment_sentences(doc.split()))

    mentions: list[Mention] = []
    for cand in dict.fromkeys(rec["candidates"]):
        needle = cand.split()
        if not needle:
            continue
        for si, sent in enumerate(sentences):
            low = [t.lower() for t in sent]
            for start in _find_token_runs(low, [t.lower() for t in needle]):
                span = (si, start, start + len(needle))
                if any(m.sentence_index == si and m.token_start < span[2] and span[1] < m.token_end
                       for m in mentions):
                    continue
                mentions.append(Mention(" ".join(sent[span[1]:span[2]]), *span))
    mentions.sort(key=lambda m: (m.sentence_index, m.token_start))
    inst = ClozeInstance(
        id=str(rec.get("id", "")),
        question_tokens=question,
        sentences=sentences,
        mentions=mentions,
        candidates=list(range(len(mentions))),
        gold_answers=[rec["answer"]],
    )
    if not mentions or not inst.answerable:
        logger.warning("%s: answer not mentioned in supports; skipped", inst.id)
        return None
    inst.validate()
    return inst


def convert_wikihop(path: str | Path) -> list[ClozeInstance]:
    with open(path, encoding="utf-8") as fh:
        records = json.load(fh)
    converted = (convert_wikihop_record(r) for r in records)
    return [inst for inst in converted if inst is not None]


# --- vocabulary ------------------------------------------------------------

@dataclass
class Vocabulary:
    token_to_id: dict[str, int] = field(default_factory=lambda: {t: i for i, t in enumerate(RESERVED_TOKENS)})

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __getitem__(self, token: str) -> int:
        return self.token_to_id.get(token, self.token_to_id[UNK])

    def add(self, token: str) -> int:
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.token_to_id)
        return self.token_to_id[token]

    def to_list(self) -> list[str]:
        return sorted(self.token_to_id, key=self.token_to_id.__getitem__)

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocabulary":
        if tuple(tokens[:len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise DataError("vocabulary does not start with the reserved tokens")
        return cls({t: i for i, t in enumerate(tokens)})


def token_stream(instances: Iterable[ClozeInstance]) -> Iterable[str]:
    for inst in instances:
        yield from inst.question_tokens
        for sent in inst.sentences:
            yield from sent


def build_vocab(instances: Iterable[ClozeInstance]) -> Vocabulary:
    """Assign ids in order of first occurrence over questions then sentences."""
    vocab = Vocabulary()
    for tok in token_stream(instances):
        vocab.add(tok)
    return vocab
