"""Exact match, token F1 and accuracy over normalized answer strings."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

from .corpus import normalize_answer


def em(pred: str, golds: Iterable[str]) -> int:
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1(pred_toks: list[str], gold_toks: list[str]) -> float:
    if not pred_toks or not gold_toks:
        return float(pred_toks == gold_toks)
    common = sum((Counter(pred_toks) & Counter(gold_toks)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_toks)
    recall = common / len(gold_toks)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, golds: Iterable[str]) -> float:
    """Best token-multiset F1 against any gold answer."""
    p = normalize_answer(pred).split()
    return max((_f1(p, normalize_answer(g).split()) for g in golds), default=0.0)


def accuracy(preds: Sequence[str], golds: Sequence[Iterable[str]]) -> float:
    """WikiHop accuracy, which is mean EM."""
    if not preds:
        return 0.0
    return sum(em(p, g) for p, g in zip(preds, golds)) / len(preds)


def corpus_scores(preds: Sequence[str], golds: Sequence[Iterable[str]]) -> dict[str, float]:
    golds = [list(g) for g in golds]
    n = len(preds)
    if n == 0:
        return {"em": 0.0, "f1": 0.0, "accuracy": 0.0, "n": 0}
    ems = [em(p, g) for p, g in zip(preds, golds)]
    f1s = [token_f1(p, g) for p, g in zip(preds, golds)]
    return {"em": sum(ems) / n, "f1": sum(f1s) / n, "accuracy": sum(ems) / n, "n": n}
