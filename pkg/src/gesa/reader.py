"""Candidate scoring head: sigmoid(w . [y_plc ; y_e] + b), BCE loss, argmax answer."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .sequence import TokenSequence

logger = logging.getLogger(__name__)

BCE_EPS = 1e-12


@dataclass
class ReaderParams:
    w: np.ndarray  # (2L,)
    b: float

    @classmethod
    def from_params(cls, params: Mapping[str, np.ndarray]) -> "ReaderParams":
        return cls(params["reader.w"], float(params["reader.b"][0]))


@dataclass
class Prediction:
    scores: list[float]
    entity_indices: list[int]
    best_index: int
    best_surface: str

    @property
    def best_score(self) -> float:
        return self.scores[self.best_index]


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z)))


def score_candidates(hidden: np.ndarray, seq: TokenSequence, params: ReaderParams) -> Prediction:
    """Score every reader-visible entity token; ties go to the lowest candidate index."""
    cands = seq.candidate_indices
    if not cands:
        raise ValueError("no candidates to score")
    L = hidden.shape[1]
    W = seq.n_words
    y_plc = hidden[W]
    logits = [float(params.w[:L] @ y_plc + params.w[L:] @ hidden[W + e] + params.b) for e in cands]
    scores = [float(s) for s in sigmoid(np.array(logits))]
    best = int(np.argmax(scores))
    return Prediction(scores, cands, best, seq.surfaces[cands[best]])


def bce_loss(scores: Sequence[float], targets: Sequence[float]) -> float:
    """Mean binary cross-entropy; scores at exactly 0 or 1 are clamped to [eps, 1 - eps]."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if s.shape != t.shape:
        raise ValueError("scores and targets differ in length")
    if s.size == 0:
        raise ValueError("empty candidate list")
    if ((s <= 0.0) | (s >= 1.0)).any():
        warnings.warn("bce_loss: scores clamped away from 0/1", RuntimeWarning, stacklevel=2)
    s = np.clip(s, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(t * np.log(s) + (1.0 - t) * np.log1p(-s))))
