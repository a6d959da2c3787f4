"""Evaluation metrics computed from game transcripts."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import rankdata

from .errors import UsageError

TOPSIM_SAMPLE = 500
ENTROPY_BASE = 2


@dataclass
class Transcript:
    concepts: np.ndarray  # (N, n_attributes)
    messages: np.ndarray  # (N, L)
    predicted: np.ndarray  # (N,)
    true: np.ndarray  # (N,)

    def __post_init__(self):
        self.concepts = np.atleast_2d(np.asarray(self.concepts, dtype=np.int64))
        self.messages = np.atleast_2d(np.asarray(self.messages, dtype=np.int64))
        self.predicted = np.asarray(self.predicted, dtype=np.int64)
        self.true = np.asarray(self.true, dtype=np.int64)
        n = self.concepts.shape[0]
        if not (self.messages.shape[0] == self.predicted.size == self.true.size == n):
            raise ValueError("transcript columns have different lengths")

    def __len__(self) -> int:
        return self.concepts.shape[0]


def _nonempty(t: Transcript) -> None:
    if len(t) == 0:
        raise UsageError("empty transcript")


def accuracy(t: Transcript) -> float:
    _nonempty(t)
    return float(np.mean(t.predicted == t.true))


def active_words(t: Transcript, vocab_size: int) -> float:
    _nonempty(t)
    return np.unique(t.messages).size / vocab_size


def unique_messages(t: Transcript) -> int:
    _nonempty(t)
    return int(np.unique(t.messages, axis=0).shape[0])


def spearman(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman's rho with average ranks for ties."""
    rx = rankdata(x)
    ry = rankdata(y)
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = np.sqrt((rx * rx).sum() * (ry * ry).sum())
    if denom == 0.0:
        raise UsageError("correlation undefined: one distance vector is constant")
    return float((rx * ry).sum() / denom)


def topsim(t: Transcript, sample_size: int = TOPSIM_SAMPLE, seed: int = 0) -> float:
    """Spearman correlation of pairwise Hamming distances, concepts vs messages.

    Each distinct concept contributes its first message. When there are more
    than ``sample_size`` distinct concepts a seeded sample of that many is used.
    """
    _nonempty(t)
    _, first = np.unique(t.concepts, axis=0, return_index=True)
    first = np.sort(first)
    if first.size < 2:
        raise UsageError("topographic similarity needs at least two distinct concepts")
    if first.size > sample_size:
        first = np.sort(np.random.default_rng(seed).choice(first, size=sample_size, replace=False))
    concepts = t.concepts[first]
    messages = t.messages[first]
    return spearman(pdist(concepts, metric="hamming"), pdist(messages, metric="hamming"))


def conditional_entropy(t: Transcript) -> float:
    """Plug-in H(C | M) in bits over the transcript's (concept, message) pairs."""
    _nonempty(t)
    by_message: dict[tuple, Counter] = defaultdict(Counter)
    for concept, message in zip(map(tuple, t.concepts), map(tuple, t.messages)):
        by_message[message][concept] += 1
    n = len(t)
    h = 0.0
    for counts in by_message.values():
        c = np.fromiter(counts.values(), dtype=np.float64)
        m = c.sum()
        p = c / m
        h += (m / n) * float(-(p * np.log2(p)).sum())
    return max(h, 0.0)


def summarize(t: Transcript, vocab_size: int, topsim_sample: int = TOPSIM_SAMPLE,
              seed: int = 0) -> dict[str, float]:
    """Flat metric record for one evaluation."""
    try:
        ts = topsim(t, topsim_sample, seed)
    except UsageError:
        ts = float("nan")
    return {
        "acc": accuracy(t),
        "aw": active_words(t, vocab_size),
        "topsim": ts,
        "hcm": conditional_entropy(t),
        "unique": unique_messages(t),
        "entropy_base": ENTROPY_BASE,
    }
