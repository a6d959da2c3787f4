"""Synthetic Objects: every combination of four ten-valued attributes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterator

import numpy as np

from .agent import N_ATTRIBUTES, N_VALUES, OBJECT_DIM
from .errors import ParameterError

N_OBJECTS = N_VALUES**N_ATTRIBUTES
SPLIT_SIZES = (8000, 1000, 1000)


@dataclass(frozen=True)
class ObjectRecord:
    id: int
    attributes: tuple[int, ...]
    one_hot: np.ndarray


def id_to_attributes(ids) -> np.ndarray:
    """Base-10 digits of each id, most significant first: 9999 -> (9, 9, 9, 9)."""
    ids = np.asarray(ids, dtype=np.int64)
    powers = N_VALUES ** np.arange(N_ATTRIBUTES - 1, -1, -1)
    return (ids[..., None] // powers) % N_VALUES


def attributes_to_id(attrs) -> np.ndarray:
    attrs = np.asarray(attrs, dtype=np.int64)
    powers = N_VALUES ** np.arange(N_ATTRIBUTES - 1, -1, -1)
    return attrs @ powers


def attributes_to_one_hot(attrs) -> np.ndarray:
    attrs = np.atleast_2d(np.asarray(attrs, dtype=np.int64))
    out = np.zeros((attrs.shape[0], OBJECT_DIM))
    cols = attrs + N_VALUES * np.arange(N_ATTRIBUTES)
    out[np.arange(attrs.shape[0])[:, None], cols] = 1.0
    return out


def one_hot_to_attributes(one_hot) -> np.ndarray:
    x = np.atleast_2d(np.asarray(one_hot))
    return x.reshape(x.shape[0], N_ATTRIBUTES, N_VALUES).argmax(axis=-1)


@lru_cache(maxsize=1)
def _tables() -> tuple[np.ndarray, np.ndarray]:
    attrs = id_to_attributes(np.arange(N_OBJECTS))
    one_hot = attributes_to_one_hot(attrs)
    attrs.setflags(write=False)
    one_hot.setflags(write=False)
    return attrs, one_hot


def attribute_table() -> np.ndarray:
    """(10000, 4) attribute matrix indexed by object id."""
    return _tables()[0]


def one_hot_table() -> np.ndarray:
    """(10000, 40) encoded objects indexed by object id."""
    return _tables()[1]


def generate_objects() -> list[ObjectRecord]:
    attrs, one_hot = _tables()
    return [ObjectRecord(i, tuple(int(a) for a in attrs[i]), one_hot[i]) for i in range(N_OBJECTS)]


@dataclass(frozen=True)
class DatasetSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray

    def part(self, name: str) -> np.ndarray:
        if name not in ("train", "valid", "test"):
            raise ParameterError(f"unknown split part {name!r}")
        return getattr(self, name)

    def to_json(self) -> str:
        return json.dumps({k: getattr(self, k).tolist() for k in ("train", "valid", "test")})

    def export(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> DatasetSplit:
        raw = json.loads(text)
        return cls(*(np.asarray(raw[k], dtype=np.int64) for k in ("train", "valid", "test")))


def split(seed: int) -> DatasetSplit:
    perm = np.random.default_rng(seed).permutation(N_OBJECTS)
    a, b, _ = SPLIT_SIZES
    return DatasetSplit(perm[:a], perm[a:a + b], perm[a + b:])


@dataclass(frozen=True)
class CandidateSet:
    """B distinct objects; in-batch, every row serves as a target against the rest."""

    ids: np.ndarray

    @property
    def size(self) -> int:
        return int(self.ids.size)

    @property
    def target_index(self) -> np.ndarray:
        return np.arange(self.ids.size)

    @property
    def one_hot(self) -> np.ndarray:
        return one_hot_table()[self.ids]

    @property
    def attributes(self) -> np.ndarray:
        return attribute_table()[self.ids]


def sample_batch(part: np.ndarray, batch_size: int, rng: np.random.Generator) -> CandidateSet:
    if batch_size > part.size:
        raise ParameterError(f"batch of {batch_size} exceeds split size {part.size}")
    return CandidateSet(rng.choice(part, size=batch_size, replace=False))


def iter_epoch(part: np.ndarray, batch_size: int, rng: np.random.Generator) -> Iterator[CandidateSet]:
    """Shuffle once, then yield consecutive full batches (a trailing remainder is dropped)."""
    if batch_size > part.size:
        raise ParameterError(f"batch of {batch_size} exceeds split size {part.size}")
    order = rng.permutation(part)
    for start in range(0, order.size - batch_size + 1, batch_size):
        yield CandidateSet(order[start:start + batch_size])


def eval_batches(part: np.ndarray, batch_size: int) -> Iterator[CandidateSet]:
    """Deterministic consecutive batches in split order."""
    if batch_size > part.size:
        raise ParameterError(f"batch of {batch_size} exceeds split size {part.size}")
    for start in range(0, part.size - batch_size + 1, batch_size):
        yield CandidateSet(part[start:start + batch_size])
