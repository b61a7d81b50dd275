"""Character corpora, language-model batches and a synthetic regression task."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from basis import seeding


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class CharCorpus:
    vocab: tuple
    encoded: np.ndarray
    split: int
    digest: str

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def train(self) -> np.ndarray:
        return self.encoded[: self.split]

    @property
    def val(self) -> np.ndarray:
        return self.encoded[self.split :]

    def encode(self, text: str) -> np.ndarray:
        index = {c: i for i, c in enumerate(self.vocab)}
        return np.array([index[c] for c in text], dtype=np.int64)

    def decode(self, ids) -> str:
        return "".join(self.vocab[int(i)] for i in ids)


@dataclass(frozen=True)
class BatchSpec:
    batch_size: int
    seq_len: int
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.seq_len < 1:
            raise ValueError(f"batch_size and seq_len must be positive, got {self.batch_size}, {self.seq_len}")


def corpus_from_text(text: str, split_fraction: float = 0.9) -> CharCorpus:
    if not text:
        raise CorpusError("corpus is empty")
    if not 0.0 < split_fraction <= 1.0:
        raise CorpusError(f"split fraction must lie in (0, 1], got {split_fraction}")
    vocab = tuple(dict.fromkeys(text))  # first-appearance order
    index = {c: i for i, c in enumerate(vocab)}
    encoded = np.fromiter((index[c] for c in text), dtype=np.int64, count=len(text))
    encoded.setflags(write=False)
    split = int(round(split_fraction * len(text)))
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return CharCorpus(vocab, encoded, split, digest)


def load_char_corpus(path, split_fraction: float = 0.9) -> CharCorpus:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise CorpusError(f"cannot read corpus {path}: {err}") from err
    if not text:
        raise CorpusError(f"corpus {path} is empty")
    return corpus_from_text(text, split_fraction)


def sample_lm_batch(ids: np.ndarray, spec: BatchSpec, step: int, stream: int = seeding.DATA):
    """Random windows of ``seq_len + 1`` tokens, split into inputs and next-token targets.

    Window starts depend only on ``(spec.seed, stream, step)``.
    """
    n_starts = len(ids) - spec.seq_len
    if n_starts < 1:
        raise CorpusError(f"sequence of {len(ids)} tokens is too short for windows of {spec.seq_len + 1}")
    starts = seeding.rng(spec.seed, stream, step).integers(0, n_starts, size=spec.batch_size)
    offsets = starts[:, None] + np.arange(spec.seq_len + 1)[None, :]
    windows = ids[offsets]
    return windows[:, :-1], windows[:, 1:]


@dataclass(frozen=True)
class LinearTask:
    x: np.ndarray
    w_true: np.ndarray
    y: np.ndarray


def synth_linear_task(B: int, N: int, M: int, noise: float = 0.0, seed: int = 0) -> LinearTask:
    """Gaussian inputs with targets ``x @ w_true`` plus optional Gaussian noise."""
    rng = seeding.rng(seed)
    x = rng.normal(size=(B, N))
    w_true = rng.normal(size=(N, M)) / np.sqrt(N)
    y = x @ w_true
    if noise:
        y = y + noise * rng.normal(size=(B, M))
    return LinearTask(x, w_true, y)
