"""Character vocabulary, synthetic corpus and deterministic window batching."""
from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

PAD = "<pad>"


@dataclass
class Vocab:
    symbols: list[str]

    def __post_init__(self):
        self.index = {s: i for i, s in enumerate(self.symbols)}
        if len(self.index) != len(self.symbols):
            raise ValueError("vocabulary symbols must be unique")

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def size(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> np.ndarray:
        try:
            return np.array([self.index[ch] for ch in text], dtype=np.int64)
        except KeyError as exc:
            raise KeyError(f"character {exc.args[0]!r} is not in the vocabulary") from None

    def decode(self, ids) -> str:
        return "".join(self.symbols[i] for i in np.asarray(ids).reshape(-1) if i != 0)


def build_vocab(text: str) -> Vocab:
    """Padding symbol at id 0 followed by the sorted distinct characters of ``text``."""
    if not text:
        raise ValueError("cannot build a vocabulary from empty text")
    return Vocab([PAD] + sorted(set(text)))


def load_text(path) -> str:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"corpus file not found: {p}")
    return p.read_text(encoding="utf-8")


ALPHABET = string.ascii_lowercase + string.ascii_uppercase + " .,;!?\n"


def synthetic_corpus(n_chars: int, seed: int = 0, n_words: int = 40, noise: float = 0.01) -> str:
    """Sentences drawn from a sparse word-level Markov chain, plus character noise.

    Each word has three possible successors, sentences start capitalised and end
    with punctuation; a small fraction of characters is replaced uniformly from
    the full alphabet so every symbol appears.
    """
    rng = np.random.default_rng(seed)
    letters = string.ascii_lowercase
    words = []
    while len(words) < n_words:
        w = "".join(rng.choice(list(letters), size=int(rng.integers(2, 7))))
        if w not in words:
            words.append(w)
    successors = rng.integers(0, n_words, size=(n_words, 3))
    enders = ".!?;"
    out: list[str] = []
    total = 0
    w = int(rng.integers(n_words))
    while total < n_chars:
        length = int(rng.integers(4, 9))
        sent = []
        for _ in range(length):
            sent.append(words[w])
            w = int(successors[w, rng.integers(3)])
        sent[0] = sent[0].capitalize()
        piece = " ".join(sent) + enders[len(sent) % len(enders)]
        piece += "\n" if rng.random() < 0.2 else " "
        out.append(piece)
        total += len(piece)
    chars = list("".join(out)[:n_chars])
    flips = rng.random(len(chars)) < noise
    for pos in np.flatnonzero(flips):
        chars[pos] = ALPHABET[int(rng.integers(len(ALPHABET)))]
    # make sure every alphabet symbol occurs at least once
    tail = list(ALPHABET)
    rng.shuffle(tail)
    chars[-len(tail):] = tail
    return "".join(chars)


def train_eval_split(tokens: np.ndarray, eval_fraction: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous split: the last ``eval_fraction`` of the stream is held out."""
    cut = int(round(len(tokens) * (1.0 - eval_fraction)))
    return tokens[:cut], tokens[cut:]


@dataclass
class BatchStream:
    tokens: np.ndarray
    context: int
    batch_size: int
    seed: int = 0
    epoch: int = 0

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if len(self.tokens) < self.context + 1:
            raise ValueError(f"source of {len(self.tokens)} tokens is shorter than one window of {self.context + 1}")

    @property
    def n_windows(self) -> int:
        return (len(self.tokens) - 1) // self.context

    @property
    def batches_per_epoch(self) -> int:
        return self.n_windows // self.batch_size

    def epoch_batches(self, epoch: int | None = None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        """One pass over shuffled non-overlapping windows; the last partial batch is dropped."""
        e = self.epoch if epoch is None else epoch
        order = np.random.default_rng([self.seed, e]).permutation(self.n_windows)
        S = self.context
        for b in range(self.batches_per_epoch):
            starts = order[b * self.batch_size:(b + 1) * self.batch_size] * S
            windows = np.stack([self.tokens[s:s + S + 1] for s in starts])
            yield windows[:, :-1], windows[:, 1:]

    def forever(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        while True:
            yield from self.epoch_batches()
            self.epoch += 1


def make_batches(stream: BatchStream) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    return stream.epoch_batches()
