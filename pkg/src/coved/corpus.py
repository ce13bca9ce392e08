"""Dialogue corpora: parsing, vocabulary, splits, slicing, batching, embeddings."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

EOU = "__eou__"
PAD, UNK, START = "<pad>", "<unk>", "<s>"
PAD_ID, UNK_ID, EOU_ID, START_ID = 0, 1, 2, 3
RESERVED = (PAD, UNK, EOU, START)
DEFAULT_VOCAB_SIZE = 20000
DEFAULT_SLICE_LEN = 80


class CorpusError(Exception):
    """Unreadable or unusable corpus data."""


@dataclass(frozen=True)
class Dialogue:
    turns: tuple[tuple[str, ...], ...]
    source_id: str

    def stream(self) -> list[str]:
        """Token stream with an end-of-utterance marker after every turn."""
        out: list[str] = []
        for turn in self.turns:
            out.extend(turn)
            out.append(EOU)
        return out


def parse_dialogue(line: str, source_id: str = "") -> Dialogue | None:
    """Parse one ``__eou__``-delimited line; ``None`` if it has < 2 turns."""
    pieces = line.lower().split(EOU)
    turns = tuple(tuple(p.split()) for p in pieces)
    turns = tuple(t for t in turns if t)
    if len(turns) < 2 or EOU not in line.lower():
        return None
    return Dialogue(turns, source_id)


@dataclass
class LoadStats:
    blank: int = 0
    skipped: int = 0


def load_corpus(path, stats: LoadStats | None = None) -> list[Dialogue]:
    """Read one dialogue per line. Blank and single-turn lines are skipped and counted."""
    stats = stats if stats is not None else LoadStats()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc
    dialogues = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            stats.blank += 1
            continue
        d = parse_dialogue(line, str(lineno))
        if d is None:
            stats.skipped += 1
            continue
        dialogues.append(d)
    if stats.blank or stats.skipped:
        log.warning("%s: skipped %d blank and %d degenerate lines", path, stats.blank, stats.skipped)
    return dialogues


class Vocab:
    """Token/id bijection with four reserved ids (pad, unk, eou, start)."""

    def __init__(self, tokens: Sequence[str]):
        self.itos: list[str] = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[int(i)] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise CorpusError(f"cannot read vocabulary {path}: {exc}") from exc
        if tuple(lines[: len(RESERVED)]) != RESERVED:
            raise CorpusError(f"{path}: vocabulary must start with the reserved tokens {RESERVED}")
        return cls(lines[len(RESERVED):])


def build_vocab(dialogues: Sequence[Dialogue], max_size: int = DEFAULT_VOCAB_SIZE) -> Vocab:
    """Keep the ``max_size - 4`` most frequent tokens; ties go to the earliest seen."""
    if max_size < len(RESERVED):
        raise ValueError(f"max_size must be at least {len(RESERVED)}")
    counts: Counter[str] = Counter()
    for d in dialogues:
        for turn in d.turns:
            counts.update(t for t in turn if t not in RESERVED)
    # Counter preserves first-insertion order and sorted() is stable
    ranked = sorted(counts, key=lambda t: -counts[t])
    return Vocab(ranked[: max_size - len(RESERVED)])


def split_corpus(dialogues: Sequence[Dialogue], seed: int) -> tuple[list[Dialogue], list[Dialogue], list[Dialogue]]:
    """Shuffled 10:1:1 train/valid/test split."""
    n = len(dialogues)
    if n < 12:
        raise CorpusError(f"corpus too small to split 10:1:1 ({n} dialogues, need >= 12)")
    order = np.random.Generator(np.random.Philox(seed)).permutation(n)
    n_held = n // 12
    shuffled = [dialogues[i] for i in order]
    return shuffled[2 * n_held:], shuffled[:n_held], shuffled[n_held:2 * n_held]


@dataclass(frozen=True)
class Slice:
    dialogue_id: str
    index: int
    tokens: tuple[str, ...]

    @property
    def uid(self) -> str:
        return f"{self.dialogue_id}#{self.index}"


def make_slices(dialogues: Sequence[Dialogue], slice_len: int = DEFAULT_SLICE_LEN) -> list[Slice]:
    """Cut each dialogue's token stream into consecutive windows of ``slice_len``."""
    if slice_len <= 0:
        raise ValueError("slice_len must be positive")
    out = []
    for d in dialogues:
        stream = d.stream()
        for k, start in enumerate(range(0, len(stream), slice_len)):
            out.append(Slice(d.source_id, k, tuple(stream[start:start + slice_len])))
    return out


def word_dropout(tokens: np.ndarray, rate: float, rng: np.random.Generator,
                 mode: str = "unk", vocab_size: int | None = None) -> np.ndarray:
    """Replace each non-reserved id with probability ``rate``.

    ``mode="unk"`` substitutes the unknown token; ``mode="random"`` draws a
    uniformly random non-reserved id (needs ``vocab_size``).
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("dropout rate must lie in [0, 1]")
    tokens = np.asarray(tokens)
    if rate == 0.0:
        return tokens.copy()
    eligible = tokens >= len(RESERVED)
    hit = eligible & (rng.random(tokens.shape) < rate)
    out = tokens.copy()
    if mode == "unk":
        out[hit] = UNK_ID
    elif mode == "random":
        if vocab_size is None or vocab_size <= len(RESERVED):
            raise ValueError("random-word dropout needs a vocabulary with real tokens")
        out[hit] = rng.integers(len(RESERVED), vocab_size, size=int(hit.sum()))
    else:
        raise ValueError(f"unknown dropout mode {mode!r}")
    return out


@dataclass
class SliceBatch:
    """Padded id matrix of slices plus masks and turn boundaries."""

    tokens: np.ndarray            # [B, slice_len] int64
    mask: np.ndarray              # [B, slice_len] float64, 1 on real tokens
    boundaries: list[list[int]]   # positions of end-of-utterance ids per row
    dialogue_ids: list[str]
    slice_uids: list[str] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    def utterance_spans(self) -> list[tuple[int, int, int]]:
        """``(row, start, end)`` for every utterance; ``end`` is exclusive and
        includes the end-of-utterance token when present.  A slice cut inside
        a turn yields a trailing span without one."""
        spans = []
        for row, bounds in enumerate(self.boundaries):
            length = int(self.mask[row].sum())
            start = 0
            for b in bounds:
                spans.append((row, start, b + 1))
                start = b + 1
            if start < length:
                spans.append((row, start, length))
        return spans


def encode_slices(slices: Sequence[Slice], vocab: Vocab) -> list[np.ndarray]:
    return [np.array(vocab.encode(s.tokens), dtype=np.int64) for s in slices]


def make_batch(encoded: Sequence[np.ndarray], slices: Sequence[Slice], slice_len: int = DEFAULT_SLICE_LEN) -> SliceBatch:
    b = len(encoded)
    tokens = np.full((b, slice_len), PAD_ID, dtype=np.int64)
    mask = np.zeros((b, slice_len))
    bounds = []
    for i, ids in enumerate(encoded):
        if len(ids) > slice_len:
            raise ValueError(f"slice of length {len(ids)} exceeds slice_len {slice_len}")
        tokens[i, :len(ids)] = ids
        mask[i, :len(ids)] = 1.0
        bounds.append([int(j) for j in np.flatnonzero(ids == EOU_ID)])
    return SliceBatch(tokens, mask, bounds, [s.dialogue_id for s in slices], [s.uid for s in slices])


def iter_batches(slices: Sequence[Slice], vocab: Vocab, batch_size: int,
                 rng: np.random.Generator | None = None,
                 slice_len: int = DEFAULT_SLICE_LEN) -> list[SliceBatch]:
    """Batches in corpus order, or shuffled when ``rng`` is given."""
    order = np.arange(len(slices)) if rng is None else rng.permutation(len(slices))
    encoded = encode_slices(slices, vocab)
    out = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        out.append(make_batch([encoded[i] for i in idx], [slices[i] for i in idx], slice_len))
    return out


class EmbeddingTable:
    """Word vectors for a vocabulary; missing tokens are reported as ``None``."""

    def __init__(self, vectors: dict[str, np.ndarray], dim: int, requested: int = 0):
        self.vectors = vectors
        self.dim = dim
        self.requested = requested

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def get(self, token: str) -> np.ndarray | None:
        return self.vectors.get(token)

    @property
    def coverage(self) -> float:
        return len(self.vectors) / self.requested if self.requested else 0.0

    def init_matrix(self, vocab: Vocab, rng: np.random.Generator, scale: float = 0.08) -> np.ndarray:
        """Embedding matrix: file vectors where known, uniform noise elsewhere."""
        mat = rng.uniform(-scale, scale, size=(len(vocab), self.dim))
        for i, tok in enumerate(vocab.itos):
            v = self.vectors.get(tok)
            if v is not None:
                mat[i] = v
        return mat


def load_embeddings(path, vocab: Vocab | None = None) -> EmbeddingTable:
    """Read ``token v1 ... vd`` lines, keeping only tokens in ``vocab`` if given.

    A leading ``count dim`` line (word2vec text format) is skipped.
    """
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read embeddings {path}: {exc}") from exc
    vectors: dict[str, np.ndarray] = {}
    dim = None
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts:
            continue
        if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
            continue
        values = parts[1:]
        if dim is None:
            dim = len(values)
            if dim == 0:
                raise CorpusError(f"{path}:{lineno}: line has no vector values")
        elif len(values) != dim:
            raise CorpusError(f"{path}:{lineno}: expected {dim} values, found {len(values)}")
        if vocab is not None and parts[0] not in vocab:
            continue
        try:
            vectors[parts[0]] = np.array([float(v) for v in values])
        except ValueError:
            raise CorpusError(f"{path}:{lineno}: non-numeric vector value") from None
    if dim is None:
        raise CorpusError(f"{path}: no embeddings found")
    requested = (len(vocab) - len(RESERVED)) if vocab is not None else len(vectors)
    table = EmbeddingTable(vectors, dim, requested)
    log.info("loaded %d embeddings (dim %d, coverage %.1f%%)", len(vectors), dim, 100 * table.coverage)
    return table
