"""Turn raw text and count tables into counts vectors and token streams.

The text normalization is deliberately frozen: lowercase everything, delete
every character in the Unicode punctuation and symbol categories (P* and S*),
then split on whitespace. Corpus experiments index symbols by the full-corpus
vocabulary so that words unseen in a subsample still exist as zero-count
symbols; their treatment is precisely what distinguishes the estimators.
"""

from __future__ import annotations

import csv
import unicodedata
from dataclasses import dataclass

import numpy as np

from .mixture import CountsVector

__all__ = [
    "TokenStream",
    "CountTable",
    "tokenize",
    "counts_from_stream",
    "prefix_counts",
    "load_count_table",
    "load_counts_file",
    "save_token_stream",
    "load_token_stream",
]


@dataclass(frozen=True)
class TokenStream:
    """Normalized corpus tokens in document order, plus a dense vocabulary."""

    tokens: tuple[str, ...]
    vocab: dict[str, int]

    def __post_init__(self):
        if len(self.vocab) != len(set(self.vocab.values())):
            raise ValueError("vocabulary indices must be unique")
        if self.vocab and sorted(self.vocab.values()) != list(range(len(self.vocab))):
            raise ValueError("vocabulary indices must be dense 0..k-1")

    @property
    def token_ids(self) -> np.ndarray:
        return np.array([self.vocab[t] for t in self.tokens], dtype=np.int64)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class CountTable:
    """Rows of (symbol, count) parsed from a two-column CSV."""

    symbols: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        if len(self.symbols) != len(self.counts):
            raise ValueError("symbols and counts must have equal length")
        if len(set(self.symbols)) != len(self.symbols):
            seen: set[str] = set()
            dupes = sorted({s for s in self.symbols if s in seen or seen.add(s)})
            raise ValueError(f"duplicate symbols in count table: {dupes[:10]}")

    def counts_vector(self) -> CountsVector:
        return CountsVector(self.counts)


def _strip_map(text: str) -> dict[int, str | None]:
    table: dict[int, str | None] = {}
    for ch in set(text):
        if unicodedata.category(ch)[0] in ("P", "S"):
            table[ord(ch)] = None
    return table


def tokenize(raw: str) -> TokenStream:
    """Lowercase, drop punctuation/symbol characters, split on whitespace."""
    lowered = raw.lower()
    cleaned = lowered.translate(_strip_map(lowered))
    tokens = tuple(cleaned.split())
    vocab: dict[str, int] = {}
    for tok in tokens:
        if tok not in vocab:
            vocab[tok] = len(vocab)
    return TokenStream(tokens=tokens, vocab=vocab)


def counts_from_stream(stream: TokenStream) -> CountsVector:
    """Word counts over the stream's own vocabulary (first-appearance order)."""
    if not stream.tokens:
        raise ValueError("token stream is empty")
    counts = np.bincount(stream.token_ids, minlength=len(stream.vocab))
    return CountsVector(counts)


def prefix_counts(stream: TokenStream, m: int) -> CountsVector:
    """Counts of the first ``m`` tokens, indexed by the full vocabulary."""
    if not 0 <= m <= len(stream.tokens):
        raise ValueError("prefix length out of range")
    ids = np.array([stream.vocab[t] for t in stream.tokens[:m]], dtype=np.int64)
    counts = np.bincount(ids, minlength=len(stream.vocab)) if m else \
        np.zeros(len(stream.vocab), dtype=np.int64)
    return CountsVector(counts)


def save_token_stream(stream: TokenStream, path) -> None:
    """Cache a normalized token stream as one token per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for token in stream.tokens:
            fh.write(token)
            fh.write("\n")


def load_token_stream(path) -> TokenStream:
    """Read a one-token-per-line cache written by :func:`save_token_stream`."""
    with open(path, encoding="utf-8") as fh:
        tokens = tuple(line.strip() for line in fh if line.strip())
    vocab: dict[str, int] = {}
    for tok in tokens:
        if tok not in vocab:
            vocab[tok] = len(vocab)
    return TokenStream(tokens=tokens, vocab=vocab)


def load_count_table(path, has_header: bool = False) -> CountTable:
    """Parse a two-column symbol,count CSV; zero-count rows are kept."""
    symbols: list[str] = []
    counts: list[int] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if not row or (lineno == 1 and has_header):
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            symbol, value = row[0].strip(), row[1].strip()
            try:
                count = int(value)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: count {value!r} is not an integer") from exc
            if count < 0:
                raise ValueError(f"{path}:{lineno}: negative count {count}")
            symbols.append(symbol)
            counts.append(count)
    if not symbols:
        raise ValueError(f"{path}: no rows")
    return CountTable(symbols=tuple(symbols), counts=np.array(counts, dtype=np.int64))


def load_counts_file(path) -> tuple[list[str], CountsVector]:
    """Read counts either as bare integers (one per line) or symbol,count CSV.

    Returns symbol labels (indices when the file has no symbol column) and
    the counts vector.
    """
    with open(path, encoding="utf-8") as fh:
        first = ""
        for line in fh:
            if line.strip():
                first = line
                break
    if not first:
        raise ValueError(f"{path}: file contains no data")
    if "," in first:
        table = load_count_table(path)
        return list(table.symbols), table.counts_vector()
    values = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                values.append(int(line))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {line!r} is not an integer") from exc
    counts = CountsVector(np.array(values, dtype=np.int64))
    return [str(i) for i in range(counts.k)], counts
