"""Feature dictionary: explicit tokens plus hashed n-gram buckets.

Row layout of the embedding matrix follows the dictionary::

    [0, n_unigrams)                              explicit features (words, labels, ids)
    [n_unigrams, n_unigrams + bucket_count)      hashed n-gram buckets
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NGRAM_HASH_MULT = 116049371
_U64 = (1 << 64) - 1


def hash_ngram(unigram_ids: Sequence[int], bucket_count: int) -> int:
    """Bucket offset of an n-gram given the ids of its unigrams.

    ``h = id0; h = h * 116049371 + id`` with 64-bit unsigned wrap-around,
    reduced modulo ``bucket_count``.
    """
    if bucket_count <= 0:
        raise ValueError("n-grams disabled")
    if len(unigram_ids) < 2:
        raise ValueError("an n-gram needs at least two unigrams")
    h = int(unigram_ids[0]) & _U64
    for i in unigram_ids[1:]:
        h = (h * NGRAM_HASH_MULT + int(i)) & _U64
    return h % bucket_count


@dataclass
class Dictionary:
    token_to_id: dict[str, int]
    counts: np.ndarray
    n_unigrams: int
    bucket_count: int = 0
    ngram_order: int = 1
    min_count: int = 1
    label_prefix: str = "__label__"
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.tokens:
            self.tokens = [""] * len(self.token_to_id)
            for tok, i in self.token_to_id.items():
                self.tokens[i] = tok
        self.is_label = np.fromiter(
            (t.startswith(self.label_prefix) for t in self.tokens), dtype=bool, count=len(self.tokens)
        )

    @classmethod
    def build(
        cls,
        corpus_stream: Iterable[Sequence[str]],
        min_count: int = 1,
        ngram_order: int = 1,
        bucket_count: int = 0,
        label_prefix: str = "__label__",
    ) -> "Dictionary":
        """Count every token, drop those below ``min_count``, assign ids.

        Ids go in descending count order; ties keep first-appearance order.
        """
        if min_count < 1 or ngram_order < 1 or bucket_count < 0:
            raise ValueError("need min_count >= 1, ngram_order >= 1, bucket_count >= 0")
        counts: dict[str, int] = {}
        n_lines = 0
        for tokens in corpus_stream:
            n_lines += 1
            for tok in tokens:
                counts[tok] = counts.get(tok, 0) + 1
        if not counts:
            raise ValueError("empty corpus")
        # dict order is first appearance and sorted() is stable
        kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: -counts[t])
        token_to_id = {t: i for i, t in enumerate(kept)}
        return cls(
            token_to_id=token_to_id,
            counts=np.array([counts[t] for t in kept], dtype=np.int64),
            n_unigrams=len(kept),
            bucket_count=bucket_count if ngram_order > 1 else 0,
            ngram_order=ngram_order,
            min_count=min_count,
            label_prefix=label_prefix,
            tokens=kept,
        )

    @property
    def size(self) -> int:
        """Number of embedding rows D."""
        return self.n_unigrams + self.bucket_count

    def __len__(self) -> int:
        return self.size

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def label_ids(self) -> np.ndarray:
        return np.flatnonzero(self.is_label)

    def feature_name(self, i: int) -> str:
        if i < self.n_unigrams:
            return self.tokens[i]
        return f"<ngram:{i - self.n_unigrams}>"

    def encode(self, tokens: Sequence[str]) -> list[int]:
        """Ids of known unigrams followed by one hashed id per n-gram window.

        Unknown tokens are dropped and break n-gram windows.
        """
        ids: list[int] = []
        runs: list[list[int]] = [[]]
        for tok in tokens:
            i = self.token_to_id.get(tok)
            if i is None:
                if runs[-1]:
                    runs.append([])
                continue
            ids.append(i)
            runs[-1].append(i)
        if self.bucket_count > 0 and self.ngram_order > 1:
            for run in runs:
                for start in range(len(run)):
                    for n in range(2, self.ngram_order + 1):
                        if start + n > len(run):
                            break
                        ids.append(self.n_unigrams + hash_ngram(run[start:start + n], self.bucket_count))
        return ids
