"""Backoff k-gram next-token model."""

from __future__ import annotations

import json
from collections import defaultdict

import numpy as np

from ..errors import EmptyCorpus, TokenOutOfVocab
from .base import NextTokenModel


class NGramModel(NextTokenModel):
    """Interpolated backoff k-gram with add-alpha smoothing.

    The unigram level is add-``alpha`` over the whole vocabulary. A longer
    context ``c`` seen in training mixes its counts with the next-shorter
    level as ``(n(c, t) + alpha * P_shorter(t)) / (n(c) + alpha)``; unseen
    contexts defer entirely to the shorter level.
    """

    def __init__(self, order: int, vocab_size: int, alpha: float = 0.01, end_token: int | None = None,
                 max_len: int = 1024):
        if order < 1:
            raise ValueError("order must be >= 1")
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.order = order
        self.vocab_size = vocab_size
        self.alpha = alpha
        self.end_token = end_token
        self.max_len = max_len
        self.unigram = np.zeros(vocab_size, dtype=np.int64)
        # tables[n][context tuple of length n] -> (tokens array, counts array)
        self.tables: list[dict] = [dict() for _ in range(order)]

    def fit(self, sequences) -> "NGramModel":
        seqs = [list(map(int, s)) for s in sequences]
        if not seqs or not any(seqs):
            raise EmptyCorpus("n-gram fitting needs at least one non-empty sequence")
        raw = [defaultdict(lambda: defaultdict(int)) for _ in range(self.order)]
        for s in seqs:
            for i, tok in enumerate(s):
                if not 0 <= tok < self.vocab_size:
                    raise TokenOutOfVocab(f"token {tok} outside vocabulary of {self.vocab_size}")
                self.unigram[tok] += 1
                for n in range(1, min(self.order - 1, i) + 1):
                    raw[n][tuple(s[i - n:i])][tok] += 1
        for n in range(1, self.order):
            table = {}
            for ctx in sorted(raw[n]):
                items = sorted(raw[n][ctx].items())
                table[ctx] = (np.array([k for k, _ in items], dtype=np.int64),
                              np.array([v for _, v in items], dtype=np.float64))
            self.tables[n] = table
        return self

    def next_token_dist(self, context) -> np.ndarray:
        ctx = [int(t) for t in context]
        dist = (self.unigram + self.alpha) / (self.unigram.sum() + self.alpha * self.vocab_size)
        for n in range(1, min(self.order - 1, len(ctx)) + 1):
            hit = self.tables[n].get(tuple(ctx[-n:]))
            if hit is None:
                break
            toks, counts = hit
            mixed = self.alpha * dist
            mixed[toks] += counts
            dist = mixed / (counts.sum() + self.alpha)
        return dist

    # -- persistence -------------------------------------------------------

    def state(self) -> dict:
        return {
            "order": self.order,
            "vocab_size": self.vocab_size,
            "alpha": self.alpha,
            "end_token": self.end_token,
            "max_len": self.max_len,
            "unigram": self.unigram.tolist(),
            "tables": [
                [[list(ctx), toks.tolist(), counts.astype(int).tolist()] for ctx, (toks, counts) in table.items()]
                for table in self.tables
            ],
        }

    @classmethod
    def from_state(cls, st: dict) -> "NGramModel":
        m = cls(st["order"], st["vocab_size"], st["alpha"], st["end_token"], st["max_len"])
        m.unigram = np.array(st["unigram"], dtype=np.int64)
        m.tables = [
            {tuple(ctx): (np.array(toks, dtype=np.int64), np.array(counts, dtype=np.float64))
             for ctx, toks, counts in table}
            for table in st["tables"]
        ]
        return m

    def to_bytes(self) -> bytes:
        return json.dumps(self.state(), separators=(",", ":")).encode()


def fit_ngram(sequences, order: int = 4, vocab_size: int | None = None, alpha: float = 0.01,
              end_token: int | None = None, max_len: int = 1024) -> NGramModel:
    seqs = [list(map(int, s)) for s in sequences]
    if not seqs or not any(seqs):
        raise EmptyCorpus("n-gram fitting needs at least one non-empty sequence")
    if vocab_size is None:
        vocab_size = max(max(s) for s in seqs if s) + 1
    return NGramModel(order, vocab_size, alpha, end_token, max_len).fit(seqs)
