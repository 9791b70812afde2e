"""Nucleus (top-p) sampling and autoregressive generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateDistribution
from ..sequencer import TokenSeq
from .base import NextTokenModel


@dataclass(frozen=True)
class SamplerConfig:
    p: float = 0.9
    max_len: int = 1024
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"p must lie in (0, 1], got {self.p}")
        if self.max_len < 1:
            raise ValueError("max_len must be positive")


def nucleus(dist, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Smallest high-probability token set with mass >= p, and its renormalized probabilities.

    Tokens are ranked by probability, ties by ascending token id.
    """
    probs = np.asarray(dist, dtype=np.float64)
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must lie in (0, 1], got {p}")
    if probs.ndim != 1 or not np.all(np.isfinite(probs)) or np.any(probs < 0):
        raise DegenerateDistribution("distribution must be a finite non-negative vector")
    total = probs.sum()
    if total <= 0:
        raise DegenerateDistribution("distribution has no mass")
    probs = probs / total
    order = np.lexsort((np.arange(len(probs)), -probs))
    nonzero = int(np.count_nonzero(probs))
    if p >= 1.0:
        k = nonzero
    else:
        cum = np.cumsum(probs[order])
        k = min(int(np.searchsorted(cum, p - 1e-12, side="left")) + 1, nonzero)
    support = order[:k]
    kept = probs[support]
    return support, kept / kept.sum()


def nucleus_sample(dist, p: float, rng: np.random.Generator) -> int:
    support, probs = nucleus(dist, p)
    if len(support) == 1:
        return int(support[0])
    u = rng.random()
    j = int(np.searchsorted(np.cumsum(probs), u, side="right"))
    return int(support[min(j, len(support) - 1)])


def _end_token(model):
    end = getattr(model, "end_token", None)
    if end is None:
        raise ValueError("model does not declare an end_token")
    return end


def generate(model: NextTokenModel, prompt, cfg: SamplerConfig = SamplerConfig()) -> TokenSeq:
    """Sample until END or ``cfg.max_len`` tokens (prompt included)."""
    return generate_batch(model, [prompt], cfg)[0]


def generate_batch(model: NextTokenModel, prompts, cfg: SamplerConfig = SamplerConfig()) -> list[TokenSeq]:
    """Sample one sequence per prompt; sequence ``i`` uses an RNG seeded by ``(cfg.seed, i)``.

    Results do not depend on how many prompts share the batch.
    """
    end = _end_token(model)
    max_len = min(cfg.max_len, getattr(model, "max_len", cfg.max_len))
    seqs = [list(int(t) for t in p) for p in prompts]
    if any(not s for s in seqs):
        raise ValueError("prompts must be non-empty")
    rngs = [np.random.default_rng([cfg.seed, i]) for i in range(len(seqs))]
    active = [i for i, s in enumerate(seqs) if s[-1] != end and len(s) < max_len]
    # cached decoding needs one shared prompt length
    incremental = hasattr(model, "begin") and len({len(seqs[i]) for i in active}) == 1
    if active and incremental:
        cache, dists = model.begin([seqs[i] for i in active])
    while active:
        if not incremental:
            dists = model.next_token_dists([seqs[i] for i in active])
        still, rows = [], []
        for row, (i, dist) in enumerate(zip(active, dists)):
            tok = nucleus_sample(dist, cfg.p, rngs[i])
            seqs[i].append(tok)
            if tok != end and len(seqs[i]) < max_len:
                still.append(i)
                rows.append(row)
        active = still
        if active and incremental:
            cache, dists = model.advance(cache, rows, [seqs[i][-1] for i in active])
    return [TokenSeq(tuple(s), seed=cfg.seed, max_len_reached=s[-1] != end) for s in seqs]
