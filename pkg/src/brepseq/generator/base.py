"""Interface shared by next-token models."""

from __future__ import annotations

import numpy as np


class NextTokenModel:
    """A distribution over the next token given a prefix.

    Subclasses implement :meth:`next_token_dist`; :meth:`next_token_dists`
    may be overridden to batch several prefixes at once.
    """

    vocab_size: int
    max_len: int

    def next_token_dist(self, context) -> np.ndarray:
        raise NotImplementedError

    def next_token_dists(self, contexts) -> np.ndarray:
        return np.stack([self.next_token_dist(c) for c in contexts])
