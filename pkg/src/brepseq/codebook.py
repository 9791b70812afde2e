"""Geometry tokens: 2x2 patch latents quantized against a trained codebook.

A 32x32x3 sample grid (a face, or an edge broadcast along V) is split into a
2x2 arrangement of 16x16x3 patches; each flattened patch (768 values) is one
latent vector. Each latent maps to its nearest codeword, so every face or edge
becomes four geometry tokens.

The encoder is pluggable: anything with ``encode(grid) -> (4, D)`` and
``decode(latents) -> grid`` can stand in for :class:`PatchEncoder`.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .core import GRID
from .errors import EmptyCodebook, EmptyDataset, IndexOutOfRange, NonFiniteGeometry, SchemaError

HALF = GRID // 2
PATCH_DIM = HALF * HALF * 3
MAGIC = b"BRCB"
FORMAT_VERSION = 1


def encode_face(grid) -> np.ndarray:
    """Split a 32x32x3 grid into four row-major flattened 16x16x3 patches.

    Patch order is (top-left, top-right, bottom-left, bottom-right) with rows
    indexing U and columns indexing V.
    """
    g = np.asarray(grid, dtype=np.float64)
    if g.shape != (GRID, GRID, 3):
        raise ValueError(f"expected a (32, 32, 3) grid, got {g.shape}")
    if not np.all(np.isfinite(g)):
        raise NonFiniteGeometry("grid contains NaN or inf")
    return g.reshape(2, HALF, 2, HALF, 3).transpose(0, 2, 1, 3, 4).reshape(4, PATCH_DIM)


def patches_to_grid(patches) -> np.ndarray:
    p = np.asarray(patches, dtype=np.float64).reshape(2, 2, HALF, HALF, 3)
    return p.transpose(0, 2, 1, 3, 4).reshape(GRID, GRID, 3)


def broadcast_edge(polyline) -> np.ndarray:
    """Repeat a 32-point polyline along V: ``grid[u, v] = polyline[u]``."""
    e = np.asarray(polyline, dtype=np.float64)
    if e.shape != (GRID, 3):
        raise ValueError(f"expected a (32, 3) polyline, got {e.shape}")
    return np.repeat(e[:, None, :], GRID, axis=1)


def collapse_edge(grid) -> np.ndarray:
    """Inverse of :func:`broadcast_edge`: average over the V axis."""
    return np.asarray(grid, dtype=np.float64).mean(axis=1)


def encode_edge(polyline) -> np.ndarray:
    return encode_face(broadcast_edge(polyline))


class PatchEncoder:
    """Identity patching; the default latent space of the codebook."""

    dim = PATCH_DIM

    def encode(self, grid) -> np.ndarray:
        return encode_face(grid)

    def decode(self, latents) -> np.ndarray:
        return patches_to_grid(latents)


def _nearest(x: np.ndarray, codewords: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Index of the nearest codeword per row (squared L2); exact ties go to the lowest index."""
    c2 = np.einsum("ij,ij->i", codewords, codewords)
    out = np.empty(len(x), dtype=np.int64)
    for start in range(0, len(x), chunk):
        xb = x[start:start + chunk]
        x2 = np.einsum("ij,ij->i", xb, xb)
        d = x2[:, None] - 2.0 * (xb @ codewords.T) + c2[None, :]
        best = d.min(axis=1)
        # the expanded form is inexact; re-rank near-ties with direct differences
        tol = 1e-9 * (x2 + c2.max()) + 1e-12
        near = d <= (best + tol)[:, None]
        idx = d.argmin(axis=1)
        for row in np.flatnonzero(near.sum(axis=1) > 1):
            cand = np.flatnonzero(near[row])
            exact = ((codewords[cand] - xb[row]) ** 2).sum(axis=1)
            idx[row] = cand[int(np.argmin(exact))]
        out[start:start + chunk] = idx
    return out


@dataclass(eq=False)
class Codebook:
    codewords: np.ndarray
    usage_counts: np.ndarray = None
    max_error: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.codewords = np.array(self.codewords, dtype=np.float64)
        if self.codewords.ndim != 2 or len(self.codewords) == 0:
            raise EmptyCodebook("codebook needs at least one codeword")
        if not np.all(np.isfinite(self.codewords)):
            raise NonFiniteGeometry("codewords must be finite")
        if self.usage_counts is None:
            self.usage_counts = np.zeros(len(self.codewords), dtype=np.int64)
        self.usage_counts = np.asarray(self.usage_counts, dtype=np.int64)
        if self.usage_counts.shape != (len(self.codewords),) or np.any(self.usage_counts < 0):
            raise SchemaError("usage_counts must be one non-negative count per codeword")

    @property
    def size(self) -> int:
        return len(self.codewords)

    @property
    def dim(self) -> int:
        return self.codewords.shape[1]

    def nearest(self, latents) -> np.ndarray:
        return _nearest(np.asarray(latents, dtype=np.float64).reshape(-1, self.dim), self.codewords)

    def lookup(self, tokens) -> np.ndarray:
        tokens = np.asarray(tokens, dtype=np.int64)
        if np.any(tokens < 0) or np.any(tokens >= self.size):
            raise IndexOutOfRange(f"geometry token outside [0, {self.size})")
        return self.codewords[tokens]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(struct.pack("<II", self.size, self.dim))
        h.update(self.codewords.astype("<f4").tobytes())
        return h.hexdigest()[:16]

    # -- persistence -------------------------------------------------------

    def to_bytes(self) -> bytes:
        meta = dict(self.meta, max_error=float(self.max_error))
        blob = json.dumps(meta, sort_keys=True).encode()
        header = MAGIC + struct.pack("<IIII", FORMAT_VERSION, self.size, self.dim, len(blob))
        return (header + blob + self.codewords.astype("<f4").tobytes()
                + self.usage_counts.astype("<u8").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "Codebook":
        if len(data) < 20 or data[:4] != MAGIC:
            raise SchemaError("not a codebook file (bad magic)")
        version, n, dim, meta_len = struct.unpack_from("<IIII", data, 4)
        if version != FORMAT_VERSION:
            raise SchemaError(f"unsupported codebook version {version}")
        off = 20
        expected = off + meta_len + n * dim * 4 + n * 8
        if len(data) != expected:
            raise SchemaError(f"codebook file has {len(data)} bytes, expected {expected}")
        meta = json.loads(data[off:off + meta_len])
        off += meta_len
        words = np.frombuffer(data, dtype="<f4", count=n * dim, offset=off).reshape(n, dim)
        off += n * dim * 4
        usage = np.frombuffer(data, dtype="<u8", count=n, offset=off)
        max_error = float(meta.pop("max_error", 0.0))
        return cls(words.astype(np.float64), usage.astype(np.int64), max_error, meta)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Codebook":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def to_json(self) -> str:
        return json.dumps({
            "n_geo": self.size,
            "patch_dim": self.dim,
            "max_error": self.max_error,
            "meta": self.meta,
            "usage_counts": self.usage_counts.tolist(),
            "codewords": self.codewords.astype(np.float32).tolist(),
        }, sort_keys=True)


def quantize(latent, cb: Codebook, count: bool = True) -> np.ndarray:
    """Nearest-codeword index for each latent vector; optionally bumps usage counts."""
    if cb is None or cb.size == 0:
        raise EmptyCodebook("quantize needs a trained codebook")
    idx = cb.nearest(latent)
    if count:
        np.add.at(cb.usage_counts, idx, 1)
    return idx


def decode(tokens, cb: Codebook, kind: str = "face", encoder=None) -> np.ndarray:
    """Reassemble four codewords into a face grid, or collapse to an edge polyline."""
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.shape != (4,):
        raise ValueError(f"expected 4 geometry tokens, got shape {tokens.shape}")
    grid = (encoder or PatchEncoder()).decode(cb.lookup(tokens))
    if kind == "face":
        return grid
    if kind == "edge":
        return collapse_edge(grid)
    raise ValueError(f"kind must be 'face' or 'edge', got {kind!r}")


def solid_latents(solids, encoder=None) -> np.ndarray:
    """Stack the patch latents of every face and edge of every solid."""
    enc = encoder or PatchEncoder()
    rows = []
    for s in solids:
        rows.extend(enc.encode(f) for f in s.faces)
        rows.extend(enc.encode(broadcast_edge(e)) for e in s.edges)
    if not rows:
        return np.zeros((0, PATCH_DIM))
    return np.concatenate(rows, axis=0)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RestartConfig:
    enabled: bool = True
    threshold: int = 1
    pool_size: int = 8192


class _Reservoir:
    """Uniform sample of the features streamed through one epoch (algorithm R)."""

    def __init__(self, size: int, dim: int, rng: np.random.Generator):
        self.buf = np.empty((size, dim))
        self.n_seen = 0
        self.rng = rng

    def add(self, batch: np.ndarray) -> None:
        size = len(self.buf)
        for row in batch:
            if self.n_seen < size:
                self.buf[self.n_seen] = row
            else:
                j = int(self.rng.integers(0, self.n_seen + 1))
                if j < size:
                    self.buf[j] = row
            self.n_seen += 1

    @property
    def items(self) -> np.ndarray:
        return self.buf[:min(self.n_seen, len(self.buf))]


def quantization_error(cb: Codebook, data) -> float:
    """Mean squared error per latent vector (sum over its coordinates)."""
    data = np.asarray(data, dtype=np.float64)
    idx = cb.nearest(data)
    return float(((data - cb.codewords[idx]) ** 2).sum(axis=1).mean())


def utilization(cb: Codebook, data) -> float:
    """Fraction of codewords that are nearest to at least one latent in ``data``."""
    idx = cb.nearest(data)
    return len(np.unique(idx)) / cb.size


def _segment_sums(x, idx, n):
    order = np.argsort(idx, kind="stable")
    sorted_idx = idx[order]
    uniq, starts = np.unique(sorted_idx, return_index=True)
    sums = np.zeros((n, x.shape[1]))
    sums[uniq] = np.add.reduceat(x[order], starts, axis=0)
    return sums


def train_codebook(data, n_geo: int = 4096, epochs: int = 10, restart: RestartConfig = RestartConfig(),
                   seed: int = 0, batch_size: int = 1024, val_size: int = 2048,
                   history: list | None = None) -> Codebook:
    """Mini-batch k-means over patch latents with dead-codeword restarts.

    Codewords start from distinct latents (all of them, padded with repeats,
    when there are no more than ``n_geo``). After every epoch but the last,
    codewords used fewer than ``restart.threshold`` times that epoch are
    re-seeded uniformly from a reservoir of that epoch's features. The
    returned codebook is the checkpoint (initialization or epoch end) with the
    lowest error on a fixed validation subset.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or len(data) == 0:
        raise EmptyDataset("codebook training needs at least one latent vector")
    if n_geo < 1:
        raise ValueError("n_geo must be positive")
    rng = np.random.default_rng(seed)
    n, dim = data.shape
    uniq = np.unique(data, axis=0)
    if len(uniq) <= n_geo:
        words = np.vstack([uniq, uniq[rng.integers(0, len(uniq), size=n_geo - len(uniq))]])
    else:
        words = uniq[np.sort(rng.choice(len(uniq), size=n_geo, replace=False))].copy()
    val = data[np.sort(rng.choice(n, size=min(n, val_size), replace=False))]
    totals = np.zeros(n_geo)

    def val_error(w):
        return float(((val - w[_nearest(val, w)]) ** 2).sum(axis=1).mean())

    best_err, best = val_error(words), words.copy()
    if history is not None:
        history.append({"epoch": 0, "val_error": best_err, "restarted": 0})
    for epoch in range(epochs):
        usage = np.zeros(n_geo, dtype=np.int64)
        pool = _Reservoir(restart.pool_size, dim, rng)
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            batch = data[perm[start:start + batch_size]]
            idx = _nearest(batch, words)
            counts = np.bincount(idx, minlength=n_geo)
            used = counts > 0
            sums = _segment_sums(batch, idx, n_geo)
            totals[used] += counts[used]
            eta = (counts[used] / totals[used])[:, None]
            words[used] += eta * (sums[used] / counts[used][:, None] - words[used])
            usage += counts
            pool.add(batch)
        restarted = 0
        if restart.enabled and epoch < epochs - 1:
            dead = np.flatnonzero(usage < restart.threshold)
            if len(dead):
                items = pool.items
                words[dead] = items[rng.integers(0, len(items), size=len(dead))]
                totals[dead] = 0
                restarted = len(dead)
        err = val_error(words)
        if history is not None:
            history.append({"epoch": epoch + 1, "val_error": err, "restarted": restarted})
        if err <= best_err:
            best_err, best = err, words.copy()
    cb = Codebook(best)
    idx = cb.nearest(data)
    cb.usage_counts = np.bincount(idx, minlength=n_geo).astype(np.int64)
    cb.max_error = float(np.abs(data - cb.codewords[idx]).max())
    cb.meta = {"train_seed": seed, "epochs": epochs, "restart": restart.enabled, "val_error": best_err}
    return cb
