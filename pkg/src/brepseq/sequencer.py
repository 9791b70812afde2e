"""Face/edge ordering and assembly of the holistic token sequence.

Sequence grammar (``F`` face blocks, ``E`` edge blocks, length ``11F + 12E + 3``)::

    (START | CLASS_k)  [pos x6, geo x4, idx] * F  SEP  [idx, idx, pos x6, geo x4] * E  END

Token ids live in one vocabulary split into disjoint segments:
face indices ``[0, n_max)``, geometry ``[n_max, n_max + N_geo)``, positions
``[n_max + N_geo, n_max + N_geo + L)``, then START, SEP, END and the class tokens.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .codebook import Codebook, PatchEncoder, broadcast_edge, quantize
from .core import SolidModel, connected_components, face_adjacency
from .errors import CoordOutOfRange, EmptyCodebook, HashMismatch, ParseError, TooManyFaces
from .quantize import QuantConfig, tokenize_bbox

FACE_BLOCK = 11
EDGE_BLOCK = 12
FACE_STRATEGIES = ("DFS", "BFS", "ZYX", "DEG-A", "SS", "RAND")
EDGE_STRATEGIES = ("MAX-IDX-A", "RAND")
_KEY_DECIMALS = 9


@dataclass(frozen=True)
class VocabLayout:
    n_max: int = 50
    n_geo: int = 4096
    L: int = 2048
    n_classes: int = 0

    def __post_init__(self):
        if self.n_max < 1 or self.n_geo < 1 or self.L < 2 or self.n_classes < 0:
            raise ValueError(f"invalid layout {self}")

    @property
    def o_geo(self) -> int:
        return self.n_max

    @property
    def o_pos(self) -> int:
        return self.n_max + self.n_geo

    @property
    def o_spec(self) -> int:
        return self.n_max + self.n_geo + self.L

    @property
    def start(self) -> int:
        return self.o_spec

    @property
    def sep(self) -> int:
        return self.o_spec + 1

    @property
    def end(self) -> int:
        return self.o_spec + 2

    def class_token(self, label: int) -> int:
        if not 0 <= label < self.n_classes:
            raise ValueError(f"class label {label} outside [0, {self.n_classes})")
        return self.o_spec + 3 + label

    @property
    def vocab_size(self) -> int:
        return self.o_spec + 3 + self.n_classes

    @property
    def quant(self) -> QuantConfig:
        return QuantConfig(self.L)

    def segments(self) -> dict[str, range]:
        return {
            "index": range(0, self.o_geo),
            "geometry": range(self.o_geo, self.o_pos),
            "position": range(self.o_pos, self.o_spec),
            "special": range(self.o_spec, self.vocab_size),
        }

    def segment_of(self, token: int) -> str:
        if 0 <= token < self.o_geo:
            return "index"
        if token < self.o_pos and token >= 0:
            return "geometry"
        if token < self.o_spec and token >= 0:
            return "position"
        if token == self.start:
            return "START"
        if token == self.sep:
            return "SEP"
        if token == self.end:
            return "END"
        if self.end < token < self.vocab_size:
            return "class"
        return "out-of-vocab"

    def segment_ids(self, tokens) -> np.ndarray:
        """Vectorized segment code: 0 index, 1 geometry, 2 position, 3 special, -1 outside."""
        t = np.asarray(tokens, dtype=np.int64)
        bounds = np.array([0, self.o_geo, self.o_pos, self.o_spec, self.vocab_size])
        seg = np.searchsorted(bounds, t, side="right") - 1
        seg[(t < 0) | (t >= self.vocab_size)] = -1
        return seg

    def to_dict(self) -> dict:
        return {"n_max": self.n_max, "n_geo": self.n_geo, "L": self.L, "n_classes": self.n_classes}

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[int, ...]
    class_label: int | None = None
    r: int | None = None
    face_strategy: str | None = None
    edge_strategy: str | None = None
    seed: int | None = None
    max_len_reached: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def array(self) -> np.ndarray:
        return np.asarray(self.tokens, dtype=np.int64)


# ---------------------------------------------------------------------------
# orderings
# ---------------------------------------------------------------------------


def _zyx_keys(solid: SolidModel) -> list[tuple]:
    c = np.round(solid.face_centroids(), _KEY_DECIMALS)
    return [(float(z), float(y), float(x), i) for i, (x, y, z) in enumerate(c)]


def traversal_order(n_faces: int, edge_faces, centroids, breadth_first: bool = False) -> list[int]:
    """DFS (or BFS) face order over an edge list.

    Each component starts at its highest-degree face; unvisited neighbours are
    visited lowest degree first. Ties go to centroid (z, y, x), then face id.
    Degree counts incident edges.
    """
    neighbors: list[set[int]] = [set() for _ in range(n_faces)]
    degree = np.zeros(n_faces, dtype=np.int64)
    for a, b in np.asarray(edge_faces, dtype=np.int64).reshape(-1, 2):
        neighbors[a].add(int(b))
        neighbors[b].add(int(a))
        degree[a] += 1
        degree[b] += 1
    c = np.round(np.asarray(centroids, dtype=np.float64).reshape(-1, 3), _KEY_DECIMALS)
    key = [(int(degree[i]), float(c[i, 2]), float(c[i, 1]), float(c[i, 0]), i) for i in range(n_faces)]
    visited = np.zeros(n_faces, dtype=bool)
    order: list[int] = []
    starts = sorted(range(n_faces), key=lambda i: (-key[i][0],) + key[i][1:])
    for s in starts:
        if visited[s]:
            continue
        if breadth_first:
            queue = [s]
            visited[s] = True
            head = 0
            while head < len(queue):
                f = queue[head]
                head += 1
                order.append(f)
                for g in sorted((g for g in neighbors[f] if not visited[g]), key=key.__getitem__):
                    visited[g] = True
                    queue.append(g)
        else:
            stack = [s]
            while stack:
                f = stack.pop()
                if visited[f]:
                    continue
                visited[f] = True
                order.append(f)
                nxt = sorted((g for g in neighbors[f] if not visited[g]), key=key.__getitem__)
                stack.extend(reversed(nxt))
    return order


def _fiedler_order(solid: SolidModel) -> list[int]:
    _, degree = face_adjacency(solid)
    zyx = _zyx_keys(solid)
    comps = connected_components(solid)
    comps.sort(key=lambda c: (-max(int(degree[i]) for i in c),) + min(zyx[i] for i in c))
    order: list[int] = []
    for comp in comps:
        if len(comp) <= 2:
            order.extend(sorted(comp, key=zyx.__getitem__))
            continue
        pos = {f: k for k, f in enumerate(comp)}
        lap = np.zeros((len(comp), len(comp)))
        for a, b in solid.edge_faces:
            if a in pos:
                i, j = pos[int(a)], pos[int(b)]
                lap[i, j] -= 1
                lap[j, i] -= 1
                lap[i, i] += 1
                lap[j, j] += 1
        _, vecs = np.linalg.eigh(lap)
        fied = vecs[:, 1]
        # fix the sign: the largest-magnitude coordinate is positive
        pivot = int(np.argmax(np.round(np.abs(fied), _KEY_DECIMALS)))
        if fied[pivot] < 0:
            fied = -fied
        fied = np.round(fied, _KEY_DECIMALS)
        order.extend(sorted(comp, key=lambda f: (float(fied[pos[f]]),) + zyx[f]))
    return order


def order_faces(solid: SolidModel, strategy: str = "DFS", seed: int | np.random.Generator = 0) -> list[int]:
    """Return face ids in sequence order under one of :data:`FACE_STRATEGIES`."""
    strategy = strategy.upper()
    if strategy in ("DFS", "BFS"):
        return traversal_order(solid.n_faces, solid.edge_faces, solid.face_centroids(), strategy == "BFS")
    if strategy == "ZYX":
        return [k[-1] for k in sorted(_zyx_keys(solid))]
    if strategy == "DEG-A":
        _, degree = face_adjacency(solid)
        zyx = _zyx_keys(solid)
        return sorted(range(solid.n_faces), key=lambda i: (int(degree[i]),) + zyx[i])
    if strategy == "SS":
        return _fiedler_order(solid)
    if strategy == "RAND":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return [int(i) for i in rng.permutation(solid.n_faces)]
    raise ValueError(f"unknown face strategy {strategy!r}; expected one of {FACE_STRATEGIES}")


def order_edges(solid: SolidModel, face_positions, strategy: str = "MAX-IDX-A",
                seed: int | np.random.Generator = 0) -> list[int]:
    """Order edges by the larger sequence position of their two faces (ascending).

    Ties fall back to the smaller position, then the edge bbox, then edge id.
    ``face_positions[f]`` is face ``f``'s position in the face sequence.
    """
    strategy = strategy.upper()
    if strategy == "RAND":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return [int(i) for i in rng.permutation(solid.n_edges)]
    if strategy != "MAX-IDX-A":
        raise ValueError(f"unknown edge strategy {strategy!r}; expected one of {EDGE_STRATEGIES}")
    pos = np.asarray(face_positions)
    boxes = np.round(solid.edge_bboxes(), _KEY_DECIMALS)
    keys = []
    for e, (a, b) in enumerate(solid.edge_faces):
        pa, pb = int(pos[a]), int(pos[b])
        keys.append((max(pa, pb), min(pa, pb), tuple(boxes[e]), e))
    return [k[-1] for k in sorted(keys)]


def reindex(face_positions, r: int, n_max: int) -> np.ndarray:
    """Face-index token value for each sequence position: ``(position + r) mod n_max``."""
    pos = np.asarray(face_positions, dtype=np.int64)
    if len(pos) > n_max:
        raise TooManyFaces(f"{len(pos)} faces exceeds n_max={n_max}")
    if not 0 <= r < n_max:
        raise ValueError(f"r must lie in [0, {n_max}), got {r}")
    return (pos + r) % n_max


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


def geometry_tokens(solid: SolidModel, codebook: Codebook, encoder=None, count: bool = False):
    """(face tokens (F, 4), edge tokens (E, 4)) from nearest-codeword search."""
    if codebook is None or codebook.size == 0:
        raise EmptyCodebook("tokenization needs a trained codebook")
    enc = encoder or PatchEncoder()
    lat = [enc.encode(f) for f in solid.faces] + [enc.encode(broadcast_edge(e)) for e in solid.edges]
    if not lat:
        return np.zeros((0, 4), np.int64), np.zeros((0, 4), np.int64)
    idx = quantize(np.concatenate(lat), codebook, count=count).reshape(-1, 4)
    return idx[:solid.n_faces], idx[solid.n_faces:]


def tokenize_solid(solid: SolidModel, codebook: Codebook, layout: VocabLayout = VocabLayout(),
                   face_strategy: str = "DFS", seed: int = 0, *, r: int | None = None,
                   edge_strategy: str = "MAX-IDX-A", conditional: bool = False,
                   strict: bool = True, encoder=None) -> TokenSeq:
    """Encode a solid as a holistic token sequence.

    ``r`` (the face-index rotation) is drawn from ``seed`` unless given. With
    ``conditional=True`` the solid's class token replaces START. In strict mode
    any coordinate outside [-1, 1] raises ``CoordOutOfRange``; otherwise the
    position quantizer clips.
    """
    if solid.n_faces > layout.n_max:
        raise TooManyFaces(f"{solid.n_faces} faces exceeds n_max={layout.n_max}")
    if solid.n_faces == 0:
        raise ValueError("cannot tokenize a solid without faces")
    if codebook is None or codebook.size == 0:
        raise EmptyCodebook("tokenization needs a trained codebook")
    if codebook.size != layout.n_geo:
        raise HashMismatch(f"codebook has {codebook.size} codewords but layout expects {layout.n_geo}")
    if strict and (np.abs(solid.faces).max() > 1.0 or (solid.n_edges and np.abs(solid.edges).max() > 1.0)):
        raise CoordOutOfRange("solid leaves [-1, 1]^3; normalize it or pass strict=False")
    rng = np.random.default_rng(seed)
    if r is None:
        r = int(rng.integers(0, layout.n_max))
    order = order_faces(solid, face_strategy, rng)
    positions = np.empty(solid.n_faces, dtype=np.int64)
    positions[order] = np.arange(solid.n_faces)
    edge_order = order_edges(solid, positions, edge_strategy, rng)
    labels = reindex(positions, r, layout.n_max)

    q = layout.quant
    face_geo, edge_geo = geometry_tokens(solid, codebook, encoder)
    face_pos = solid.face_bboxes()
    edge_pos = solid.edge_bboxes()

    if conditional:
        if solid.class_label is None:
            raise ValueError("conditional tokenization needs a class label")
        head = layout.class_token(solid.class_label)
    else:
        head = layout.start
    out = [head]
    for f in order:
        out.extend((tokenize_bbox(face_pos[f], q) + layout.o_pos).tolist())
        out.extend((face_geo[f] + layout.o_geo).tolist())
        out.append(int(labels[f]))
    out.append(layout.sep)
    for e in edge_order:
        a, b = solid.edge_faces[e]
        if positions[a] > positions[b]:
            a, b = b, a
        out.extend([int(labels[a]), int(labels[b])])
        out.extend((tokenize_bbox(edge_pos[e], q) + layout.o_pos).tolist())
        out.extend((edge_geo[e] + layout.o_geo).tolist())
    out.append(layout.end)
    return TokenSeq(tuple(int(t) for t in out), solid.class_label if conditional else None,
                    r, face_strategy.upper(), edge_strategy.upper(), seed)


def expected_length(n_faces: int, n_edges: int) -> int:
    return FACE_BLOCK * n_faces + EDGE_BLOCK * n_edges + 3


# ---------------------------------------------------------------------------
# token files
# ---------------------------------------------------------------------------


def write_token_file(path, seqs, layout: VocabLayout, extra: dict | None = None) -> None:
    """One space-separated sequence per line plus a ``<path>.json`` sidecar."""
    path = Path(path)
    lines = [" ".join(str(t) for t in s) for s in seqs]
    path.write_text("".join(line + "\n" for line in lines))
    sidecar = {
        "layout": layout.to_dict(),
        "layout_hash": layout.hash(),
        "sequences": [
            {"r": s.r, "seed": s.seed, "face_strategy": s.face_strategy, "edge_strategy": s.edge_strategy,
             "class_label": s.class_label, "max_len_reached": s.max_len_reached}
            if isinstance(s, TokenSeq) else {}
            for s in seqs
        ],
    }
    sidecar.update(extra or {})
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=1, sort_keys=True))


def read_token_file(path, layout: VocabLayout | None = None) -> tuple[list[list[int]], dict]:
    """Read sequences and sidecar; a sidecar layout differing from ``layout`` is an error."""
    path = Path(path)
    seqs = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            seqs.append([int(t) for t in line.split()])
        except ValueError:
            raise ParseError(f"{path}:{lineno}: non-integer token") from None
    side_path = Path(str(path) + ".json")
    sidecar = json.loads(side_path.read_text()) if side_path.exists() else {}
    if layout is not None and sidecar.get("layout_hash") not in (None, layout.hash()):
        raise HashMismatch(f"{path}: layout hash {sidecar['layout_hash']} != {layout.hash()}")
    return seqs, sidecar
