"""Token sequences back to solids: parsing, geometry recovery, vertex clustering, validity."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .codebook import Codebook, decode
from .core import SolidModel
from .errors import (BadStart, DuplicateFaceIndex, IndexOutOfRange, MissingEnd, MissingSep,
                     ReferenceError_, SelfLoopEdge, SequenceError, TrailingTokens, TruncatedBlock,
                     TypeMismatch, UnknownFaceReference)
from .ingestion import solid_to_dict
from .quantize import detokenize_bbox
from .sequencer import EDGE_BLOCK, FACE_BLOCK, VocabLayout
from .unionfind import UnionFind

TAU_MERGE = 0.1

# slot layouts by segment code (0 index, 1 geometry, 2 position)
_FACE_SLOTS = (2,) * 6 + (1,) * 4 + (0,)
_EDGE_SLOTS = (0, 0) + (2,) * 6 + (1,) * 4
_SEG_NAMES = {0: "index", 1: "geometry", 2: "position", 3: "special", -1: "out-of-vocab"}


@dataclass
class ParsedBlocks:
    face_pos: np.ndarray      # (F, 6) position levels
    face_geo: np.ndarray      # (F, 4) codebook indices
    face_index: np.ndarray    # (F,)  face-index token values
    edge_faces: np.ndarray    # (E, 2) face-index token values
    edge_pos: np.ndarray      # (E, 6)
    edge_geo: np.ndarray      # (E, 4)
    class_label: int | None = None

    @property
    def n_faces(self) -> int:
        return len(self.face_index)

    @property
    def n_edges(self) -> int:
        return len(self.edge_faces)


def _seg_name(layout, token):
    return layout.segment_of(int(token))


def parse_sequence(tokens, layout: VocabLayout = VocabLayout(), check_references: bool = True) -> ParsedBlocks:
    """Split a token sequence into face and edge blocks, validating every slot.

    Raises a :class:`~brepseq.errors.SequenceError` subclass carrying the
    offending token position. With ``check_references=False`` only the block
    grammar is checked.
    """
    t = np.asarray(list(tokens), dtype=np.int64)
    n = len(t)
    seg = layout.segment_ids(t)
    if n == 0:
        raise BadStart("empty sequence", 0)
    head = int(t[0])
    if head == layout.start:
        label = None
    elif layout.end < head < layout.vocab_size:
        label = head - layout.o_spec - 3
    else:
        raise BadStart(f"sequence must begin with START or a class token, found {_seg_name(layout, head)}", 0)

    faces = []
    i = 1
    while True:
        if i >= n:
            raise MissingSep("sequence ended before SEP", i)
        if t[i] == layout.sep:
            if not faces:
                raise TypeMismatch(i, "position", "SEP")
            i += 1
            break
        if seg[i] == 0 or t[i] == layout.end:
            # edge blocks (or the end) begin without a separator
            raise MissingSep(f"face section not closed by SEP; found {_seg_name(layout, t[i])}", i)
        if seg[i] != 2:
            raise TypeMismatch(i, "position", _seg_name(layout, t[i]))
        if i + FACE_BLOCK > n:
            raise TruncatedBlock("face block cut short", n)
        block = t[i:i + FACE_BLOCK]
        for k, want in enumerate(_FACE_SLOTS):
            if seg[i + k] != want:
                raise TypeMismatch(i + k, _SEG_NAMES[want], _seg_name(layout, block[k]))
        faces.append(block)
        i += FACE_BLOCK

    edges = []
    while True:
        if i >= n:
            raise MissingEnd("sequence ended before END", i)
        if t[i] == layout.end:
            i += 1
            break
        if seg[i] != 0:
            raise TypeMismatch(i, "index", _seg_name(layout, t[i]))
        if i + EDGE_BLOCK > n:
            raise TruncatedBlock("edge block cut short", n)
        block = t[i:i + EDGE_BLOCK]
        for k, want in enumerate(_EDGE_SLOTS):
            if seg[i + k] != want:
                raise TypeMismatch(i + k, _SEG_NAMES[want], _seg_name(layout, block[k]))
        edges.append(block)
        i += EDGE_BLOCK
    if i != n:
        raise TrailingTokens(f"{n - i} tokens after END", i)

    fb = np.array(faces).reshape(-1, FACE_BLOCK)
    eb = np.array(edges, dtype=np.int64).reshape(-1, EDGE_BLOCK)
    parsed = ParsedBlocks(
        face_pos=fb[:, :6] - layout.o_pos,
        face_geo=fb[:, 6:10] - layout.o_geo,
        face_index=fb[:, 10].copy(),
        edge_faces=eb[:, :2].copy(),
        edge_pos=eb[:, 2:8] - layout.o_pos,
        edge_geo=eb[:, 8:12] - layout.o_geo,
        class_label=label,
    )
    if check_references:
        check_references_of(parsed)
    return parsed


def check_references_of(parsed: ParsedBlocks) -> None:
    """Face indices unique; every edge names two different known faces."""
    seen: dict[int, int] = {}
    for k, idx in enumerate(parsed.face_index):
        if int(idx) in seen:
            raise DuplicateFaceIndex(f"face index {idx} used by face blocks {seen[int(idx)]} and {k}",
                                     1 + FACE_BLOCK * k + 10)
        seen[int(idx)] = k
    base = 1 + FACE_BLOCK * parsed.n_faces + 1
    for k, (a, b) in enumerate(parsed.edge_faces):
        for s, idx in enumerate((a, b)):
            if int(idx) not in seen:
                raise UnknownFaceReference(f"edge block {k} references unknown face index {idx}",
                                           base + EDGE_BLOCK * k + s)
        if a == b:
            raise SelfLoopEdge(f"edge block {k} joins face index {a} to itself", base + EDGE_BLOCK * k)


# ---------------------------------------------------------------------------
# geometry
# ---------------------------------------------------------------------------


@dataclass
class ReconstructedModel:
    faces: np.ndarray           # (F, 32, 32, 3)
    face_bboxes: np.ndarray     # (F, 6)
    edges: np.ndarray           # (E, 32, 3)
    edge_bboxes: np.ndarray     # (E, 6)
    edge_faces: np.ndarray      # (E, 2) positions into ``faces``
    face_index: np.ndarray      # (F,) original face-index tokens
    class_label: int | None = None
    vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    edge_vertices: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    loops: list = field(default_factory=list)   # [(face, [edge ids], closed)]
    diagnostics: list = field(default_factory=list)  # [(code, detail)]

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def to_solid(self) -> SolidModel:
        return SolidModel(self.faces, self.edges, self.edge_faces, self.class_label)

    def to_dict(self) -> dict:
        doc = solid_to_dict(self.to_solid())
        doc["vertices"] = self.vertices.tolist()
        doc["edge_vertices"] = self.edge_vertices.tolist()
        doc["loops"] = [{"face": f, "edges": es, "closed": c} for f, es, c in self.loops]
        return doc


def detokenize(parsed: ParsedBlocks, codebook: Codebook, layout: VocabLayout = VocabLayout()) -> ReconstructedModel:
    """Decode geometry and positions; face references become positions into the face list."""
    if codebook.size != layout.n_geo:
        raise IndexOutOfRange(f"codebook has {codebook.size} codewords, layout expects {layout.n_geo}")
    q = layout.quant
    faces = np.array([decode(g, codebook, "face") for g in parsed.face_geo]).reshape(-1, 32, 32, 3)
    edges = np.array([decode(g, codebook, "edge") for g in parsed.edge_geo]).reshape(-1, 32, 3)
    where = {int(idx): k for k, idx in enumerate(parsed.face_index)}
    edge_faces = np.array([[where[int(a)], where[int(b)]] for a, b in parsed.edge_faces],
                          dtype=np.int64).reshape(-1, 2)
    return ReconstructedModel(
        faces=faces,
        face_bboxes=np.array([detokenize_bbox(p, q) for p in parsed.face_pos]).reshape(-1, 6),
        edges=edges,
        edge_bboxes=np.array([detokenize_bbox(p, q) for p in parsed.edge_pos]).reshape(-1, 6),
        edge_faces=edge_faces,
        face_index=parsed.face_index.copy(),
        class_label=parsed.class_label,
    )


def reconstruct_vertices(model: ReconstructedModel, tau_merge: float = TAU_MERGE) -> ReconstructedModel:
    """Cluster edge endpoints into vertices and recover per-face loops.

    Endpoint ``2e`` is the start of edge ``e`` and ``2e + 1`` its end. Within
    each face, endpoint pairs from different boundary edges are merged closest
    first while both are within ``tau_merge`` and neither has been matched in
    that face yet; the union-find is shared by all faces. Vertices are the
    cluster centroids. Problems are appended to ``model.diagnostics``; the
    model is updated in place and returned.
    """
    n_e = model.n_edges
    pts = np.empty((2 * n_e, 3))
    pts[0::2] = model.edges[:, 0]
    pts[1::2] = model.edges[:, -1]
    diags = []
    uf = UnionFind(2 * n_e)
    incident: list[list[int]] = [[] for _ in range(model.n_faces)]
    for e, (a, b) in enumerate(model.edge_faces):
        incident[a].append(e)
        incident[b].append(e)

    partner: list[dict[int, int]] = [dict() for _ in range(model.n_faces)]
    for f, es in enumerate(incident):
        es = sorted(es)
        if len(es) < 2:
            continue
        ends = np.array([2 * e + s for e in es for s in (0, 1)])
        owner = ends // 2
        d = np.linalg.norm(pts[ends][:, None, :] - pts[ends][None, :, :], axis=-1)
        ii, jj = np.nonzero((owner[:, None] < owner[None, :]) & (d <= tau_merge))
        cand = sorted(zip(d[ii, jj].round(12), ends[ii], ends[jj]))
        match = partner[f]
        for _, p, q in cand:
            if p in match or q in match:
                continue
            match[int(p)] = int(q)
            match[int(q)] = int(p)
            uf.union(int(p), int(q))

    for e in range(n_e):
        if np.linalg.norm(pts[2 * e] - pts[2 * e + 1]) <= 1e-9:
            diags.append(("DegenerateEdge", f"edge {e} has coincident endpoints"))
    for p in range(2 * n_e):
        e = p // 2
        faces_of = model.edge_faces[e]
        if not any(p in partner[f] for f in faces_of):
            diags.append(("UnmatchedEndpoint", f"endpoint {p % 2} of edge {e} has no partner within {tau_merge}"))

    groups = uf.groups()
    label = np.empty(2 * n_e, dtype=np.int64)
    for v, g in enumerate(groups):
        label[g] = v
    model.vertices = np.array([pts[g].mean(axis=0) for g in groups]).reshape(-1, 3)
    model.edge_vertices = np.stack([label[0::2], label[1::2]], axis=1) if n_e else np.zeros((0, 2), np.int64)
    for e in range(n_e):
        if n_e and model.edge_vertices[e, 0] == model.edge_vertices[e, 1]:
            diags.append(("DegenerateEdge", f"edge {e} starts and ends at vertex {model.edge_vertices[e, 0]}"))

    loops = []
    for f, es in enumerate(incident):
        loops.extend(_walk_loops(f, sorted(es), partner[f]))
    for f, es, closed in loops:
        if not closed:
            diags.append(("OpenLoop", f"face {f} has an open boundary chain {es}"))
    for f, es in enumerate(incident):
        if not es:
            diags.append(("FaceWithoutEdges", f"face {f} has no boundary edges"))
    model.loops = loops
    model.diagnostics = model.diagnostics + diags
    return model


def _walk_loops(face: int, edges: list[int], match: dict[int, int]):
    """Chain a face's boundary edges through matched endpoints into cycles."""
    remaining = list(edges)
    out = []
    used = set()
    for start in remaining:
        if start in used:
            continue
        chain = [start]
        used.add(start)
        closed = False
        cur = start
        out_end = 2 * cur + 1
        while True:
            nxt_end = match.get(out_end)
            if nxt_end is None:
                break
            nxt = nxt_end // 2
            if nxt == start:
                closed = nxt_end == 2 * start
                break
            if nxt in used:
                break
            chain.append(nxt)
            used.add(nxt)
            out_end = nxt_end ^ 1
        if not closed:
            # extend backwards from the start so the whole chain is reported
            back = match.get(2 * start)
            while back is not None and back // 2 not in used:
                prev = back // 2
                chain.insert(0, prev)
                used.add(prev)
                back = match.get(back ^ 1)
        out.append((face, chain, closed))
    return out


# ---------------------------------------------------------------------------
# validity
# ---------------------------------------------------------------------------


@dataclass
class ValidityReport:
    grammar_ok: bool
    topology_ok: bool
    geometry_ok: bool
    euler_ok: bool
    genus: int | None = None
    diagnostics: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.grammar_ok and self.topology_ok and self.geometry_ok and self.euler_ok

    def to_dict(self) -> dict:
        return {
            "valid": self.valid,
            "grammar_ok": self.grammar_ok,
            "topology_ok": self.topology_ok,
            "geometry_ok": self.geometry_ok,
            "euler_ok": self.euler_ok,
            "genus": self.genus,
            "diagnostics": [list(d) for d in self.diagnostics],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


_TOPOLOGY_CODES = {"UnmatchedEndpoint", "OpenLoop", "DegenerateEdge", "FaceWithoutEdges", "EdgeFaceCount"}


def check_validity(model: ReconstructedModel, layout: VocabLayout = VocabLayout(),
                   eps_cb: float = 0.0, grammar_ok: bool = True) -> ValidityReport:
    diags = list(model.diagnostics)
    # every edge must close a loop in exactly two faces
    closed_in = np.zeros(model.n_edges, dtype=np.int64)
    for _, es, closed in model.loops:
        if closed:
            closed_in[es] += 1
    for e in np.flatnonzero(closed_in != 2):
        diags.append(("EdgeFaceCount", f"edge {e} closes loops in {closed_in[e]} faces"))
    topology_ok = model.n_edges > 0 and not any(code in _TOPOLOGY_CODES for code, _ in diags)

    tol = eps_cb + 2.0 / (layout.L - 1)
    geometry_ok = bool(np.all(np.isfinite(model.faces)) and np.all(np.isfinite(model.edges)))
    for kind, grids, boxes in (("face", model.faces, model.face_bboxes), ("edge", model.edges, model.edge_bboxes)):
        for k, (g, b) in enumerate(zip(grids, boxes)):
            p = g.reshape(-1, 3)
            excess = max(float((b[:3] - p).max()), float((p - b[3:]).max()))
            if excess > tol:
                geometry_ok = False
                diags.append(("OutsideBbox", f"{kind} {k} leaves its bbox by {excess:.4g} > {tol:.4g}"))

    chi = model.n_vertices - model.n_edges + model.n_faces
    genus = (2 - chi) // 2 if (2 - chi) % 2 == 0 and chi <= 2 else None
    euler_ok = genus is not None and model.n_vertices > 0
    if not euler_ok:
        diags.append(("Euler", f"V - E + F = {chi} is not 2 - 2g"))
    return ValidityReport(grammar_ok, topology_ok, geometry_ok, euler_ok, genus, diags)


def evaluate_sequence(tokens, codebook: Codebook, layout: VocabLayout = VocabLayout(),
                      tau_merge: float = TAU_MERGE, eps_cb: float | None = None):
    """Run parse, decode, vertex reconstruction and checks; never raises on bad sequences.

    Returns ``(model_or_None, ValidityReport)``.
    """
    eps = codebook.max_error if eps_cb is None else eps_cb
    try:
        parsed = parse_sequence(tokens, layout, check_references=False)
    except SequenceError as exc:
        return None, ValidityReport(False, False, False, False, None, [(exc.code, str(exc))])
    try:
        check_references_of(parsed)
    except ReferenceError_ as exc:
        return None, ValidityReport(True, False, False, False, None, [(exc.code, str(exc))])
    model = reconstruct_vertices(detokenize(parsed, codebook, layout), tau_merge)
    return model, check_validity(model, layout, eps)
