"""Distribution metrics (COV, MMD, JSD) and CAD metrics (novelty, uniqueness, validity)."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .codebook import Codebook
from .detokenizer import TAU_MERGE, evaluate_sequence, parse_sequence
from .errors import EmptyCloud, EmptyModel, SequenceError
from .quantize import detokenize_bbox
from .sequencer import VocabLayout, traversal_order

N_POINTS = 2000
JSD_RES = 28


def _quad_areas(grid: np.ndarray) -> np.ndarray:
    p00, p10 = grid[:-1, :-1], grid[1:, :-1]
    p01, p11 = grid[:-1, 1:], grid[1:, 1:]
    a1 = 0.5 * np.linalg.norm(np.cross(p10 - p00, p11 - p00), axis=-1)
    a2 = 0.5 * np.linalg.norm(np.cross(p11 - p00, p01 - p00), axis=-1)
    return a1 + a2


def _largest_remainder(weights: np.ndarray, n: int) -> np.ndarray:
    exact = n * weights / weights.sum()
    counts = np.floor(exact).astype(np.int64)
    short = n - counts.sum()
    order = np.lexsort((np.arange(len(exact)), -(exact - counts)))
    counts[order[:short]] += 1
    return counts


def sample_points(model, n: int = N_POINTS, seed: int = 0) -> np.ndarray:
    """Area-weighted surface samples from the face grids of a solid.

    Face quotas are proportional to area (largest-remainder rounding); inside a
    face a quad is drawn by area and a point placed by bilinear interpolation.
    """
    faces = np.asarray(model.faces, dtype=np.float64)
    if len(faces) == 0:
        raise EmptyModel("model has no faces")
    quad = np.array([_quad_areas(g) for g in faces])
    face_area = quad.reshape(len(faces), -1).sum(axis=1)
    if not np.isfinite(face_area).all() or face_area.sum() <= 0:
        raise EmptyModel("model has zero surface area")
    rng = np.random.default_rng(seed)
    counts = _largest_remainder(face_area, n)
    out = []
    for f in np.flatnonzero(counts):
        w = quad[f].ravel()
        cells = rng.choice(len(w), size=counts[f], p=w / w.sum())
        i, j = np.divmod(cells, quad.shape[2])
        s, t = rng.random((2, counts[f], 1))
        g = faces[f]
        out.append((1 - s) * (1 - t) * g[i, j] + s * (1 - t) * g[i + 1, j]
                   + s * t * g[i + 1, j + 1] + (1 - s) * t * g[i, j + 1])
    return np.concatenate(out)


def chamfer(a, b) -> float:
    """Mean squared nearest distance from a to b plus from b to a."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptyCloud("chamfer distance needs non-empty clouds")
    da, _ = cKDTree(b).query(a)
    db, _ = cKDTree(a).query(b)
    return float(np.mean(da ** 2) + np.mean(db ** 2))


def chamfer_matrix(gen_clouds, ref_clouds) -> np.ndarray:
    gen = [np.asarray(c, dtype=np.float64) for c in gen_clouds]
    ref = [np.asarray(c, dtype=np.float64) for c in ref_clouds]
    if not gen or not ref:
        raise EmptyCloud("need at least one generated and one reference cloud")
    gtrees = [cKDTree(c) for c in gen]
    rtrees = [cKDTree(c) for c in ref]
    m = np.empty((len(gen), len(ref)))
    for i, (g, gt) in enumerate(zip(gen, gtrees)):
        for j, (r, rt) in enumerate(zip(ref, rtrees)):
            m[i, j] = np.mean(rt.query(g)[0] ** 2) + np.mean(gt.query(r)[0] ** 2)
    return m


def coverage(gen_clouds, ref_clouds, cd: np.ndarray | None = None) -> float:
    """Percent of references that are the nearest reference of some generated cloud."""
    cd = chamfer_matrix(gen_clouds, ref_clouds) if cd is None else cd
    matched = np.unique(np.argmin(cd, axis=1))
    return 100.0 * len(matched) / cd.shape[1]


def mmd(gen_clouds, ref_clouds, cd: np.ndarray | None = None) -> float:
    """Mean over references of the chamfer distance to the closest generated cloud."""
    cd = chamfer_matrix(gen_clouds, ref_clouds) if cd is None else cd
    return float(cd.min(axis=0).mean())


def _histogram(clouds, res):
    pts = np.concatenate([np.asarray(c, dtype=np.float64).reshape(-1, 3) for c in clouds])
    if len(pts) == 0:
        raise EmptyCloud("cannot histogram an empty point set")
    cell = np.clip(np.floor((pts + 1.0) / 2.0 * res), 0, res - 1).astype(np.int64)
    flat = (cell[:, 0] * res + cell[:, 1]) * res + cell[:, 2]
    h = np.bincount(flat, minlength=res ** 3).astype(np.float64)
    return h / h.sum()


def _kl(p, q):
    m = p > 0
    return float(np.sum(p[m] * np.log(p[m] / q[m])))


def jsd(gen_clouds, ref_clouds, grid_res: int = JSD_RES) -> float:
    """Jensen-Shannon divergence (natural log) of pooled voxel occupancy over [-1, 1]^3."""
    p = _histogram(gen_clouds, grid_res)
    q = _histogram(ref_clouds, grid_res)
    m = 0.5 * (p + q)
    return max(0.0, 0.5 * _kl(p, m) + 0.5 * _kl(q, m))


# ---------------------------------------------------------------------------
# CAD metrics
# ---------------------------------------------------------------------------


def canonical_tokens(tokens, layout: VocabLayout = VocabLayout()) -> tuple[int, ...]:
    """Relabel a parsed sequence canonically: DFS faces, MAX-IDX-A edges, r = 0.

    Face tie-breaks use bbox centres decoded from the position tokens, so the
    result does not depend on the face-index labels of the input.
    """
    p = parse_sequence(tokens, layout)
    q = layout.quant
    centers = np.array([detokenize_bbox(b, q) for b in p.face_pos]).reshape(-1, 6)
    centers = 0.5 * (centers[:, :3] + centers[:, 3:])
    where = {int(v): k for k, v in enumerate(p.face_index)}
    edge_faces = np.array([[where[int(a)], where[int(b)]] for a, b in p.edge_faces], dtype=np.int64).reshape(-1, 2)
    order = traversal_order(p.n_faces, edge_faces, centers)
    pos = np.empty(p.n_faces, dtype=np.int64)
    pos[order] = np.arange(p.n_faces)
    head = layout.start if p.class_label is None else layout.class_token(p.class_label)
    out = [head]
    for f in order:
        out += (p.face_pos[f] + layout.o_pos).tolist() + (p.face_geo[f] + layout.o_geo).tolist() + [int(pos[f])]
    out.append(layout.sep)
    keys = []
    for e, (a, b) in enumerate(edge_faces):
        lo, hi = sorted((int(pos[a]), int(pos[b])))
        keys.append((hi, lo, tuple(p.edge_pos[e].tolist()), tuple(p.edge_geo[e].tolist()), e))
    for hi, lo, ptoks, gtoks, _ in sorted(keys):
        out += [lo, hi] + [t + layout.o_pos for t in ptoks] + [t + layout.o_geo for t in gtoks]
    out.append(layout.end)
    return tuple(out)


def sequence_hash(tokens, layout: VocabLayout = VocabLayout()) -> str:
    """Hash of the canonical form; sequences that do not parse hash their raw tokens."""
    try:
        canon, tag = canonical_tokens(tokens, layout), b"c"
    except SequenceError:
        canon, tag = tuple(int(t) for t in tokens), b"r"
    return hashlib.sha256(tag + np.asarray(canon, dtype="<i8").tobytes()).hexdigest()


def novelty_uniqueness(gen_seqs, train_hashes, layout: VocabLayout = VocabLayout()) -> tuple[float, float]:
    hashes = [sequence_hash(s, layout) for s in gen_seqs]
    if not hashes:
        return 0.0, 0.0
    train = set(train_hashes)
    novel = 100.0 * sum(h not in train for h in hashes) / len(hashes)
    unique = 100.0 * len(set(hashes)) / len(hashes)
    return novel, unique


def validity_rate(sequences, codebook: Codebook, layout: VocabLayout = VocabLayout(),
                  tau_merge: float = TAU_MERGE) -> float:
    seqs = list(sequences)
    if not seqs:
        return 0.0
    ok = sum(evaluate_sequence(s, codebook, layout, tau_merge)[1].valid for s in seqs)
    return 100.0 * ok / len(seqs)


def grammar_rate(sequences, layout: VocabLayout = VocabLayout()) -> float:
    """Percent of sequences that satisfy the block grammar (references not checked)."""
    seqs = list(sequences)
    if not seqs:
        return 0.0
    ok = 0
    for s in seqs:
        try:
            parse_sequence(s, layout, check_references=False)
            ok += 1
        except SequenceError:
            pass
    return 100.0 * ok / len(seqs)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    cov_percent: float
    mmd: float | None
    jsd: float | None
    novel_percent: float | None
    unique_percent: float | None
    valid_percent: float | None
    n_generated: int
    n_reference: int
    n_decoded: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    def row(self) -> list[str]:
        def pct(v):
            return "-" if v is None else f"{v:.2f}"
        def scaled(v, digits):
            return "-" if v is None else f"{100 * v:.{digits}f}"
        return [f"{self.cov_percent:.2f}", scaled(self.mmd, 4), scaled(self.jsd, 3),
                pct(self.novel_percent), pct(self.unique_percent), pct(self.valid_percent)]


HEADER = ["COV↑", "MMD↓", "JSD↓", "Novel↑", "Unique↑", "Valid↑"]


def format_table(rows: dict[str, EvalReport], title: str = "Method") -> str:
    """Markdown table; MMD and JSD are shown multiplied by 100."""
    lines = ["| " + " | ".join([title] + HEADER) + " |", "|" + "---|" * (len(HEADER) + 1)]
    for name, rep in rows.items():
        lines.append("| " + " | ".join([name] + rep.row()) + " |")
    return "\n".join(lines) + "\n"


def evaluate(gen_clouds, ref_clouds, gen_seqs=None, train_hashes=None, codebook=None,
             layout: VocabLayout = VocabLayout(), tau_merge: float = TAU_MERGE,
             n_generated: int | None = None) -> EvalReport:
    """Full metric row. With no decodable generations COV is 0 and MMD/JSD are left empty."""
    gen_clouds, ref_clouds = list(gen_clouds), list(ref_clouds)
    if not ref_clouds:
        raise EmptyCloud("need at least one reference cloud")
    novel = unique = valid = None
    if gen_seqs is not None:
        novel, unique = novelty_uniqueness(gen_seqs, train_hashes or (), layout)
        if codebook is not None:
            valid = validity_rate(gen_seqs, codebook, layout, tau_merge)
    if gen_clouds:
        cd = chamfer_matrix(gen_clouds, ref_clouds)
        cov, dist, div = coverage(None, None, cd), mmd(None, None, cd), jsd(gen_clouds, ref_clouds)
    else:
        cov, dist, div = 0.0, None, None
    return EvalReport(cov, dist, div, novel, unique, valid,
                      n_generated if n_generated is not None else len(gen_clouds), len(ref_clouds), len(gen_clouds))
