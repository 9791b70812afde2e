"""JSON interchange for solids and a generator of procedural solids.

Solid JSON::

    {"faces": [32x32 grid of [x, y, z], ...],
     "edges": [{"polyline": [32 x [x, y, z]], "face_a": int, "face_b": int}, ...],
     "class_label": int | null}

Extra top-level keys (``meta``, ``vertices``, ``loops``, ...) are ignored on load.

Procedural kinds and their combinatorics (V, E, F):

=================  ===============  ==========================================
kind               (V, E, F)        params
=================  ===============  ==========================================
box                (8, 12, 6)       size=(sx, sy, sz) in [0.1, 1.8]
n_prism            (2n, 3n, n + 2)  n in [3, 48], radius in [0.1, 0.9], height
cylinder_approx    (4, 6, 4)        radius in [0.1, 0.9], height in [0.1, 1.8]
l_bracket          (12, 18, 8)      width, height, thickness, depth
=================  ===============  ==========================================

Every kind also accepts ``center`` (xyz), ``angle`` (rotation about z, radians)
and ``jitter`` (relative random perturbation of the dimensions). Parameters that
are omitted are drawn from the seeded RNG, so ``(kind, params, seed)`` fully
determines the solid.  Parameter grids are corner-inclusive (``linspace(0, 1, 32)``).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import GRID, SolidModel, connected_components
from .errors import InvariantError, ParamError, ParseError, SchemaError

KINDS = ("box", "n_prism", "cylinder_approx", "l_bracket")
KIND_LABELS = {k: i for i, k in enumerate(KINDS)}
BOUND = 0.95


class DisconnectedSolidWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# JSON interchange
# ---------------------------------------------------------------------------


def solid_to_dict(solid: SolidModel) -> dict:
    return {
        "faces": solid.faces.tolist(),
        "edges": [
            {"polyline": e.tolist(), "face_a": int(a), "face_b": int(b)}
            for e, (a, b) in zip(solid.edges, solid.edge_faces)
        ],
        "class_label": solid.class_label,
    }


def save_solid(solid: SolidModel, meta: dict | None = None) -> bytes:
    """Serialize to interchange JSON; floats use repr so the round trip is bit-exact."""
    doc = solid_to_dict(solid)
    if meta:
        doc["meta"] = meta
    return json.dumps(doc, separators=(",", ":"), sort_keys=True).encode()


def _shaped(value, shape, what):
    try:
        arr = np.array(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{what}: not a numeric array ({exc})") from None
    if arr.shape != shape:
        raise SchemaError(f"{what}: expected shape {shape}, got {arr.shape}")
    return arr


def solid_from_dict(doc, n_max: int | None = 50) -> SolidModel:
    if not isinstance(doc, dict):
        raise SchemaError("solid document must be a JSON object")
    for key in ("faces", "edges"):
        if key not in doc:
            raise SchemaError(f"missing field {key!r}")
    if not isinstance(doc["faces"], list) or not isinstance(doc["edges"], list):
        raise SchemaError("faces and edges must be arrays")
    faces = [_shaped(f, (GRID, GRID, 3), f"faces[{i}]") for i, f in enumerate(doc["faces"])]
    polylines, pairs = [], []
    for i, e in enumerate(doc["edges"]):
        if not isinstance(e, dict) or not {"polyline", "face_a", "face_b"} <= e.keys():
            raise SchemaError(f"edges[{i}] must have polyline, face_a, face_b")
        polylines.append(_shaped(e["polyline"], (GRID, 3), f"edges[{i}].polyline"))
        a, b = e["face_a"], e["face_b"]
        if not (isinstance(a, int) and isinstance(b, int)) or isinstance(a, bool) or isinstance(b, bool):
            raise SchemaError(f"edges[{i}]: face references must be integers")
        pairs.append((a, b))
    label = doc.get("class_label")
    if label is not None and (not isinstance(label, int) or isinstance(label, bool)):
        raise SchemaError("class_label must be an integer or null")
    if n_max is not None and len(faces) > n_max:
        raise InvariantError(f"{len(faces)} faces exceeds n_max={n_max}")
    for i, (a, b) in enumerate(pairs):
        if a == b:
            raise InvariantError(f"edges[{i}] borders face {a} on both sides")
        if not (0 <= a < len(faces) and 0 <= b < len(faces)):
            raise InvariantError(f"edges[{i}] references a missing face")
    solid = SolidModel(
        np.array(faces).reshape(-1, GRID, GRID, 3),
        np.array(polylines).reshape(-1, GRID, 3),
        np.array(pairs, dtype=np.int64).reshape(-1, 2),
        label,
    )
    if len(connected_components(solid)) > 1:
        warnings.warn("solid face-adjacency graph is disconnected", DisconnectedSolidWarning, stacklevel=2)
    return solid


def load_solid(data: bytes | str, n_max: int | None = 50) -> SolidModel:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    return solid_from_dict(doc, n_max=n_max)


def read_solid(path, n_max: int | None = 50) -> SolidModel:
    return load_solid(Path(path).read_bytes(), n_max=n_max)


def write_solid(path, solid: SolidModel, meta: dict | None = None) -> None:
    Path(path).write_bytes(save_solid(solid, meta))


# ---------------------------------------------------------------------------
# procedural solids
# ---------------------------------------------------------------------------

_U = np.linspace(0.0, 1.0, GRID)


def _segment(p, q):
    return p + _U[:, None] * (q - p)


def _bilinear(v0, v1, v2, v3):
    # u runs v0->v1, v runs v0->v3
    u = _U[:, None, None]
    v = _U[None, :, None]
    return (1 - u) * (1 - v) * v0 + u * (1 - v) * v1 + u * v * v2 + (1 - u) * v * v3


def _star(center, loop):
    """Parametrize a star-shaped planar polygon from ``center``: u is radial, v runs the perimeter."""
    loop = np.asarray(loop)
    closed = np.vstack([loop, loop[:1]])
    seg_len = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)]) / seg_len.sum()
    perim = np.stack([np.interp(_U, cum, closed[:, k]) for k in range(3)], axis=-1)
    return center + _U[:, None, None] * (perim[None, :, :] - center)


def _polyhedron(vertices, loops, class_label, kernels=None):
    """Planar-faced solid from vertex coordinates and per-face vertex loops.

    Quads get a bilinear parametrization; other polygons a star map from
    ``kernels[face]`` (default: the vertex mean, valid for convex polygons).
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    kernels = kernels or {}
    faces = []
    for fi, loop in enumerate(loops):
        pts = vertices[loop]
        if len(loop) == 4:
            faces.append(_bilinear(*pts))
        else:
            faces.append(_star(kernels.get(fi, pts.mean(axis=0)), pts))
    owners: dict[tuple[int, int], list[int]] = {}
    for fi, loop in enumerate(loops):
        for a, b in zip(loop, loop[1:] + loop[:1]):
            owners.setdefault((min(a, b), max(a, b)), []).append(fi)
    edges, pairs = [], []
    for (a, b), fs in sorted(owners.items()):
        if len(fs) != 2:
            raise ParamError(f"edge {(a, b)} is shared by {len(fs)} faces")
        edges.append(_segment(vertices[a], vertices[b]))
        pairs.append(sorted(fs))
    return SolidModel(np.array(faces), np.array(edges), np.array(pairs), class_label)


def _draw(params, key, rng, lo, hi):
    if key in params:
        return float(params[key])
    return float(rng.uniform(lo, hi))


def _place(points, params):
    """Rotate about z by ``angle`` then translate to ``center``."""
    angle = float(params.get("angle", 0.0))
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    center = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=np.float64)
    return points @ rot.T + center


def _jittered(value, params, rng):
    j = float(params.get("jitter", 0.0))
    if j:
        value *= 1.0 + j * rng.uniform(-1.0, 1.0)
    return value


def _box(params, rng, label):
    if "size" in params:
        size = [float(v) for v in params["size"]]
    else:
        size = list(rng.uniform(0.3, 1.6, size=3))
    size = [_jittered(v, params, rng) for v in size]
    if min(size) < 0.1 or max(size) > 1.8:
        raise ParamError(f"box size {size} outside [0.1, 1.8]")
    h = np.array(size) / 2
    corners = np.array([[sx, sy, sz] for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)]) * h
    corners = _place(corners, params)
    # corner id = ix + 2*iy + 4*iz
    loops = [
        [0, 2, 3, 1],  # z-
        [4, 5, 7, 6],  # z+
        [0, 1, 5, 4],  # y-
        [2, 6, 7, 3],  # y+
        [0, 4, 6, 2],  # x-
        [1, 3, 7, 5],  # x+
    ]
    return _polyhedron(corners, loops, label)


def _n_prism(params, rng, label):
    n = int(params["n"]) if "n" in params else int(rng.integers(3, 9))
    if not 3 <= n <= 48:
        raise ParamError(f"n_prism needs 3 <= n <= 48, got {n}")
    radius = _jittered(_draw(params, "radius", rng, 0.3, 0.85), params, rng)
    height = _jittered(_draw(params, "height", rng, 0.3, 1.6), params, rng)
    if not (0.1 <= radius <= 0.9 and 0.1 <= height <= 1.8):
        raise ParamError("n_prism radius/height out of range")
    theta = 2 * np.pi * np.arange(n) / n
    ring = np.stack([radius * np.cos(theta), radius * np.sin(theta), np.zeros(n)], axis=1)
    bottom = ring + [0, 0, -height / 2]
    top = ring + [0, 0, height / 2]
    verts = _place(np.vstack([bottom, top]), params)
    loops = [list(range(n - 1, -1, -1)), list(range(n, 2 * n))]
    for i in range(n):
        j = (i + 1) % n
        loops.append([i, j, n + j, n + i])
    return _polyhedron(verts, loops, label)


def _l_bracket(params, rng, label):
    w = _jittered(_draw(params, "width", rng, 0.8, 1.6), params, rng)
    h = _jittered(_draw(params, "height", rng, 0.8, 1.6), params, rng)
    t = _draw(params, "thickness", rng, 0.15, 0.4)
    d = _jittered(_draw(params, "depth", rng, 0.3, 1.6), params, rng)
    if not (0.2 <= w <= 1.8 and 0.2 <= h <= 1.8 and 0.2 <= d <= 1.8 and 0.05 <= t < min(w, h)):
        raise ParamError("l_bracket dimensions out of range")
    # L profile in the xz plane, extruded along y
    x0, z0 = -w / 2, -h / 2
    prof = np.array([
        [x0, z0], [x0 + w, z0], [x0 + w, z0 + t], [x0 + t, z0 + t], [x0 + t, z0 + h], [x0, z0 + h],
    ])
    front = np.column_stack([prof[:, 0], np.full(6, -d / 2), prof[:, 1]])
    back = np.column_stack([prof[:, 0], np.full(6, d / 2), prof[:, 1]])
    verts = _place(np.vstack([front, back]), params)
    # the inner-corner square [x0, x0+t] x [z0, z0+t] is the star kernel of the profile
    kernel_front = _place(np.array([[x0 + t / 2, -d / 2, z0 + t / 2]]), params)[0]
    kernel_back = _place(np.array([[x0 + t / 2, d / 2, z0 + t / 2]]), params)[0]
    loops = [list(range(6)), list(range(11, 5, -1))]
    loops += [[i, (i + 1) % 6, 6 + (i + 1) % 6, 6 + i] for i in range(6)]
    return _polyhedron(verts, loops, label, kernels={0: kernel_front, 1: kernel_back})


def _cylinder(params, rng, label):
    r = _jittered(_draw(params, "radius", rng, 0.3, 0.85), params, rng)
    h = _jittered(_draw(params, "height", rng, 0.3, 1.6), params, rng)
    if not (0.1 <= r <= 0.9 and 0.1 <= h <= 1.8):
        raise ParamError("cylinder radius/height out of range")
    z0, z1 = -h / 2, h / 2

    def circle(theta, z):
        theta = np.asarray(theta)
        return np.stack([r * np.cos(theta), r * np.sin(theta), np.full(theta.shape, z)], axis=-1)

    rad, ang = np.meshgrid(_U * r, 2 * np.pi * _U, indexing="ij")
    caps = [np.stack([rad * np.cos(ang), rad * np.sin(ang), np.full_like(rad, z)], axis=-1) for z in (z0, z1)]
    uu, vv = np.meshgrid(_U, _U, indexing="ij")
    halves = []
    for k in range(2):
        ang = np.pi * (k + uu)
        halves.append(np.stack([r * np.cos(ang), r * np.sin(ang), z0 + vv * h], axis=-1))
    faces = np.array([caps[0], caps[1], halves[0], halves[1]])
    edges = np.array([
        circle(np.pi * _U, z0),          # bottom cap | half 0
        circle(np.pi * (1 + _U), z0),    # bottom cap | half 1
        circle(np.pi * _U, z1),          # top cap | half 0
        circle(np.pi * (1 + _U), z1),    # top cap | half 1
        _segment(circle(0.0, z0), circle(0.0, z1)),    # seam at theta = 0
        _segment(circle(np.pi, z0), circle(np.pi, z1)),  # seam at theta = pi
    ])
    pairs = np.array([[0, 2], [0, 3], [1, 2], [1, 3], [2, 3], [2, 3]])
    faces = _place(faces.reshape(-1, 3), params).reshape(faces.shape)
    edges = _place(edges.reshape(-1, 3), params).reshape(edges.shape)
    return SolidModel(faces, edges, pairs, label)


_BUILDERS = {"box": _box, "n_prism": _n_prism, "cylinder_approx": _cylinder, "l_bracket": _l_bracket}


def generate_procedural(kind: str, params: dict | None = None, seed: int = 0) -> SolidModel:
    """Build a procedural solid with exactly known topology.

    The class label is the kind's index in :data:`KINDS`. Raises ``ParamError``
    for unknown kinds, degenerate dimensions, or results leaving ``[-0.95, 0.95]^3``.
    """
    if kind not in _BUILDERS:
        raise ParamError(f"unknown kind {kind!r}; expected one of {KINDS}")
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if "center" not in params:
        params["center"] = (0.0, 0.0, 0.0)
    solid = _BUILDERS[kind](params, rng, KIND_LABELS[kind])
    extent = max(np.abs(solid.faces).max(), np.abs(solid.edges).max())
    if extent >= BOUND:
        raise ParamError(f"{kind} with {params} leaves the [-{BOUND}, {BOUND}] cube")
    return solid


def ground_truth_counts(kind: str, params: dict | None = None, seed: int = 0) -> tuple[int, int, int]:
    """(V*, E*, F*) of a procedural solid."""
    if kind == "box":
        return 8, 12, 6
    if kind == "n_prism":
        n = int((params or {}).get("n", 0)) or int(np.random.default_rng(seed).integers(3, 9))
        return 2 * n, 3 * n, n + 2
    if kind == "cylinder_approx":
        return 4, 6, 4
    if kind == "l_bracket":
        return 12, 18, 8
    raise ParamError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class ManifestEntry:
    path: str
    class_label: int
    face_count: int
    edge_count: int
    kind: str = ""
    seed: int = 0


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int
    kind_mix: dict[str, float] = field(default_factory=dict)
    jitter: float = 0.0
    meta: dict = field(default_factory=dict)

    def validate(self, n_max: int = 50) -> None:
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise InvariantError("manifest paths are not unique")
        for e in self.entries:
            if e.face_count > n_max:
                raise InvariantError(f"{e.path}: {e.face_count} faces exceeds n_max={n_max}")

    def to_json(self) -> str:
        doc = {
            "seed": self.seed,
            "kind_mix": self.kind_mix,
            "jitter": self.jitter,
            "meta": self.meta,
            "entries": [vars(e) for e in self.entries],
        }
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid manifest JSON: {exc}") from None
        try:
            entries = [ManifestEntry(**e) for e in doc["entries"]]
            return cls(entries, int(doc["seed"]), doc.get("kind_mix", {}), doc.get("jitter", 0.0), doc.get("meta", {}))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed manifest: {exc}") from None


def parse_kind_mix(text: str) -> dict[str, float]:
    """Parse ``box:0.4,n_prism:0.6`` into normalized weights."""
    mix = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        name, _, weight = part.partition(":")
        if name not in KINDS:
            raise ParamError(f"unknown kind {name!r} in kind mix")
        try:
            mix[name] = float(weight) if weight else 1.0
        except ValueError:
            raise ParamError(f"bad weight in kind mix: {part!r}") from None
    total = sum(mix.values())
    if not mix or total <= 0 or min(mix.values()) < 0:
        raise ParamError("kind mix must have positive total weight")
    return {k: v / total for k, v in mix.items()}


def sample_dataset(count: int, kind_mix: dict[str, float], seed: int, jitter: float = 0.0):
    """Yield ``(kind, entry_seed, solid)`` for a reproducible procedural corpus."""
    rng = np.random.default_rng(seed)
    kinds = list(kind_mix)
    probs = np.array([kind_mix[k] for k in kinds], dtype=np.float64)
    probs /= probs.sum()
    picks = rng.choice(len(kinds), size=count, p=probs)
    seeds = rng.integers(0, 2**31 - 1, size=count)
    for k, s in zip(picks, seeds):
        kind = kinds[int(k)]
        yield kind, int(s), generate_procedural(kind, {"jitter": jitter} if jitter else None, int(s))


def generate_dataset(out_dir, count: int, kind_mix: dict[str, float], seed: int,
                     jitter: float = 0.0, meta: dict | None = None) -> DatasetManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (kind, s, solid) in enumerate(sample_dataset(count, kind_mix, seed, jitter)):
        name = f"solid_{i:05d}.json"
        write_solid(out / name, solid, meta)
        entries.append(ManifestEntry(name, solid.class_label, solid.n_faces, solid.n_edges, kind, s))
    manifest = DatasetManifest(entries, seed, kind_mix, jitter, dict(meta or {}))
    manifest.validate()
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def load_dataset(path, n_max: int | None = 50) -> list[SolidModel]:
    """Load solids from a manifest file, a directory with a manifest, or a directory of JSON files."""
    p = Path(path)
    if p.is_dir() and (p / "manifest.json").exists():
        p = p / "manifest.json"
    if p.is_file() and p.name == "manifest.json":
        manifest = DatasetManifest.from_json(p.read_text())
        return [read_solid(p.parent / e.path, n_max) for e in manifest.entries]
    if p.is_dir():
        return [read_solid(f, n_max) for f in sorted(p.glob("*.json"))]
    return [read_solid(p, n_max)]
