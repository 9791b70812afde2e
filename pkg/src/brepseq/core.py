"""B-rep domain types and the quantities derived directly from them.

A solid is stored as dense numpy arrays rather than per-primitive objects:

* ``faces``      -- ``(F, 32, 32, 3)`` UV-regular point grids
* ``edges``      -- ``(E, 32, 3)`` polylines sampled along the curve parameter
* ``edge_faces`` -- ``(E, 2)`` indices of the two faces each edge separates

Vertices are implicit: they are the endpoints of the edge polylines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantError, NonFiniteGeometry

GRID = 32
FACE_SHAPE = (GRID, GRID, 3)
EDGE_SHAPE = (GRID, 3)


def compute_bbox(geom) -> np.ndarray:
    """Axis-aligned bounding box ``[xmin, ymin, zmin, xmax, ymax, zmax]``.

    ``geom`` is any array whose last axis holds xyz coordinates (a face grid,
    an edge polyline, or a bare point list).
    """
    pts = np.asarray(geom, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise NonFiniteGeometry("cannot bound empty geometry")
    if not np.all(np.isfinite(pts)):
        raise NonFiniteGeometry("geometry contains NaN or inf")
    return np.concatenate([pts.min(axis=0), pts.max(axis=0)])


def _frozen(a, dtype, shape_tail, name):
    arr = np.array(a, dtype=dtype, copy=True)
    if arr.ndim != len(shape_tail) + 1 or arr.shape[1:] != shape_tail:
        if arr.size == 0:
            arr = arr.reshape((0,) + shape_tail)
        else:
            raise InvariantError(f"{name} must have shape (n,) + {shape_tail}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SolidModel:
    faces: np.ndarray
    edges: np.ndarray
    edge_faces: np.ndarray
    class_label: int | None = None
    _adjacency: tuple = field(default=None, init=False, repr=False)

    def __post_init__(self):
        faces = _frozen(self.faces, np.float64, FACE_SHAPE, "faces")
        edges = _frozen(self.edges, np.float64, EDGE_SHAPE, "edges")
        edge_faces = _frozen(self.edge_faces, np.int64, (2,), "edge_faces")
        if len(edges) != len(edge_faces):
            raise InvariantError("edges and edge_faces must have the same length")
        if not (np.all(np.isfinite(faces)) and np.all(np.isfinite(edges))):
            raise NonFiniteGeometry("solid contains NaN or inf samples")
        if len(edge_faces):
            if edge_faces.min() < 0 or edge_faces.max() >= len(faces):
                raise InvariantError("edge references a face that does not exist")
            if np.any(edge_faces[:, 0] == edge_faces[:, 1]):
                raise InvariantError("edge borders the same face twice; split the face along its seam")
        if self.class_label is not None and int(self.class_label) < 0:
            raise InvariantError("class_label must be a non-negative integer")
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_faces", edge_faces)
        if self.class_label is not None:
            object.__setattr__(self, "class_label", int(self.class_label))

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def face_bboxes(self) -> np.ndarray:
        return np.array([compute_bbox(f) for f in self.faces]).reshape(-1, 6)

    def edge_bboxes(self) -> np.ndarray:
        return np.array([compute_bbox(e) for e in self.edges]).reshape(-1, 6)

    def face_centroids(self) -> np.ndarray:
        return self.faces.reshape(self.n_faces, -1, 3).mean(axis=1)

    @property
    def connected(self) -> bool:
        """Whether the face-adjacency graph is connected (disconnected solids are allowed)."""
        return len(connected_components(self)) <= 1

    def with_class_label(self, label: int | None) -> "SolidModel":
        return SolidModel(self.faces, self.edges, self.edge_faces, label)


def face_adjacency(solid: SolidModel) -> tuple[list[set[int]], np.ndarray]:
    """Neighbour sets and degrees of every face.

    Degree counts incident edges, so two faces sharing two edges each get +2.
    """
    if solid._adjacency is not None:
        return solid._adjacency
    neighbors: list[set[int]] = [set() for _ in range(solid.n_faces)]
    degree = np.zeros(solid.n_faces, dtype=np.int64)
    for a, b in solid.edge_faces:
        neighbors[a].add(int(b))
        neighbors[b].add(int(a))
        degree[a] += 1
        degree[b] += 1
    degree.setflags(write=False)
    object.__setattr__(solid, "_adjacency", (neighbors, degree))
    return neighbors, degree


def connected_components(solid: SolidModel) -> list[list[int]]:
    neighbors, _ = face_adjacency(solid)
    seen = np.zeros(solid.n_faces, dtype=bool)
    comps = []
    for s in range(solid.n_faces):
        if seen[s]:
            continue
        stack, comp = [s], []
        seen[s] = True
        while stack:
            f = stack.pop()
            comp.append(f)
            for g in neighbors[f]:
                if not seen[g]:
                    seen[g] = True
                    stack.append(g)
        comps.append(sorted(comp))
    return comps


def euler_characteristic(n_vertices: int, n_edges: int, n_faces: int) -> int:
    return n_vertices - n_edges + n_faces
