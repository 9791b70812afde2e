import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brepseq import SolidModel, generate_procedural, load_solid, save_solid
from brepseq.core import face_adjacency
from brepseq.errors import InvariantError, ParamError, ParseError, SchemaError
from brepseq.ingestion import (BOUND, KINDS, DatasetManifest, DisconnectedSolidWarning, generate_dataset,
                               ground_truth_counts, load_dataset, parse_kind_mix, read_solid, solid_to_dict)


def corner_vertices(solid, tol=1e-9):
    """Distinct edge endpoints (the true vertices of a procedural solid)."""
    ends = np.concatenate([solid.edges[:, 0], solid.edges[:, -1]])
    verts = []
    for p in ends:
        if not any(np.linalg.norm(p - v) < tol for v in verts):
            verts.append(p)
    return verts


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(KINDS), st.integers(0, 10**6))
def test_counts_match_ground_truth(kind, seed):
    solid = generate_procedural(kind, seed=seed)
    v, e, f = ground_truth_counts(kind, None, seed)
    assert (solid.n_faces, solid.n_edges) == (f, e)
    assert len(corner_vertices(solid)) == v
    assert v - e + f == 2


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(KINDS), st.integers(0, 10**6))
def test_closed_and_bounded(kind, seed):
    solid = generate_procedural(kind, seed=seed)
    assert np.abs(solid.faces).max() < BOUND and np.abs(solid.edges).max() < BOUND
    assert solid.connected
    # every edge endpoint lies on both adjacent faces, up to their sampling resolution
    for poly, (a, b) in zip(solid.edges, solid.edge_faces):
        for p in (poly[0], poly[-1]):
            for f in (a, b):
                g = solid.faces[f]
                spacing = max(np.linalg.norm(np.diff(g, axis=0), axis=-1).max(),
                              np.linalg.norm(np.diff(g, axis=1), axis=-1).max())
                assert np.linalg.norm(g.reshape(-1, 3) - p, axis=1).min() <= spacing
    # each face's boundary edges meet pairwise at their endpoints
    for f in range(solid.n_faces):
        mine = [i for i, (a, b) in enumerate(solid.edge_faces) if f in (a, b)]
        ends = np.concatenate([solid.edges[mine, 0], solid.edges[mine, -1]])
        for p in ends:
            assert (np.linalg.norm(ends - p, axis=1) < 1e-9).sum() == 2


def test_procedural_is_seeded():
    a = generate_procedural("l_bracket", seed=4)
    b = generate_procedural("l_bracket", seed=4)
    c = generate_procedural("l_bracket", seed=5)
    assert save_solid(a) == save_solid(b) != save_solid(c)
    assert a.class_label == KINDS.index("l_bracket")


def test_prism_degrees():
    solid = generate_procedural("n_prism", {"n": 7})
    _, degree = face_adjacency(solid)
    assert sorted(degree.tolist()) == [4] * 7 + [7, 7]


@pytest.mark.parametrize("kind,params", [
    ("box", {"size": (2.5, 1, 1)}),
    ("n_prism", {"n": 2}),
    ("n_prism", {"n": 49}),
    ("box", {"size": (1.6, 1.6, 1.6), "center": (0.5, 0, 0)}),
    ("torus", {}),
])
def test_bad_params(kind, params):
    with pytest.raises(ParamError):
        generate_procedural(kind, params)


def test_round_trip_is_bit_exact(solids):
    for solid in solids:
        data = save_solid(solid)
        back = load_solid(data)
        assert np.array_equal(back.faces, solid.faces) and np.array_equal(back.edges, solid.edges)
        assert np.array_equal(back.edge_faces, solid.edge_faces)
        assert save_solid(back) == data


def test_fifty_face_prism_round_trip(tmp_path):
    solid = generate_procedural("n_prism", {"n": 48, "radius": 0.8})
    assert solid.n_faces == 50
    path = tmp_path / "p.json"
    path.write_bytes(save_solid(solid))
    back = read_solid(path)
    assert [sorted(s) for s in face_adjacency(back)[0]] == [sorted(s) for s in face_adjacency(solid)[0]]


def test_meta_is_ignored_on_load(cube):
    data = save_solid(cube, {"config_hash": "abc"})
    assert json.loads(data)["meta"] == {"config_hash": "abc"}
    assert save_solid(load_solid(data)) == save_solid(cube)


def _doc(cube):
    return solid_to_dict(cube)


def test_parse_errors(cube):
    with pytest.raises(ParseError):
        load_solid(b"{not json")
    with pytest.raises(SchemaError):
        load_solid(json.dumps([1, 2]))
    doc = _doc(cube)
    del doc["edges"]
    with pytest.raises(SchemaError):
        load_solid(json.dumps(doc))
    doc = _doc(cube)
    doc["faces"][0] = doc["faces"][0][:31]
    with pytest.raises(SchemaError):
        load_solid(json.dumps(doc))
    doc = _doc(cube)
    doc["class_label"] = True
    with pytest.raises(SchemaError):
        load_solid(json.dumps(doc))
    doc = _doc(cube)
    doc["edges"][0]["face_a"] = 1.5
    with pytest.raises(SchemaError):
        load_solid(json.dumps(doc))


def test_invariant_errors(cube):
    doc = _doc(cube)
    doc["edges"][0]["face_b"] = doc["edges"][0]["face_a"]
    with pytest.raises(InvariantError):
        load_solid(json.dumps(doc))
    doc = _doc(cube)
    doc["edges"][0]["face_b"] = 17
    with pytest.raises(InvariantError):
        load_solid(json.dumps(doc))
    with pytest.raises(InvariantError):
        load_solid(save_solid(cube), n_max=5)


def test_disconnected_warns(cube):
    lonely = SolidModel(np.concatenate([cube.faces, cube.faces[:1]]), cube.edges, cube.edge_faces)
    with pytest.warns(DisconnectedSolidWarning):
        load_solid(save_solid(lonely))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        load_solid(save_solid(cube))


def test_kind_mix():
    assert parse_kind_mix("box:1,n_prism:3") == {"box": 0.25, "n_prism": 0.75}
    for bad in ("", "box:x", "blob:1", "box:0"):
        with pytest.raises(ParamError):
            parse_kind_mix(bad)


def test_dataset_is_reproducible(tmp_path):
    mix = parse_kind_mix("box:0.4,n_prism:0.4,l_bracket:0.2")
    m1 = generate_dataset(tmp_path / "a", 12, mix, seed=3, meta={"config_hash": "h"})
    generate_dataset(tmp_path / "b", 12, mix, seed=3, meta={"config_hash": "h"})
    for name in ["manifest.json"] + [e.path for e in m1.entries]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    back = DatasetManifest.from_json((tmp_path / "a" / "manifest.json").read_text())
    assert back.entries == m1.entries and back.meta == {"config_hash": "h"}
    solids = load_dataset(tmp_path / "a")
    assert [s.n_faces for s in solids] == [e.face_count for e in m1.entries]
    assert {e.kind for e in m1.entries} <= {"box", "n_prism", "l_bracket"}


def test_manifest_errors():
    with pytest.raises(ParseError):
        DatasetManifest.from_json("{")
    with pytest.raises(SchemaError):
        DatasetManifest.from_json('{"entries": [{"nope": 1}], "seed": 0}')
