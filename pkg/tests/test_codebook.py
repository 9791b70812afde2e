import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from brepseq import Codebook, decode, encode_face, train_codebook
from brepseq.codebook import (PATCH_DIM, RestartConfig, broadcast_edge, collapse_edge, encode_edge,
                              patches_to_grid, quantization_error, quantize, solid_latents, utilization)
from brepseq.errors import EmptyCodebook, EmptyDataset, IndexOutOfRange, NonFiniteGeometry, SchemaError


def test_cube_face_patches_are_subgrids(cube):
    g = np.asarray(cube.faces[0])
    p = encode_face(g)
    assert p.shape == (4, PATCH_DIM)
    assert np.array_equal(p[0], g[:16, :16].ravel())
    assert np.array_equal(p[1], g[:16, 16:].ravel())
    assert np.array_equal(p[2], g[16:, :16].ravel())
    assert np.array_equal(p[3], g[16:, 16:].ravel())
    assert np.array_equal(patches_to_grid(p), g)


def test_edge_broadcast_round_trip(cube):
    e = np.asarray(cube.edges[3])
    grid = broadcast_edge(e)
    assert grid.shape == (32, 32, 3) and np.array_equal(grid[:, 17], e)
    # averaging 32 equal values is exact up to rounding
    assert np.allclose(collapse_edge(grid), e, rtol=0, atol=1e-15)
    p = encode_edge(e)
    assert np.array_equal(p[0], p[1]) and np.array_equal(p[2], p[3])


def test_encode_rejects_bad_grids():
    with pytest.raises(ValueError):
        encode_face(np.zeros((16, 16, 3)))
    g = np.zeros((32, 32, 3))
    g[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteGeometry):
        encode_face(g)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (20, 6), elements=st.floats(-1, 1, width=32)),
       arrays(np.float64, (7, 6), elements=st.floats(-1, 1, width=32)))
def test_nearest_matches_brute_force(x, words):
    cb = Codebook(words)
    got = cb.nearest(x)
    exact = ((x[:, None] - words[None]) ** 2).sum(-1)
    # same distance as the oracle, and the lowest index among exact ties
    assert np.allclose(exact[np.arange(len(x)), got], exact.min(axis=1), rtol=0, atol=1e-12)
    for row, k in enumerate(got):
        ties = np.flatnonzero(exact[row] == exact[row].min())
        if len(ties) > 1 and exact[row, k] == exact[row].min():
            assert k == ties[0]


def test_tie_goes_to_lowest_index():
    words = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
    assert Codebook(words).nearest([[0.0, 0.0]]).tolist() == [0]
    dup = np.array([[0.5, 0.5], [0.5, 0.5]])
    assert Codebook(dup).nearest([[0.5, 0.5]]).tolist() == [0]


def test_quantize_counts_usage():
    cb = Codebook(np.eye(3))
    idx = quantize(np.array([[1, 0, 0], [0.9, 0.1, 0], [0, 0, 1]]), cb)
    assert idx.tolist() == [0, 0, 2] and cb.usage_counts.tolist() == [2, 0, 1]
    quantize(np.array([[0, 1, 0]]), cb, count=False)
    assert cb.usage_counts.tolist() == [2, 0, 1]


def test_lookup_range():
    cb = Codebook(np.eye(3))
    with pytest.raises(IndexOutOfRange):
        cb.lookup([3])
    with pytest.raises(EmptyCodebook):
        Codebook(np.zeros((0, 3)))


def test_lossless_when_corpus_fits(solids, codebook):
    """Fewer distinct patches than codewords: every patch is a codeword."""
    x = solid_latents(solids)
    assert quantization_error(codebook, x) == 0.0
    idx = codebook.nearest(x)
    assert np.array_equal(codebook.codewords[idx], x)


def test_decode_face_and_edge(cube, codebook):
    toks = codebook.nearest(encode_face(cube.faces[2]))
    assert np.array_equal(decode(toks, codebook, "face"), cube.faces[2])
    toks = codebook.nearest(encode_edge(cube.edges[5]))
    assert np.allclose(decode(toks, codebook, "edge"), cube.edges[5], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        decode(toks, codebook, "vertex")


def test_training_reduces_error():
    rng = np.random.default_rng(0)
    centers = rng.normal(size=(8, 4)) * 5
    x = centers[rng.integers(0, 8, 2000)] + rng.normal(scale=0.1, size=(2000, 4))
    hist = []
    cb = train_codebook(x, n_geo=8, epochs=6, seed=1, history=hist, val_size=500)
    assert hist[-1]["val_error"] < hist[0]["val_error"]
    assert cb.meta["val_error"] == min(h["val_error"] for h in hist)
    assert cb.usage_counts.sum() == len(x)
    assert cb.max_error == pytest.approx(np.abs(x - cb.codewords[cb.nearest(x)]).max())


def test_restart_revives_duplicate_codewords():
    x = np.repeat(np.arange(10, dtype=np.float64)[:, None], 3, axis=1)
    x = np.repeat(x, 5, axis=0)
    hist = []
    train_codebook(x, n_geo=16, epochs=3, seed=0, history=hist)
    # 10 distinct latents padded to 16: the 6 repeats lose every tie
    assert hist[1]["restarted"] == 6
    hist = []
    train_codebook(x, n_geo=16, epochs=3, seed=0, history=hist, restart=RestartConfig(enabled=False))
    assert all(h["restarted"] == 0 for h in hist)


def test_training_is_deterministic():
    x = np.random.default_rng(3).normal(size=(500, 6))
    a = train_codebook(x, n_geo=20, epochs=3, seed=4, val_size=100)
    b = train_codebook(x, n_geo=20, epochs=3, seed=4, val_size=100)
    assert a.to_bytes() == b.to_bytes()


def test_utilization_bounds():
    x = np.random.default_rng(3).normal(size=(300, 6))
    cb = train_codebook(x, n_geo=30, epochs=2)
    assert 0 < utilization(cb, x) <= 1


def test_empty_training_data():
    with pytest.raises(EmptyDataset):
        train_codebook(np.zeros((0, 4)))


def test_file_round_trip(tmp_path, codebook):
    path = tmp_path / "cb.bin"
    codebook.save(path)
    back = Codebook.load(path)
    assert np.array_equal(back.codewords, codebook.codewords.astype(np.float32))
    assert np.array_equal(back.usage_counts, codebook.usage_counts)
    assert back.max_error == codebook.max_error
    assert back.content_hash() == codebook.content_hash()
    assert back.to_bytes() == codebook.to_bytes()
    raw = path.read_bytes()
    assert raw[:4] == b"BRCB"
    with pytest.raises(SchemaError):
        Codebook.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SchemaError):
        Codebook.from_bytes(raw[:-3])
