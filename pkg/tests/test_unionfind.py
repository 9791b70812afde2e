import numpy as np
from hypothesis import given, settings, strategies as st
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from brepseq.unionfind import UnionFind


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 40).flatmap(
    lambda n: st.tuples(st.just(n), st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=60))))
def test_groups_match_csgraph(case):
    n, pairs = case
    uf = UnionFind(n)
    for a, b in pairs:
        uf.union(a, b)
    rows = [a for a, _ in pairs]
    cols = [b for _, b in pairs]
    graph = coo_matrix((np.ones(len(pairs)), (rows, cols)), shape=(n, n))
    k, labels = connected_components(graph, directed=False)
    oracle = sorted((np.flatnonzero(labels == c).tolist() for c in range(k)), key=lambda g: g[0])
    assert uf.groups() == oracle


def test_union_reports_merges():
    uf = UnionFind(4)
    assert uf.union(0, 1) and uf.union(2, 3) and uf.union(1, 3)
    assert not uf.union(0, 2)
    assert uf.find(3) == uf.find(0)
    assert uf.groups() == [[0, 1, 2, 3]]


def test_root_independent_of_call_order():
    a, b = UnionFind(3), UnionFind(3)
    a.union(0, 1)
    b.union(1, 0)
    assert a.find(1) == b.find(1) == 0
