from hypothesis import given, strategies as st

from union_find import UnionFind


def test_components_are_sorted():
    uf = UnionFind(5)
    uf.union(4, 1)
    uf.union(3, 1)
    assert uf.components() == [[0], [1, 3, 4], [2]]


def test_union_is_idempotent():
    uf = UnionFind(3)
    uf.union(0, 1)
    uf.union(1, 0)
    assert uf.find(0) == uf.find(1)
    assert len(uf.components()) == 2


@given(st.lists(st.tuples(st.integers(0, 7), st.integers(0, 7)), max_size=20))
def test_components_partition_the_elements(edges):
    uf = UnionFind(8)
    for a, b in edges:
        uf.union(a, b)
    components = uf.components()
    assert sorted(i for c in components for i in c) == list(range(8))
    for a, b in edges:
        assert uf.find(a) == uf.find(b)
