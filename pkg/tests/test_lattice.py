import itertools
from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st

from torusbp.lattice import (AmbiguousWrapError, Configuration, HyperRectangle, HyperSquare, TorusShape,
                             bounding_rect, graph_distance, hyper_square_parts, neighbor_table, neighbors,
                             rect_distance, tile)


def bfs_distances(shape, src):
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for w in neighbors(shape, u):
            if w not in dist:
                dist[w] = dist[u] + 1
                q.append(w)
    return dist


shapes = st.tuples(st.integers(1, 4), st.integers(3, 7)).map(lambda t: TorusShape(*t))


@st.composite
def shape_and_node(draw):
    s = draw(shapes)
    v = tuple(draw(st.integers(0, s.L - 1)) for _ in range(s.d))
    return s, v


def test_neighbors_examples():
    assert neighbors(TorusShape(2, 4), (0, 0)) == [(3, 0), (1, 0), (0, 3), (0, 1)]
    assert neighbors(TorusShape(1, 3), (2,)) == [(1,), (0,)]
    assert all(len(neighbors(TorusShape(3, 5), v)) == 6 for v in TorusShape(3, 5).nodes())


def test_neighbors_dimension_mismatch():
    with pytest.raises(ValueError):
        neighbors(TorusShape(2, 4), (0, 0, 0))
    with pytest.raises(ValueError):
        neighbors(TorusShape(2, 4), (0, 4))


@given(shape_and_node())
def test_neighbor_relation_symmetric(sv):
    s, v = sv
    for u in neighbors(s, v):
        assert v in neighbors(s, u)
        assert graph_distance(s, u, v) == 1


@given(shape_and_node())
def test_index_coord_roundtrip(sv):
    s, v = sv
    assert s.coord(s.index(v)) == v
    assert s.index(v) == sum(x * s.L**j for j, x in enumerate(v))


def test_nodes_in_index_order():
    s = TorusShape(3, 4)
    assert [s.index(v) for v in s.nodes()] == list(range(s.n_nodes))


def test_neighbor_table_matches_neighbors():
    s = TorusShape(3, 5)
    tab = neighbor_table(s)
    for v in s.nodes():
        assert [s.coord(int(i)) for i in tab[s.index(v)]] == neighbors(s, v)


def test_graph_distance_examples():
    s = TorusShape(2, 8)
    assert graph_distance(s, (0, 0), (7, 0)) == 1
    assert graph_distance(s, (0, 0), (3, 4)) == 7


def test_graph_distance_equals_bfs_on_t6_3():
    s = TorusShape(3, 6)
    nodes = list(s.nodes())
    # BFS distance is translation invariant; one source per residue class is
    # enough, but checking every source is cheap at 216 nodes.
    for src in nodes:
        dist = bfs_distances(s, src)
        assert all(graph_distance(s, src, v) == dist[v] for v in nodes)


def test_triangle_inequality(rng):
    s = TorusShape(3, 9)
    for _ in range(1000):
        u, v, w = (tuple(rng.integers(0, 9, 3)) for _ in range(3))
        assert graph_distance(s, u, w) <= graph_distance(s, u, v) + graph_distance(s, v, w)
        assert graph_distance(s, u, v) == graph_distance(s, v, u)
        assert (graph_distance(s, u, v) == 0) == (u == v)


def test_hyper_square_parts_examples():
    s = TorusShape(2, 4)
    even, odd = hyper_square_parts(HyperSquare((0, 0), frozenset({0, 1})), s)
    assert even == {(0, 0), (1, 1)} and odd == {(0, 1), (1, 0)}
    even, odd = hyper_square_parts(HyperSquare((0, 0, 0), frozenset({0, 1, 2})), TorusShape(3, 8))
    assert len(even) == len(odd) == 4
    even, odd = hyper_square_parts(HyperSquare((3, 2), frozenset({1})), TorusShape(2, 8))
    assert even == {(3, 2)} and odd == {(3, 3)}


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_parts_each_node_has_r_neighbors_across(d):
    s = TorusShape(d, 8)
    for r in range(1, d + 1):
        for hs in tile(s, r):
            even, odd = hyper_square_parts(hs, s)
            assert len(even) == len(odd) == 2 ** (r - 1)
            assert even | odd == set(hs.nodes(s)) and not even & odd
            for a, b in ((even, odd), (odd, even)):
                assert all(sum(u in b for u in neighbors(s, v)) == r for v in a)


def test_tile_partitions_even_torus():
    s = TorusShape(3, 8)
    sq = tile(s, 2)
    assert len(sq) == 128
    cover = np.zeros(s.dims, int)
    for hs in sq:
        for v in hs.nodes(s):
            cover[v] += 1
    assert np.all(cover == 1)


def test_tile_odd_torus_leaves_last_value_uncovered():
    s = TorusShape(2, 5)
    sq = tile(s, 2)
    assert len(sq) == 4
    cover = np.zeros(s.dims, int)
    for hs in sq:
        for v in hs.nodes(s):
            cover[v] += 1
    assert cover.max() == 1
    uncovered = {tuple(v) for v in np.argwhere(cover == 0)}
    assert uncovered == {v for v in s.nodes() if 4 in v}


@pytest.mark.parametrize("d,L", [(2, 6), (3, 5), (4, 4)])
def test_tile_count_formula(d, L):
    for r in range(1, d + 1):
        assert len(tile(TorusShape(d, L), r)) == L ** (d - r) * (L // 2) ** r


def test_tile_rejects_bad_r():
    with pytest.raises(ValueError):
        tile(TorusShape(2, 4), 3)
    with pytest.raises(ValueError):
        tile(TorusShape(2, 4), 0)


def test_hyper_square_parity_and_rect():
    hs = HyperSquare((2, 4, 3), frozenset({0, 1}))
    assert hs.parity == 1
    assert hs.rect() == HyperRectangle((2, 4, 3), (1, 1, 0))
    assert hs.rect().volume == 4


def test_rect_contains_and_volume():
    s = TorusShape(2, 6)
    rc = HyperRectangle((5, 1), (2, 1))
    inside = {v for v in s.nodes() if rc.contains(s, v)}
    assert inside == set(rc.nodes(s)) and len(inside) == rc.volume == 6
    assert (0, 2) in inside and (2, 1) not in inside


def test_bounding_rect_examples():
    s = TorusShape(2, 16)
    assert bounding_rect([(2, 3), (3, 5)], s) == HyperRectangle((2, 3), (1, 2))
    assert bounding_rect([(7, 9)], s).lengths == (0, 0)
    assert bounding_rect([(15, 0), (1, 0)], s) == HyperRectangle((15, 0), (2, 0))


def test_bounding_rect_ambiguous():
    s = TorusShape(2, 8)
    with pytest.raises(AmbiguousWrapError):
        bounding_rect([(0, 0), (4, 0)], s)
    with pytest.raises(ValueError):
        bounding_rect([], s)


def all_rects(s):
    for start in s.nodes():
        for lengths in itertools.product(range(s.L), repeat=s.d):
            yield HyperRectangle(start, lengths)


def test_bounding_rect_minimal_vs_brute_force(rng):
    s = TorusShape(2, 6)
    rects = list(all_rects(s))
    members = [set(rc.nodes(s)) for rc in rects]
    checked = 0
    for _ in range(60):
        k = int(rng.integers(1, 4))
        pts = {tuple(int(x) for x in rng.integers(0, 6, 2)) for _ in range(k)}
        try:
            got = bounding_rect(pts, s)
        except AmbiguousWrapError:
            continue
        best = min(rc.volume for rc, m in zip(rects, members) if pts <= m)
        assert pts <= set(got.nodes(s))
        assert got.volume == best
        checked += 1
    assert checked > 20


def test_rect_distance_examples():
    s = TorusShape(2, 8)
    a, b = HyperRectangle((0, 0), (0, 0)), HyperRectangle((0, 2), (0, 0))
    assert rect_distance(a, b, s) == 2
    assert rect_distance(HyperRectangle((0, 0), (2, 2)), HyperRectangle((1, 1), (3, 0)), s) == 0


def test_rect_distance_vs_brute_force(rng):
    s = TorusShape(2, 8)
    for _ in range(300):
        a = HyperRectangle(tuple(int(x) for x in rng.integers(0, 8, 2)), tuple(int(x) for x in rng.integers(0, 4, 2)))
        b = HyperRectangle(tuple(int(x) for x in rng.integers(0, 8, 2)), tuple(int(x) for x in rng.integers(0, 4, 2)))
        brute = min(graph_distance(s, u, v) for u in a.nodes(s) for v in b.nodes(s))
        assert rect_distance(a, b, s) == brute
        assert (brute == 0) == bool(set(a.nodes(s)) & set(b.nodes(s)))


@given(shapes, st.data())
def test_configuration_roundtrip(s, data):
    flat = np.array(data.draw(st.lists(st.booleans(), min_size=s.n_nodes, max_size=s.n_nodes)), bool)
    c = Configuration.from_flat(s, flat)
    assert np.array_equal(c.flat, flat)
    assert Configuration.from_array(s, c.array) == c
    assert Configuration.from_coords(s, c.black_coords()) == c
    assert c.popcount() == flat.sum()
    assert all(c[s.coord(int(i))] for i in np.flatnonzero(flat))


def test_configuration_layout():
    s = TorusShape(2, 4)
    c = Configuration.from_coords(s, [(1, 0), (0, 1)])
    assert list(np.flatnonzero(c.flat)) == [1, 4]
    assert c.bits[0] == 0b00010010
    with pytest.raises(ValueError):
        c.bits[0] = 0
    with pytest.raises(ValueError):
        Configuration(s, np.zeros(3, np.uint8))
    with pytest.raises(ValueError):
        Configuration(TorusShape(1, 3), np.array([0b1000], np.uint8))


def test_shape_validation():
    with pytest.raises(ValueError):
        TorusShape(0, 4)
    with pytest.raises(ValueError):
        TorusShape(2, 1)
    s = TorusShape(3, 5)
    assert s.n_nodes == 125 and s.n_edges == 375
