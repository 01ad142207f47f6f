import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from eventmixer.errors import ConfigError, DataError
from eventmixer.events import Event, EventWindow, SensorGeometry
from eventmixer.graph import (
    EventGraph,
    IndexMap,
    build_graph,
    dump_graph,
    farthest_point_sample,
    invert_index_map,
    knn,
    knn_cross,
    knn_pyramid,
)

GEOM = SensorGeometry(346, 260)


def _graph(positions, labels=None):
    return EventGraph(np.asarray(positions, dtype=np.float64), labels)


def _random_graph(rng, n):
    return _graph(rng.random((n, 3)))


# ---------------------------------------------------------------------------
# build_graph
# ---------------------------------------------------------------------------


def test_build_graph_normalization_center():
    w = EventWindow([Event(173, 130, 50_000, 1, 2)], t0=0, duration=100_000)
    g = build_graph(w, GEOM)
    assert np.allclose(g.positions[0], [0.5, 0.5, 0.5])
    assert g.labels.tolist() == [2]


def test_build_graph_origin_and_upper_bound():
    w = EventWindow(
        [Event(0, 0, 0, 1), Event(345, 259, 99_999, -1)], t0=0, duration=100_000
    )
    g = build_graph(w, GEOM)
    assert np.all(g.positions[0] == 0.0)
    assert np.all(g.positions[1] < 1.0)
    assert np.all(g.positions >= 0.0)
    assert g.labels is None


def test_build_graph_empty_window():
    with pytest.raises(DataError):
        build_graph(EventWindow([], 0, 100), GEOM)


# ---------------------------------------------------------------------------
# knn
# ---------------------------------------------------------------------------


def test_knn_single_node_clamps():
    m = knn(_graph([[0.5, 0.5, 0.5]]), k=16)
    assert m.rows.tolist() == [[0]]


def test_knn_collinear_middle_row():
    # 5 equally spaced nodes on the x axis; middle node's neighbors are
    # itself, then the left and right nodes (left first: smaller x).
    pos = [[0.1 * i, 0.0, 0.0] for i in range(5)]
    m = knn(_graph(pos), k=3, method="brute")
    assert m.rows[2].tolist() == [2, 1, 3]


def test_knn_self_inclusion_and_exclusion():
    rng = np.random.default_rng(0)
    g = _random_graph(rng, 20)
    with_self = knn(g, k=5)
    assert all(i in with_self.rows[i] for i in range(20))
    without = knn(g, k=5, include_self=False)
    assert all(i not in without.rows[i] for i in range(20))
    # dropping self keeps the rest of the order
    assert all(
        [j for j in with_self.rows[i] if j != i][:4] == without.rows[i][:4].tolist()
        for i in range(20)
    )
    # grid path agrees with brute under exclusion too
    assert np.array_equal(knn(g, 5, method="grid", include_self=False).rows, without.rows)
    single = knn(_graph([[0.5, 0.5, 0.5]]), k=3, method="grid", include_self=False)
    assert single.rows.shape == (1, 0)


@pytest.mark.parametrize("n,k", [(1, 1), (7, 3), (30, 7), (120, 16), (64, 64), (50, 64)])
def test_knn_matches_loop_oracle(n, k):
    rng = np.random.default_rng(n * 100 + k)
    g = _random_graph(rng, n)
    expected = oracles.knn_rows(g.positions, g.positions, k, self_map=True)
    for method in ("brute", "grid"):
        got = knn(g, k=k, method=method)
        assert got.rows.tolist() == expected.tolist(), method


def test_knn_grid_equals_brute_with_ties():
    # integer lattice forces exact distance ties
    xs, ys = np.meshgrid(np.linspace(0, 1, 6), np.linspace(0, 1, 6))
    pos = np.stack([xs.ravel(), ys.ravel(), np.zeros(36)], axis=1)
    g = _graph(pos)
    for k in (1, 4, 9, 36):
        assert knn(g, k, method="grid").rows.tolist() == knn(g, k, method="brute").rows.tolist()
        assert (knn(g, k, method="brute").rows.tolist()
                == oracles.knn_rows(pos, pos, k, self_map=True).tolist())


def test_knn_grid_equals_brute_duplicates():
    pos = np.array([[0.5, 0.5, 0.5]] * 5 + [[0.2, 0.2, 0.2]] * 3)
    g = _graph(pos)
    for k in (2, 5, 8):
        assert knn(g, k, method="grid").rows.tolist() == knn(g, k, method="brute").rows.tolist()


def test_knn_permutation_stability():
    rng = np.random.default_rng(5)
    g = _random_graph(rng, 40)
    m = knn(g, k=6, method="brute")
    perm = rng.permutation(40)
    g2 = _graph(g.positions[perm])
    m2 = knn(g2, k=6, method="brute")
    # node i of g2 is node perm[i] of g: rows must be conjugated
    inv = np.empty(40, dtype=np.int64)
    inv[perm] = np.arange(40)
    assert np.array_equal(m2.rows, inv[m.rows[perm]])


def test_knn_bad_k():
    with pytest.raises(ConfigError):
        knn(_graph([[0, 0, 0]]), k=0)


# ---------------------------------------------------------------------------
# pyramid
# ---------------------------------------------------------------------------


def test_pyramid_prefix_nesting():
    rng = np.random.default_rng(2)
    g = _random_graph(rng, 50)
    pyr = knn_pyramid(g, (2, 4, 9))
    for small, big in zip(pyr.levels, pyr.levels[1:]):
        L = small.rows.shape[1]
        assert np.array_equal(small.rows, big.rows[:, :L])


def test_pyramid_levels_equal_independent_knn():
    rng = np.random.default_rng(3)
    g = _random_graph(rng, 100)
    pyr = knn_pyramid(g, (16, 32, 48, 64))
    for k, level in zip((16, 32, 48, 64), pyr.levels):
        assert np.array_equal(level.rows, knn(g, k).rows)


def test_pyramid_clamps_small_graph():
    g = _graph([[0, 0, 0], [0.5, 0, 0], [1, 0, 0]])
    pyr = knn_pyramid(g, (3,))
    assert sorted(pyr.levels[0].rows[0].tolist()) == [0, 1, 2]


def test_pyramid_requires_increasing_k():
    g = _graph([[0, 0, 0]])
    with pytest.raises(ConfigError):
        knn_pyramid(g, (4, 4))
    with pytest.raises(ConfigError):
        knn_pyramid(g, (8, 2))


# ---------------------------------------------------------------------------
# farthest point sampling
# ---------------------------------------------------------------------------


def test_fps_full_sample_is_all_indices():
    rng = np.random.default_rng(4)
    g = _random_graph(rng, 9)
    idx = farthest_point_sample(g, 9)
    assert sorted(idx.tolist()) == list(range(9))


def test_fps_unit_square_corners_diagonal():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    idx = farthest_point_sample(_graph(pos), 2)
    # enumerate all pairs: only diagonals achieve max-min distance 2
    d2 = {(a, b): oracles.sqdist(pos[a], pos[b]) for a in range(4) for b in range(4) if a < b}
    best = max(d2.values())
    pair = tuple(sorted(idx.tolist()))
    assert d2[pair] == best == 2.0


def test_fps_single_sample_is_centroid_nearest():
    pos = np.array([[0, 0, 0], [0.4, 0.5, 0.5], [1, 1, 1]], dtype=float)
    idx = farthest_point_sample(_graph(pos), 1)
    assert idx.tolist() == [1]


def test_fps_oracle_small_graphs():
    rng = np.random.default_rng(6)
    for n in range(1, 13):
        for trial in range(5):
            pos = rng.random((n, 3))
            for m in range(1, min(4, n) + 1):
                got = farthest_point_sample(_graph(pos), m).tolist()
                assert got == oracles.fps_indices(pos, m)


def test_fps_tie_break_lattice():
    xs, ys = np.meshgrid(np.linspace(0, 1, 3), np.linspace(0, 1, 3))
    pos = np.stack([xs.ravel(), ys.ravel(), np.zeros(9)], axis=1)
    for m in (1, 2, 3, 4):
        assert farthest_point_sample(_graph(pos), m).tolist() == oracles.fps_indices(pos, m)


def test_fps_coverage_radius_monotone():
    rng = np.random.default_rng(7)
    pos = rng.random((60, 3))
    g = _graph(pos)

    def radius(sample):
        d = pos[:, None, :] - pos[sample][None, :, :]
        return np.min((d * d).sum(-1), axis=1).max()

    radii = [radius(farthest_point_sample(g, m)) for m in range(1, 61)]
    assert all(b <= a + 1e-15 for a, b in zip(radii, radii[1:]))


def test_fps_size_errors():
    g = _graph([[0, 0, 0]])
    with pytest.raises(ConfigError):
        farthest_point_sample(g, 2)
    with pytest.raises(ConfigError):
        farthest_point_sample(g, 0)


# ---------------------------------------------------------------------------
# cross maps
# ---------------------------------------------------------------------------


def test_knn_cross_full_set_equals_knn():
    rng = np.random.default_rng(8)
    g = _random_graph(rng, 25)
    cross = knn_cross(np.arange(25), g, 5)
    assert np.array_equal(cross.rows, knn(g, 5).rows)


def test_knn_cross_matches_oracle():
    rng = np.random.default_rng(9)
    g = _random_graph(rng, 8)
    sampled = np.array([1, 6])
    cross = knn_cross(sampled, g, 3)
    expected = oracles.knn_rows(g.positions[sampled], g.positions, 3)
    assert np.array_equal(cross.rows, expected)


def test_knn_cross_clamps():
    rng = np.random.default_rng(10)
    g = _random_graph(rng, 4)
    cross = knn_cross(np.array([0]), g, 99)
    assert cross.rows.shape == (1, 4)


# ---------------------------------------------------------------------------
# inverse maps
# ---------------------------------------------------------------------------


def test_invert_symmetric_two_nodes():
    m = IndexMap(k=2, domain_size=2, rows=np.array([[0, 1], [1, 0]]))
    inv = invert_index_map(m, 2)
    assert inv.list_for(0).tolist() == [0, 1]
    assert inv.list_for(1).tolist() == [0, 1]


def test_invert_counts_and_membership():
    rng = np.random.default_rng(11)
    g = _random_graph(rng, 50)
    m = knn(g, 5)
    inv = invert_index_map(m, 50)
    assert int(inv.counts().sum()) == m.rows.size == 250
    oracle = oracles.invert_rows(m.rows, 50)
    for j in range(50):
        assert inv.list_for(j).tolist() == oracle[j]
    # exact inversion both ways
    for i in range(50):
        for j in m.rows[i]:
            assert i in inv.list_for(int(j))


def test_invert_unreferenced_node_empty():
    m = IndexMap(k=1, domain_size=3, rows=np.array([[0], [0]]))
    inv = invert_index_map(m, 3)
    assert inv.list_for(1).tolist() == []
    assert inv.list_for(2).tolist() == []
    assert inv.empty_mask().tolist() == [False, True, True]


def test_invert_bounds_error():
    m = IndexMap(k=1, domain_size=2, rows=np.array([[5]]))
    with pytest.raises(DataError):
        invert_index_map(m, 2)


@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 10_000))
@settings(max_examples=60, deadline=None)
def test_invert_roundtrip_property(n, k, seed):
    rng = np.random.default_rng(seed)
    rows = np.stack([rng.choice(n, size=min(k, n), replace=False) for _ in range(n)])
    m = IndexMap(k=k, domain_size=n, rows=rows)
    inv = invert_index_map(m, n)
    members = {(i, int(j)) for i in range(n) for j in rows[i]}
    inv_members = {(int(i), j) for j in range(n) for i in inv.list_for(j)}
    assert members == inv_members
    assert int(inv.counts().sum()) == rows.size


@given(st.integers(0, 100_000), st.integers(1, 24), st.integers(1, 8))
@settings(max_examples=60, deadline=None)
def test_knn_tie_heavy_matches_oracle_property(seed, n, k):
    # coarse coordinate grid forces frequent exact distance ties
    rng = np.random.default_rng(seed)
    pos = rng.integers(0, 4, size=(n, 3)) / 4.0
    g = _graph(pos)
    expected = oracles.knn_rows(pos, pos, k, self_map=True).tolist()
    assert knn(g, k, method="brute").rows.tolist() == expected
    assert knn(g, k, method="grid").rows.tolist() == expected


def test_dump_graph_format():
    g = _graph([[0.25, 0.5, 0.75]], labels=np.array([3]))
    text = dump_graph(g, [knn(g, 1)])
    lines = text.strip().splitlines()
    assert lines[0] == "0,0.250000,0.500000,0.750000,3"
    assert lines[1] == "M 1 0: 0"
