import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gnstode.graph import knn_graph, merge_graphs
from gnstode.physics import ParticleState, System


def brute_knn(pos, k):
    """Sort every other particle by (distance, index) and keep the first k."""
    n = len(pos)
    k = min(k, n - 1)
    pairs = []
    for i in range(n):
        cands = []
        for j in range(n):
            if j != i:
                dx, dy = pos[j][0] - pos[i][0], pos[j][1] - pos[i][1]
                cands.append((dx * dx + dy * dy, j))
        cands.sort()
        pairs.extend((i, j) for _, j in cands[:k])
    return pairs


def edges(g):
    return list(zip(g.receivers.tolist(), g.senders.tolist()))


def test_three_collinear_particles():
    g = knn_graph(np.array([[0.0, 0.0], [1.0, 0.0], [3.0, 0.0]]), k=1)
    assert edges(g) == [(0, 1), (1, 0), (2, 1)]
    assert np.allclose(g.edge_features, [[1, 0, 1], [-1, 0, 1], [-2, 0, 2]])


def test_tie_broken_by_sender_index():
    # particles 1 and 2 are both at distance 1 from particle 0
    g = knn_graph(np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [5.0, 5.0]]), k=1)
    assert edges(g)[0] == (0, 1)


def test_k_clamped_to_n_minus_one():
    g = knn_graph(np.random.default_rng(0).uniform(size=(4, 2)), k=15)
    assert g.num_edges == 12
    for i in range(4):
        assert sorted(g.senders[g.receivers == i].tolist()) == [j for j in range(4) if j != i]


def test_accepts_particle_state():
    f = np.column_stack([np.ones(3), [[0, 0], [2, 0], [0, 3]], np.zeros((3, 2))])
    g = knn_graph(ParticleState(System.GRAVITY, f), k=1)
    assert edges(g) == [(0, 1), (1, 0), (2, 0)]


@pytest.mark.parametrize("pos", [np.zeros((1, 2)), np.array([[0.0, 0.0], [0.0, 0.0]])])
def test_degenerate_inputs_raise(pos):
    with pytest.raises(ValueError):
        knn_graph(pos, k=3)


def test_bad_k_raises():
    with pytest.raises(ValueError):
        knn_graph(np.eye(2), k=0)


@pytest.mark.parametrize("n,k", [(2, 15), (8, 3), (20, 15), (40, 15)])
def test_matches_brute_force(n, k):
    pos = np.random.default_rng(n * k).uniform(0, 7, size=(n, 2))
    assert edges(knn_graph(pos, k)) == brute_knn(pos, k)


@given(
    arrays(np.float64, st.tuples(st.integers(2, 12), st.just(2)), elements=st.integers(-20, 20).map(float)),
    st.integers(1, 15),
)
def test_brute_force_with_integer_grid_ties(pos, k):
    # integer coordinates produce many exact distance ties
    if len(np.unique(pos, axis=0)) < len(pos):
        with pytest.raises(ValueError):
            knn_graph(pos, k)
        return
    g = knn_graph(pos, k)
    assert edges(g) == brute_knn(pos, k)
    delta = pos[g.senders] - pos[g.receivers]
    assert np.array_equal(g.edge_features[:, :2], delta)
    assert np.allclose(g.edge_features[:, 2], np.hypot(delta[:, 0], delta[:, 1]), rtol=1e-15)
    assert not np.any(g.receivers == g.senders)
    assert np.all(np.bincount(g.receivers, minlength=len(pos)) == min(k, len(pos) - 1))


def test_translation_invariant_edges_and_features():
    pos = np.random.default_rng(5).uniform(0, 7, size=(20, 2))
    a, b = knn_graph(pos), knn_graph(pos + np.array([0.5, -3.25]))
    assert edges(a) == edges(b)
    assert np.allclose(a.edge_features, b.edge_features, atol=1e-13)


def test_merge_offsets_node_ids():
    rng = np.random.default_rng(2)
    g1, g2 = knn_graph(rng.uniform(size=(3, 2)), 2), knn_graph(rng.uniform(size=(4, 2)), 2)
    m = merge_graphs([g1, g2])
    assert m.n == 7 and m.num_edges == g1.num_edges + g2.num_edges
    assert np.array_equal(m.receivers[g1.num_edges :], g2.receivers + 3)
    assert np.array_equal(m.senders[g1.num_edges :], g2.senders + 3)
    assert np.array_equal(m.edge_features, np.concatenate([g1.edge_features, g2.edge_features]))
