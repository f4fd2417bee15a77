from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from stdgnn.jrwalk import (
    Encoding,
    WalkError,
    build_alias,
    build_transition,
    jrwalk,
    walk_all,
    walks_to_tensor,
    write_walks_csv,
)

from conftest import random_graph, ring_graph, snapshot, total_variation


# alias tables ---------------------------------------------------------------

def test_alias_singleton():
    t = build_alias([1.0])
    assert t.prob.tolist() == [1.0]
    assert t.sample(np.random.default_rng(0)) == 0


def test_alias_uniform_pair():
    np.testing.assert_allclose(build_alias([0.5, 0.5]).reconstruct(), [0.5, 0.5], atol=1e-12)


def test_alias_draws_match_small_distribution():
    p = np.array([0.2, 0.3, 0.5])
    draws = build_alias(p).sample(np.random.default_rng(7), 10**6)
    assert total_variation(np.bincount(draws, minlength=3) / 10**6, p) < 0.01


@pytest.mark.parametrize("bad", [[0.5, -0.1, 0.6], [0.0, 0.0], [], [np.nan, 1.0]])
def test_alias_rejects_bad_input(bad):
    with pytest.raises(WalkError):
        build_alias(bad)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.0, 1.0, allow_nan=False), min_size=1, max_size=64).filter(lambda v: sum(v) > 1e-6))
def test_alias_reconstruction(values):
    p = np.asarray(values) / np.sum(values)
    t = build_alias(p)
    assert len(t.prob) == len(t.alias) == t.n == len(p)
    assert np.all((t.prob >= 0) & (t.prob <= 1))
    assert np.max(np.abs(t.reconstruct() - p)) < 1e-9


def test_alias_chi_square():
    rng = np.random.default_rng(11)
    for trial in range(20):
        n = int(rng.integers(2, 40))
        p = rng.dirichlet(np.ones(n))
        counts = np.bincount(build_alias(p).sample(np.random.default_rng(trial), 10**6), minlength=n)
        assert stats.chisquare(counts, 10**6 * p).pvalue > 0.001


# transition tables ----------------------------------------------------------

def test_edge_preference_by_hand():
    tables = build_transition(snapshot({(0, 1): 1.0, (0, 2): 3.0}, 3))
    assert tables.neighbors[0].tolist() == [1, 2]
    np.testing.assert_allclose(tables.edge_probs[0], [0.25, 0.75])


def test_equal_degree_neighbours_give_uniform_degree_preference():
    tables = build_transition(snapshot({(0, 1): 1.0, (0, 2): 5.0, (0, 3): 2.0}, 4))
    np.testing.assert_allclose(tables.degree_probs[0], [1 / 3] * 3)


def test_single_neighbour():
    tables = build_transition(snapshot({(0, 1): 4.0}, 2))
    assert tables.edge_probs[0].tolist() == [1.0] == tables.degree_probs[0].tolist()
    assert tables.sinks.tolist() == [False, True]


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 25), st.integers(0, 10**6))
def test_transition_rows_sum_to_one(n, seed):
    tables = build_transition(random_graph(n, seed, min_out=0))
    for nb, pe, pv in zip(tables.neighbors, tables.edge_probs, tables.degree_probs):
        if len(nb):
            assert abs(pe.sum() - 1) < 1e-9 and abs(pv.sum() - 1) < 1e-9


# walks ----------------------------------------------------------------------

# Edges implied by the three example walks {1,2,3,4,2}, {1,2,4,5,2}, {1,4,3,2,5}
# (nodes renumbered from 0).
EXAMPLE_WALKS = [[1, 2, 3, 4, 2], [1, 2, 4, 5, 2], [1, 4, 3, 2, 5]]


def example_graph():
    edges = {}
    for walk in EXAMPLE_WALKS:
        for u, v in zip(walk, walk[1:]):
            edges[(u - 1, v - 1)] = edges.get((u - 1, v - 1), 0.0) + 1.0
    return snapshot(edges, 5)


def test_example_graph_walks():
    snap = example_graph()
    ws = jrwalk(build_transition(snap), 0, r=3, l=5, alpha=0.7, rng=np.random.default_rng(1))
    assert ws.walks.shape == (3, 5)
    assert (ws.walks[:, 0] == 0).all()
    dense = snap.adjacency.toarray()
    for walk in ws.walks:
        assert all(dense[u, v] > 0 for u, v in zip(walk, walk[1:]))
    # the example sequences themselves are walks of this graph
    for walk in EXAMPLE_WALKS:
        assert all(dense[u - 1, v - 1] > 0 for u, v in zip(walk, walk[1:]))


def test_chain_with_alpha_one():
    tables = build_transition(snapshot({(0, 1): 1.0, (1, 2): 1.0}, 3))
    ws = jrwalk(tables, 0, r=4, l=6, alpha=1.0, rng=np.random.default_rng(0))
    assert ws.walks.tolist() == [[0, 1, 2, 3, 3, 3]] * 4


def test_degree_preference_first_step():
    # node 0 -> {1, 2}; deg(1) = 2, deg(2) = 6
    edges = {(0, 1): 1.0, (0, 2): 1.0, (1, 3): 1.0}
    for k in range(3, 8):
        edges[(2, k)] = 1.0
    tables = build_transition(snapshot(edges, 8))
    np.testing.assert_allclose(tables.degree_probs[0], [0.25, 0.75])
    ws = jrwalk(tables, 0, r=10**5, l=2, alpha=0.0, rng=np.random.default_rng(3))
    freq = np.array([(ws.walks[:, 1] == 1).mean(), (ws.walks[:, 1] == 2).mean()])
    assert total_variation(freq, [0.25, 0.75]) < 0.01


def transition_frequencies(tables, walks, pad):
    counts = {}
    for walk in walks:
        for u, v in zip(walk, walk[1:]):
            if v == pad:
                break
            counts.setdefault(int(u), {}).setdefault(int(v), 0)
            counts[int(u)][int(v)] += 1
    out = {}
    for u, row in counts.items():
        nb = tables.neighbors[u]
        c = np.array([row.get(int(j), 0) for j in nb], dtype=float)
        assert c.sum() == sum(row.values()), "walk used a non-edge"
        out[u] = c / c.sum()
    return out


@pytest.mark.parametrize("alpha,attr", [(1.0, "edge_probs"), (0.0, "degree_probs")])
def test_single_strategy_limits(alpha, attr):
    tables = build_transition(ring_graph(20, 5))
    walks = np.concatenate([ws.walks for ws in walk_all(tables, r=5000, l=20, alpha=alpha, seed=2)])
    assert len(walks) == 10**5
    freqs = transition_frequencies(tables, walks, tables.pad)
    assert len(freqs) == 20
    for u, f in freqs.items():
        assert total_variation(f, getattr(tables, attr)[u]) < 0.01


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 15), st.integers(0, 10**6), st.floats(0, 1), st.integers(1, 4), st.integers(1, 9))
def test_walks_follow_edges_and_pad_after_sinks(n, seed, alpha, r, l):
    snap = random_graph(n, seed, min_out=0)
    tables = build_transition(snap)
    dense = snap.adjacency.toarray()
    for ws in walk_all(tables, r, l, alpha, seed):
        assert ws.walks.shape == (r, l)
        assert (ws.walks[:, 0] == ws.start).all()
        for walk in ws.walks:
            real = walk[walk != tables.pad]
            assert (walk[: len(real)] == real).all(), "pad must be a suffix"
            assert all(dense[u, v] > 0 for u, v in zip(real, real[1:]))
            if len(real) < l:
                assert tables.sinks[real[-1]]


def test_parallel_matches_sequential():
    tables = build_transition(random_graph(40, 9))
    seq = walk_all(tables, 6, 15, 0.7, seed=4, slice_key=3, threads=1)
    par = walk_all(tables, 6, 15, 0.7, seed=4, slice_key=3, threads=8)
    assert all(np.array_equal(a.walks, b.walks) for a, b in zip(seq, par))


def test_seed_determinism_and_sensitivity():
    tables = build_transition(random_graph(10, 1))
    a = walk_all(tables, 3, 8, 0.7, seed=1)
    b = walk_all(tables, 3, 8, 0.7, seed=1)
    c = walk_all(tables, 3, 8, 0.7, seed=2)
    assert all(np.array_equal(x.walks, y.walks) for x, y in zip(a, b))
    assert not all(np.array_equal(x.walks, y.walks) for x, y in zip(a, c))


def test_bad_arguments():
    tables = build_transition(random_graph(5, 0))
    rng = np.random.default_rng(0)
    with pytest.raises(WalkError):
        jrwalk(tables, 7, 1, 3, 0.5, rng)
    with pytest.raises(WalkError):
        jrwalk(tables, 0, 1, 3, 1.5, rng)


# tensors --------------------------------------------------------------------

def test_identity_one_hot():
    from stdgnn.jrwalk import WalkSet

    wt = walks_to_tensor([WalkSet(0, np.array([[0]])), WalkSet(1, np.array([[1]]))], Encoding.ONE_HOT)
    np.testing.assert_array_equal(wt.data[:, 0, :], np.eye(2))


def test_one_hot_shape_and_pad_rows():
    tables = build_transition(random_graph(5, 2, min_out=0))
    walks = walk_all(tables, r=2, l=3, alpha=0.5, seed=0)
    wt = walks_to_tensor(walks, "onehot", a_v=5)
    assert wt.shape == (5, 6, 5)
    non_pad = sum(int((ws.walks != 5).sum()) for ws in walks)
    assert wt.data.sum() == non_pad
    assert set(np.unique(wt.data.sum(-1))) <= {0.0, 1.0}
    idx = walks_to_tensor(walks)
    assert idx.shape == (5, 6, 5) and idx.data.max() <= 5


def test_tensor_rejects_mixed_shapes():
    from stdgnn.jrwalk import WalkSet

    with pytest.raises(WalkError):
        walks_to_tensor([WalkSet(0, np.zeros((1, 2), int)), WalkSet(1, np.zeros((2, 2), int))])


def test_walk_csv(tmp_path):
    tables = build_transition(snapshot({(0, 1): 1.0}, 2))
    path = tmp_path / "w.csv"
    write_walks_csv(walk_all(tables, 1, 3, 1.0, 0), path, pad=tables.pad)
    assert path.read_text().splitlines() == [
        "node,walk_idx,step,visited", "0,0,0,0", "0,0,1,1", "0,0,2,-1", "1,0,0,1", "1,0,1,-1", "1,0,2,-1",
    ]
