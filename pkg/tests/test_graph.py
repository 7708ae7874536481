import numpy as np
import pytest

from dynembed import Event, GraphState, init_state
from dynembed.graph import GraphStateError


def _pair_adjacency(n, *edges):
    a = np.zeros((n, n), dtype=int)
    for u, v in edges:
        a[u, v] = a[v, u] = 1
    return a


class TestInitState:
    def test_two_neighbors_get_half_each(self):
        state = init_state(_pair_adjacency(3, (0, 1), (0, 2)))
        nbrs, vals = state.s_entries(0)
        assert nbrs == [1, 2]
        assert vals.tolist() == [0.5, 0.5]

    def test_isolated_row_is_zero(self):
        state = init_state(_pair_adjacency(3, (0, 1)))
        nbrs, vals = state.s_entries(2)
        assert nbrs == [] and vals.size == 0
        assert np.all(state.s_matrix()[2] == 0.0)

    def test_three_cycle_rows(self):
        # every node has two neighbors, so each row holds 1/2 twice
        state = init_state(_pair_adjacency(3, (0, 1), (1, 2), (0, 2)))
        s = state.s_matrix()
        for u in range(3):
            expected = np.full(3, 0.5)
            expected[u] = 0.0
            assert np.array_equal(s[u], expected)
            assert np.sum(s[u]) == 1.0

    def test_rejects_asymmetric(self):
        a = np.zeros((2, 2), dtype=int)
        a[0, 1] = 1
        with pytest.raises(GraphStateError, match="symmetric"):
            init_state(a)

    def test_rejects_nonzero_diagonal(self):
        a = np.eye(3, dtype=int)
        with pytest.raises(GraphStateError, match="diagonal"):
            init_state(a)


class TestApplyEvent:
    def test_communication_without_edge_changes_nothing(self):
        state = init_state(_pair_adjacency(4, (0, 1)))
        before_a, before_s = state.adjacency_matrix(), state.s_matrix()
        state.apply_event(Event(2, 3, 1.0, 0, 1), lam=0.7)
        assert np.array_equal(state.adjacency_matrix(), before_a)
        assert np.array_equal(state.s_matrix(), before_s)

    def test_association_adds_edge_both_ways(self):
        state = GraphState(3)
        state.apply_event(Event(0, 1, 1.0, 0, 0), lam=0.2)
        a = state.adjacency_matrix()
        assert a[0, 1] == 1 and a[1, 0] == 1

    def test_communication_on_edge_renormalizes(self):
        # node 0 has neighbors {1, 2} with a uniform row; a communication
        # with node 1 at rate 0.3 sets that entry to 1/2 + 0.3 and the
        # row renormalizes to (0.8, 0.5) / 1.3
        state = init_state(_pair_adjacency(3, (0, 1), (0, 2)))
        state.apply_event(Event(0, 1, 1.0, 1, 1), lam=0.3)
        nbrs, vals = state.s_entries(0)
        assert nbrs == [1, 2]
        np.testing.assert_allclose(vals, [0.8 / 1.3, 0.5 / 1.3], rtol=0, atol=1e-15)
        # node 1's side: its single neighbor is 0, so the row stays (1.0)
        _, vals1 = state.s_entries(1)
        assert vals1.tolist() == [1.0]

    def test_new_association_shrinks_old_entries(self):
        # node 0 starts with the single neighbor 1 (entry 1.0); a new
        # association with 2 drops the uniform share from 1 to 1/2, so the
        # old entry loses x = 1/2 and the new entry becomes 1/2 + 0.2
        state = init_state(_pair_adjacency(3, (0, 1)))
        state.apply_event(Event(0, 2, 1.0, 0, 0), lam=0.2)
        nbrs, vals = state.s_entries(0)
        assert nbrs == [1, 2]
        np.testing.assert_allclose(vals, [0.5 / 1.2, 0.7 / 1.2], rtol=0, atol=1e-15)
        # node 2 had no neighbors, so nothing shrinks; its row is (1.0)
        nbrs2, vals2 = state.s_entries(2)
        assert nbrs2 == [0]
        assert vals2.tolist() == [1.0]

    def test_reassociation_rejected(self):
        state = init_state(_pair_adjacency(2, (0, 1)))
        with pytest.raises(GraphStateError, match="already-associated"):
            state.apply_event(Event(0, 1, 1.0, 1, 0), lam=0.1)

    def test_inconsistent_link_flag_rejected(self):
        state = GraphState(3)
        with pytest.raises(GraphStateError, match="disagrees"):
            state.apply_event(Event(0, 1, 1.0, 1, 1), lam=0.1)


class TestNeighborhood:
    def test_empty_graph(self):
        assert GraphState(4).neighborhood(0) == set()

    def test_star_center(self):
        state = init_state(_pair_adjacency(4, (0, 1), (0, 2), (0, 3)))
        assert state.neighborhood(0) == {1, 2, 3}

    def test_association_makes_mutual_neighbors(self):
        state = GraphState(3)
        state.apply_event(Event(0, 2, 1.0, 0, 0), lam=0.0)
        assert state.neighborhood(0) == {2}
        assert state.neighborhood(2) == {0}

    def test_out_of_range(self):
        with pytest.raises(GraphStateError):
            GraphState(3).neighborhood(5)


class TestGrow:
    def test_appends_zero_rows(self):
        state = init_state(_pair_adjacency(3, (0, 1)))
        state.grow(5)
        assert state.n == 5
        s = state.s_matrix()
        assert np.all(s[3:] == 0.0) and np.all(s[:, 3:] == 0.0)
        assert state.neighborhood(4) == set()

    def test_grow_to_same_size_is_identity(self):
        state = init_state(_pair_adjacency(3, (0, 1), (1, 2)))
        before = state.s_matrix()
        state.grow(3)
        assert np.array_equal(state.s_matrix(), before)

    def test_shrink_rejected(self):
        with pytest.raises(GraphStateError):
            GraphState(3).grow(2)

    def test_association_to_grown_node(self):
        state = init_state(_pair_adjacency(3, (0, 1)))
        state.grow(4)
        state.apply_event(Event(3, 0, 1.0, 0, 0), lam=0.5)
        nbrs, vals = state.s_entries(3)
        assert nbrs == [0]
        assert vals.tolist() == [1.0]  # single entry renormalizes to 1
        assert np.isclose(np.sum(state.s_entries(0)[1]), 1.0)


def _random_replay(state: GraphState, n_events: int, seed: int):
    """Valid random event stream: associations on non-edges, mixed comms."""
    rng = np.random.default_rng(seed)
    n = state.n
    for i in range(n_events):
        u, v = rng.choice(n, size=2, replace=False)
        u, v = int(u), int(v)
        linked = v in state.neighborhood(u)
        if linked:
            k = 1
        else:
            k = 0 if rng.random() < 0.15 else 1
        lam = float(rng.uniform(0.0, 2.0))
        yield Event(u, v, float(i), 1 if linked else 0, k), lam


class TestInvariants:
    def test_replay_preserves_stochastic_rows(self):
        state = GraphState(30)
        prev_edges = 0
        prev_a = state.adjacency_matrix()
        for step, (e, lam) in enumerate(_random_replay(state, 2000, seed=11)):
            state.apply_event(e, lam)
            for j in (e.u, e.v):
                _, vals = state.s_entries(j)
                if vals.size:
                    assert abs(np.sum(vals) - 1.0) <= 1e-9
                    assert np.all(vals >= 0.0)
            if step % 250 == 0:
                a = state.adjacency_matrix()
                s = state.s_matrix()
                assert np.all((s > 0) <= (a > 0)), "S support escaped A"
                assert np.all(a >= prev_a), "adjacency shrank"
                prev_a = a
                assert int(a.sum()) >= prev_edges
                prev_edges = int(a.sum())

    def test_dense_and_sparse_are_bit_identical(self):
        dense = GraphState(25, dense=True)
        sparse = GraphState(25, dense=False)
        for (e, lam), (e2, lam2) in zip(_random_replay(dense, 800, seed=3),
                                        _random_replay(sparse, 800, seed=3)):
            assert e == e2 and lam == lam2
            dense.apply_event(e, lam)
            sparse.apply_event(e2, lam2)
        assert np.array_equal(dense.s_matrix(), sparse.s_matrix())
        assert np.array_equal(dense.adjacency_matrix(), sparse.adjacency_matrix())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        state = GraphState(12)
        for e, lam in _random_replay(state, 300, seed=7):
            state.apply_event(e, lam)
        path = str(tmp_path / "graph.ckpt")
        state.save(path)
        loaded = GraphState.load(path)
        assert np.array_equal(loaded.s_matrix(), state.s_matrix())
        assert np.array_equal(loaded.adjacency_matrix(), state.adjacency_matrix())

    def test_bad_header(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_text("something else\n")
        with pytest.raises(ValueError, match="checkpoint"):
            GraphState.load(str(p))
