"""Communication graphs, schedules, and generation policies."""

import numpy as np
import pytest

from ppvc import network as net
from ppvc.errors import InfeasiblePolicy


def floyd_warshall_reachable(adj):
    """Reference reachability closure, O(n^3) and obviously correct."""
    n = adj.shape[0]
    reach = adj.copy() | np.eye(n, dtype=bool)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                reach[i, j] = reach[i, j] or (reach[i, k] and reach[k, j])
    return reach


class TestDiGraph:
    def test_rejects_self_loop(self):
        with pytest.raises(ValueError):
            net.DiGraph(n=3, edges=frozenset({(1, 1)}))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            net.DiGraph(n=3, edges=frozenset({(0, 3)}))

    def test_in_neighbors_sorted(self):
        gr = net.DiGraph(n=4, edges=frozenset({(2, 0), (1, 0), (3, 1)}))
        assert gr.in_neighbors(0) == [1, 2]
        assert gr.in_neighbors(1) == [3]
        assert gr.in_neighbors(2) == []

    def test_union(self):
        a = net.DiGraph(n=3, edges=frozenset({(0, 1)}))
        b = net.DiGraph(n=3, edges=frozenset({(1, 2)}))
        u = net.union_graph([a, b])
        assert u.edges == {(0, 1), (1, 2)}


class TestReachability:
    def test_cycle_is_jointly_reachable(self):
        gr = net.DiGraph(n=3, edges=frozenset({(0, 1), (1, 2), (2, 0)}))
        assert net.is_jointly_reachable([gr])

    def test_isolated_vertex_blocks(self):
        gr = net.DiGraph(n=3, edges=frozenset({(0, 1), (1, 0)}))
        assert not net.is_jointly_reachable([gr])

    def test_union_across_sequence(self):
        # each graph alone is disconnected; the union has a reachable root
        a = net.DiGraph(n=3, edges=frozenset({(0, 1)}))
        b = net.DiGraph(n=3, edges=frozenset({(2, 1)}))
        assert not net.is_jointly_reachable([a])
        assert net.is_jointly_reachable([a, b])

    def test_closure_matches_floyd_warshall(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            n = int(rng.integers(2, 9))
            adj = rng.random((n, n)) < 0.3
            np.fill_diagonal(adj, False)
            got = net._closure(adj)
            assert (got == floyd_warshall_reachable(adj)).all()

    def test_single_vertex(self):
        gr = net.DiGraph(n=1, edges=frozenset())
        assert net.is_jointly_reachable([gr])


class TestFaultCondition:
    def test_complete_ten_agents_two_faulty(self):
        # every normal agent sees 9 others, 2 faulty: 2 < 9/3 holds
        edges = frozenset((a, b) for a in range(10) for b in range(10)
                          if a != b)
        gr = net.DiGraph(n=10, edges=edges)
        assert net.fault_condition_ok(gr, {8, 9}, 2)

    def test_boundary_is_strict(self):
        # agent 0 has 6 in-neighbors; with 2 of them faulty, 2 < 6/3 is
        # false (strict), with 1 faulty it holds. The other normal agents
        # each hear from agent 0 so their own conditions stay satisfied.
        edges = frozenset((j, 0) for j in range(1, 7)) \
            | frozenset((0, j) for j in range(2, 7))
        gr = net.DiGraph(n=7, edges=edges)
        assert not net.fault_condition_ok(gr, {1, 2}, 2)
        assert net.fault_condition_ok(gr, {1}, 2)

    def test_empty_in_neighborhood_fails(self):
        gr = net.DiGraph(n=3, edges=frozenset({(0, 1)}))
        assert not net.fault_condition_ok(gr, set(), 2)

    def test_faulty_agents_not_checked(self):
        # the faulty agent itself has an empty in-neighborhood; the check
        # skips it, while an empty-in-neighborhood NORMAL agent fails
        edges = frozenset({(1, 2), (2, 1)})
        gr = net.DiGraph(n=3, edges=edges)
        assert net.fault_condition_ok(gr, {0}, 2)
        assert not net.fault_condition_ok(gr, set(), 2)


class TestGenerateSchedule:
    def test_complete_policy(self):
        rng = np.random.default_rng(0)
        sched = net.generate_schedule("complete", 10, [8, 9], 2, 5, rng=rng)
        assert sched.horizon == 5
        for gr in sched.graphs:
            assert len(gr.edges) == 10 * 9
        assert net.check_repeated_reachability(sched, [8, 9])

    def test_complete_policy_infeasible_with_many_faulty(self):
        rng = np.random.default_rng(0)
        with pytest.raises(InfeasiblePolicy):
            net.generate_schedule("complete", 7, [0, 1, 2], 2, 3, rng=rng)

    def test_random_k_in_respects_fault_condition(self):
        rng = np.random.default_rng(1)
        sched = net.generate_schedule("random_k_in", 10, [8, 9], 2, 40,
                                      rng=rng, k=9)
        for gr in sched.graphs:
            assert net.fault_condition_ok(gr, {8, 9}, 2)
            for i in range(8):
                assert len(gr.in_neighbors(i)) == 9
        assert net.check_repeated_reachability(sched, [8, 9])

    def test_random_k_in_infeasible_small_k(self):
        # k=3 with only 2 normal alternatives forces >= 1 faulty pick;
        # 1 < 3/3 fails
        rng = np.random.default_rng(2)
        with pytest.raises(InfeasiblePolicy):
            net.generate_schedule("random_k_in", 5, [3, 4], 2, 3, rng=rng, k=3)

    def test_random_subset_uniform_over_admissible(self):
        rng = np.random.default_rng(3)
        sched = net.generate_schedule("random_subset_in", 10, [8, 9], 2, 60,
                                      rng=rng)
        sizes = []
        for gr in sched.graphs:
            assert net.fault_condition_ok(gr, {8, 9}, 2)
            for i in range(8):
                nbrs = gr.in_neighbors(i)
                assert 1 <= len(nbrs) <= 9
                assert i not in nbrs
                sizes.append(len(nbrs))
        assert net.check_repeated_reachability(sched, [8, 9])
        # sizes concentrate near (n-1)/2 under the conditioned coin flips
        assert 3.5 < np.mean(sizes) < 6.0

    def test_random_subset_needs_two_normals(self):
        rng = np.random.default_rng(4)
        with pytest.raises(InfeasiblePolicy):
            net.generate_neighbor_arrays("random_subset_in", 3, [1, 2], 2,
                                         3, 1, rng)

    def test_one_faulty_contact_policy(self):
        rng = np.random.default_rng(5)
        sched = net.generate_schedule("all_normals_plus_one_faulty", 12,
                                      [10, 11], 3, 30, rng=rng)
        for gr in sched.graphs:
            assert net.fault_condition_ok(gr, {10, 11}, 3)
            for i in range(10):
                nbrs = gr.in_neighbors(i)
                assert len(nbrs) == 10
                faulty_picks = [j for j in nbrs if j >= 10]
                assert len(faulty_picks) == 1
                assert set(nbrs) - set(faulty_picks) \
                    == set(range(10)) - {i}

    def test_unknown_policy(self):
        rng = np.random.default_rng(6)
        with pytest.raises(ValueError):
            net.generate_schedule("ring", 5, [], 2, 3, rng=rng)

    def test_faulty_receive_no_edges_in_random_policies(self):
        rng = np.random.default_rng(7)
        sched = net.generate_schedule("random_subset_in", 6, [5], 2, 10,
                                      rng=rng)
        for gr in sched.graphs:
            assert gr.in_neighbors(5) == []

    def test_deterministic_given_rng_state(self):
        a = net.generate_schedule("random_subset_in", 8, [7], 2, 12,
                                  rng=np.random.default_rng(99))
        b = net.generate_schedule("random_subset_in", 8, [7], 2, 12,
                                  rng=np.random.default_rng(99))
        assert a.graphs == b.graphs

    def test_window_partition(self):
        rng = np.random.default_rng(8)
        sched = net.generate_schedule("random_subset_in", 8, [7], 2, 10,
                                      window_len=4, rng=rng)
        assert sched.windows == (0, 4, 8)
        assert sched.window_slices() == [(0, 4), (4, 8), (8, 10)]


class TestArrayForm:
    def test_counts_match_pad(self):
        rng = np.random.default_rng(12)
        nbrs, counts, _ = net.generate_neighbor_arrays(
            "random_subset_in", 9, [7, 8], 2, 20, 1, rng)
        T, nbar, width = nbrs.shape
        assert width == 8
        for t in range(T):
            for r in range(nbar):
                c = counts[t, r]
                assert (nbrs[t, r, :c] < 9).all()
                assert (nbrs[t, r, c:] == 9).all()
                ids = nbrs[t, r, :c]
                assert (np.diff(ids) > 0).all()

    def test_array_and_object_forms_agree(self):
        rng = np.random.default_rng(13)
        nbrs, counts, windows = net.generate_neighbor_arrays(
            "random_k_in", 8, [6, 7], 2, 6, 1, rng, k=6)
        sched = net.arrays_to_schedule(nbrs, counts, windows, 8, [6, 7])
        normal = [a for a in range(8) if a not in (6, 7)]
        for t in range(6):
            for r, i in enumerate(normal):
                assert sched.graphs[t].in_neighbors(i) \
                    == sorted(nbrs[t, r, :counts[t, r]].tolist())

    def test_digest_distinguishes_schedules(self):
        rng = np.random.default_rng(14)
        a = net.generate_neighbor_arrays("random_subset_in", 8, [7], 2, 5,
                                         1, rng)
        b = net.generate_neighbor_arrays("random_subset_in", 8, [7], 2, 5,
                                         1, rng)
        da = net.schedule_digest_arrays(a[0], a[1], 8, [7])
        db = net.schedule_digest_arrays(b[0], b[1], 8, [7])
        assert da != db
        assert da == net.schedule_digest_arrays(a[0], a[1], 8, [7])


class TestSerialization:
    def test_round_trip(self):
        rng = np.random.default_rng(21)
        sched = net.generate_schedule("random_subset_in", 7, [6], 2, 8,
                                      window_len=2, rng=rng)
        lines = net.schedule_to_lines(sched)
        back = net.schedule_from_lines(lines, 7, windows=sched.windows)
        assert back.graphs == sched.graphs
        assert back.windows == sched.windows

    def test_iteration_order_enforced(self):
        with pytest.raises(ValueError):
            net.schedule_from_lines(["1 0>1"], 3)

    def test_empty_graph_line(self):
        lines = ["0", "1 0>1"]
        sched = net.schedule_from_lines(lines, 3)
        assert sched.graphs[0].edges == frozenset()
        assert sched.graphs[1].edges == {(0, 1)}
