import random
from itertools import combinations

import pytest
from hypothesis import given, settings, strategies as st

from granular.graph import (
    GraphError,
    TimedGraph,
    TimingClass,
    check_bft_gas,
    check_bft_gas_sources,
    check_bft_gps,
    check_cft_gas,
    check_cft_gas_components,
    check_cft_gps,
    check_diamond_f_source,
    figure4_graph,
    psync_diameter,
    set_reaches,
    sync_diameter,
    sync_reachable,
)

import oracles

S, P, X = TimingClass.SYNC, TimingClass.PSYNC, TimingClass.ASYNC
A_, B_, C_, D_ = 0, 1, 2, 3


def path4(*classes):
    return TimedGraph.from_edges(4, [(0, 1, classes[0]), (1, 2, classes[1]), (2, 3, classes[2])])


def as_oracle(g):
    return g.n, {frozenset(p): c.value for p, c in g.links.items()}


def random_graph(rng, n):
    return TimedGraph(n, {p: rng.choice(list(TimingClass)) for p in combinations(range(n), 2)})


class TestTimedGraph:
    def test_rejects_self_edge(self):
        with pytest.raises(GraphError):
            TimedGraph(3, {(1, 1): S})

    def test_rejects_duplicate_pair(self):
        with pytest.raises(GraphError):
            TimedGraph.from_edges(3, [(0, 1, "sync"), (1, 0, "psync")])

    def test_undirected(self):
        g = TimedGraph.from_edges(3, [(2, 0, "psync")])
        assert g.link_class(0, 2) is P and g.link_class(2, 0) is P
        assert g.link_class(0, 1) is None


class TestReachability:
    def test_faulty_intermediate_blocks(self):
        assert sync_reachable(path4(S, S, S), {B_}, A_) == {A_, B_}

    def test_no_faults_gives_component(self):
        g = TimedGraph.from_edges(5, [(0, 1, "sync"), (1, 2, "sync"), (3, 4, "sync"), (2, 3, "psync")])
        assert sync_reachable(g, set(), 0) == {0, 1, 2}
        assert sync_reachable(g, set(), 4) == {3, 4}

    def test_direct_edges_ignore_faults(self):
        assert sync_reachable(TimedGraph.complete(4), {1, 2}, 0) == {0, 1, 2, 3}

    def test_faulty_source_still_expands(self):
        assert sync_reachable(path4(S, S, S), {A_}, A_) == {0, 1, 2, 3}

    def test_invalid_node(self):
        with pytest.raises(GraphError):
            sync_reachable(path4(S, S, S), set(), 7)

    def test_set_reaches_union(self):
        assert set_reaches(path4(S, S, S), {B_, C_}, {A_, D_}) == {0, 1, 2, 3}

    def test_set_reaches_all_nodes(self):
        g = TimedGraph.complete(5, P)
        assert set_reaches(g, {0, 1}, range(5)) >= set(range(5))

    def test_set_reaches_psync_only(self):
        assert set_reaches(TimedGraph.complete(4, P), {2}, {0, 1}) == {0, 1}

    def test_set_reaches_empty(self):
        with pytest.raises(GraphError):
            set_reaches(path4(S, S, S), set(), [])

    @settings(max_examples=80, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 6), st.data())
    def test_monotone_and_self(self, seed, n, data):
        g = random_graph(random.Random(seed), n)
        F = data.draw(st.sets(st.integers(0, n - 1)))
        x = data.draw(st.integers(0, n - 1))
        for a in range(n):
            r = sync_reachable(g, F, a)
            assert a in r
            assert sync_reachable(g, F | {x}, a) <= r


class TestDiameters:
    def test_path_sync(self):
        assert sync_diameter(path4(S, S, S), 1) == 3

    def test_complete(self):
        for f in range(4):
            assert sync_diameter(TimedGraph.complete(5), f) == 1

    def test_fallback(self):
        assert sync_diameter(TimedGraph.complete(5), 1, fallback=True) == 4

    def test_psync_mixed_path(self):
        assert psync_diameter(path4(S, P, S), 0) == 3
        # the sync diameter only sees the two sync pieces
        assert sync_diameter(path4(S, P, S), 0) == 1

    def test_all_async_falls_back(self):
        assert psync_diameter(TimedGraph.complete(5, X), 1) == 4

    def test_figure4(self):
        assert psync_diameter(figure4_graph(), 0) == 3

    @pytest.mark.parametrize("seed", range(40))
    def test_matches_oracle(self, seed):
        rng = random.Random(seed)
        n = rng.randint(2, 5)
        g = random_graph(rng, n)
        gn, edges = as_oracle(g)
        for f in range(n // 2 + 1):
            for cpo in (False, True):
                for allowed, fn in ((("sync",), sync_diameter), (("sync", "psync"), psync_diameter)):
                    expect = oracles.diameter(gn, edges, f, allowed, cpo)
                    assert fn(g, f, correct_pairs_only=cpo) == (expect if expect else n - 1)


class TestCftGps:
    def test_majority_all_psync_holds(self):
        assert check_cft_gps(TimedGraph.complete(3, P), 1).holds

    def test_all_psync_minority_fails(self):
        v = check_cft_gps(TimedGraph.complete(4, P), 2)
        assert not v.holds
        F, A = v.witness
        assert len(A) == 2
        assert len(set_reaches(TimedGraph.complete(4, P), F, A)) < 3

    @pytest.mark.parametrize("n,f", [(4, 2), (5, 3), (6, 3)])
    def test_figure1_standins(self, n, f):
        # sync ring over the nodes: sparse graphs with f+1 < n <= 2f that pass
        ring = TimedGraph.from_edges(n, [(i, (i + 1) % n, "sync") for i in range(n)], default=P)
        assert check_cft_gps(ring, f).holds
        assert oracles.cft_gps(*as_oracle(ring), f)


class TestBftGps:
    def test_3f_plus_1_all_psync_holds(self):
        assert check_bft_gps(TimedGraph.complete(4, P), 1).holds

    def test_5_2_all_psync_fails(self):
        v = check_bft_gps(TimedGraph.complete(5, P), 2)
        assert not v.holds
        F, A = v.witness
        assert len(F) <= 2 and len(A) == 1

    def test_complete_sync(self):
        assert check_bft_gps(TimedGraph.complete(7), 2).holds

    def test_rejects_small_n(self):
        with pytest.raises(GraphError):
            check_bft_gps(TimedGraph.complete(4), 2)


class TestCftGas:
    def test_figure4_components(self):
        assert check_cft_gas_components(figure4_graph(), 2).holds

    def test_two_islands(self):
        g = TimedGraph.from_edges(4, [(0, 1, "sync"), (2, 3, "psync")], default=X)
        assert check_cft_gas_components(g, 1).holds
        v = check_cft_gas_components(g, 2)
        assert not v.holds and v.witness == ((),)
        assert not check_cft_gas(g, 2).holds

    def test_connected_diamond(self):
        g = TimedGraph.complete(5, P)
        for f in range(5):
            assert check_cft_gas_components(g, f).holds


class TestBftGas:
    def test_star_without_leaves_links(self):
        g = TimedGraph.from_edges(4, [(0, 1, "psync"), (0, 2, "psync"), (0, 3, "psync")], default=X)
        v = check_bft_gas_sources(g, 1)
        assert not v.holds and v.witness == ((0,),)
        assert not check_bft_gas(g, 1).holds

    def test_complete_psync(self):
        assert check_bft_gas(TimedGraph.complete(4, P), 1).holds

    def test_ring7(self):
        ring = TimedGraph.from_edges(7, [(i, (i + 1) % 7, "psync") for i in range(7)], default=X)
        assert check_bft_gas_sources(ring, 2).holds


class TestDiamondSource:
    def test_figure4_without_source(self):
        assert check_diamond_f_source(figure4_graph(), 2, {B_, C_}) is False

    def test_figure4_no_faults(self):
        assert check_diamond_f_source(figure4_graph(), 2, set()) is True

    def test_f_zero_vacuous(self):
        assert check_diamond_f_source(TimedGraph.complete(3, X), 0, set()) is True

    def test_too_many_faulty(self):
        with pytest.raises(GraphError):
            check_diamond_f_source(figure4_graph(), 1, {0, 1})

    def test_source_everywhere_implies_components(self):
        rng = random.Random(11)
        found = 0
        while found < 200:
            n = rng.randint(2, 6)
            f = rng.randint(0, n - 1)
            g = random_graph(rng, n)
            from granular.graph import fault_sets
            if all(check_diamond_f_source(g, f, F) for F in fault_sets(n, f)):
                found += 1
                assert check_cft_gas_components(g, f).holds


def test_checkers_invariant_under_relabeling():
    rng = random.Random(5)
    for _ in range(30):
        n = rng.randint(3, 5)
        g = random_graph(rng, n)
        f_cft = rng.randint(0, n - 1)
        f_bft = rng.randint(0, (n - 1) // 2)
        base = (
            check_cft_gps(g, f_cft).holds,
            check_cft_gas(g, f_cft).holds,
            check_bft_gps(g, f_bft).holds,
            check_bft_gas(g, f_bft).holds,
        )
        for _ in range(10):
            perm = list(range(n))
            rng.shuffle(perm)
            h = g.relabel(perm)
            assert base == (
                check_cft_gps(h, f_cft).holds,
                check_cft_gas(h, f_cft).holds,
                check_bft_gps(h, f_bft).holds,
                check_bft_gas(h, f_bft).holds,
            )


def test_failing_witness_rechecks():
    rng = random.Random(3)
    for _ in range(200):
        n = rng.randint(2, 5)
        g = random_graph(rng, n)
        f = rng.randint(0, n - 1)
        v = check_cft_gps(g, f)
        if not v.holds:
            F, A = v.witness
            assert len(F) <= f and len(A) == n - f
            assert len(set_reaches(g, F, A)) < f + 1
        if n >= 2 * f + 1:
            v = check_bft_gps(g, f)
            if not v.holds:
                F, A = v.witness
                assert not set(A) & set(F)
                assert len(set_reaches(g, F, A) - set(F)) < f + 1
