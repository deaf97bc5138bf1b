from itertools import permutations

import numpy as np
import pytest

from brainet.data import Dataset
from brainet.graph import (
    Cpdag,
    GraphError,
    complete_graph,
    find_autonomous,
    increase_resolution,
    max_indegree,
)
from brainet.indtest import CiTester

from oracles import d_separated, reference_pc


def xor_dataset(n=20000, seed=0, p=0.7):
    """Collider c = a XOR b. Skewed inputs keep the parent-child margins
    dependent; with fair inputs every pair is marginally independent and the
    whole skeleton legitimately empties at order 0."""
    rng = np.random.default_rng(seed)
    a = (rng.random(n) < p).astype(np.int64)
    b = (rng.random(n) < p).astype(np.int64)
    return Dataset(
        column_names=("a", "b", "c"),
        cardinalities=np.array([2, 2, 2]),
        values=np.stack([a, b, a ^ b], axis=1),
    )


class TestCpdag:
    def test_complete_graph_edge_counts(self):
        assert complete_graph(range(3)).edge_count() == 3
        assert complete_graph([0]).edge_count() == 0
        assert complete_graph(range(5)).edge_count() == 10

    def test_complete_graph_rejects_empty(self):
        with pytest.raises(GraphError):
            complete_graph([])

    def test_cycle_rejected(self):
        with pytest.raises(GraphError, match="cycle"):
            Cpdag(nodes=[0, 1, 2], directed=[(0, 1), (1, 2), (2, 0)])

    def test_conflicting_edges_rejected(self):
        with pytest.raises(GraphError):
            Cpdag(nodes=[0, 1], directed=[(0, 1)], undirected=[(0, 1)])

    def test_self_loop_rejected(self):
        with pytest.raises(GraphError):
            Cpdag(nodes=[0], undirected=[(0, 0)])

    def test_serialization_round_trip(self):
        g = Cpdag(
            nodes=[0, 1, 2, 3],
            directed=[(0, 2), (1, 2)],
            undirected=[(2, 3)],
            resolution=1,
            sepsets={(0, 1): ()},
        )
        back = Cpdag.from_doc(g.to_doc())
        assert back == g
        assert back.resolution == g.resolution
        assert back.sepsets == g.sepsets


class TestMaxIndegree:
    def test_collider(self):
        g = Cpdag(nodes=[0, 1, 2], directed=[(0, 2), (1, 2)])
        assert max_indegree(g, [2]) == 2

    def test_edgeless(self):
        g = Cpdag(nodes=[0, 1])
        assert max_indegree(g, [0, 1]) == 0

    def test_undirected_counts_as_potential_parent(self):
        hub = Cpdag(nodes=range(5), undirected=[(0, i) for i in range(1, 5)])
        assert max_indegree(hub, [0]) == 4


class TestIncreaseResolution:
    def test_xor_recovers_collider(self):
        ds = xor_dataset()
        g0 = complete_graph(range(3))
        g1 = increase_resolution(g0, 0, ds, threshold=0.01)
        assert not g1.is_adjacent(0, 1)  # marginally independent pair removed
        assert g1.directed == frozenset({(0, 2), (1, 2)})
        # the collider survives the order-1 pass (c blocks nothing)
        g2 = increase_resolution(g1, 1, ds, threshold=0.01)
        assert g2.directed == frozenset({(0, 2), (1, 2)})
        assert g2.resolution == 1

    def test_fair_xor_empties_at_order_zero(self):
        ds = xor_dataset(p=0.5)
        g1 = increase_resolution(complete_graph(range(3)), 0, ds, threshold=0.01)
        assert g1.edge_count() == 0

    def test_matches_reference_pc_on_same_decisions(self):
        ds = xor_dataset(seed=3)
        tester = CiTester(threshold=0.01)

        def is_indep(x, y, S):
            return tester.is_independent(ds, x, y, S).independent

        ref_directed, ref_undirected = reference_pc(range(3), is_indep, max_order=1)
        g = complete_graph(range(3))
        for order in (0, 1):
            g = increase_resolution(g, order, ds, threshold=0.01)
        assert g.directed == frozenset(ref_directed)
        assert g.undirected == frozenset(ref_undirected)

    def test_independent_triple_goes_empty(self):
        rng = np.random.default_rng(1)
        ds = Dataset(
            column_names=("a", "b", "c"),
            cardinalities=np.array([2, 2, 2]),
            values=rng.integers(0, 2, size=(5000, 3)),
        )
        g1 = increase_resolution(complete_graph(range(3)), 0, ds, threshold=0.01)
        assert g1.edge_count() == 0

    def test_edgeless_graph_unchanged(self):
        ds = xor_dataset(n=100)
        g = Cpdag(nodes=[0, 1, 2], resolution=0)
        out = increase_resolution(g, 1, ds, threshold=0.01)
        assert out.edge_count() == 0
        assert out.resolution == 1

    def test_resolution_precondition(self):
        ds = xor_dataset(n=100)
        with pytest.raises(GraphError, match="resolution"):
            increase_resolution(complete_graph(range(3)), 1, ds, threshold=0.01)

    def test_skeleton_never_grows(self):
        ds = xor_dataset(seed=5)
        g = complete_graph(range(3))
        previous = g.skeleton()
        for order in (0, 1):
            g = increase_resolution(g, order, ds, threshold=0.01)
            assert g.skeleton() <= previous
            previous = g.skeleton()

    def test_label_permutation_equivariance(self):
        """With oracle decisions, relabeling nodes relabels the result."""
        parents = {2: (0, 1), 3: (2,)}

        def run(perm):
            # permuted oracle: graph over relabeled nodes
            inverse = {perm[v]: v for v in range(4)}

            class OracleTester:
                def is_independent(self, dataset, x, y, S):
                    class D:
                        independent = d_separated(
                            parents, inverse[x], inverse[y], [inverse[s] for s in S]
                        )

                    return D()

            g = complete_graph(range(4))
            for order in (0, 1, 2):
                g = increase_resolution(
                    g, order, dataset=None, tester=OracleTester()
                )
            return g

        base = run({v: v for v in range(4)})
        for perm_tuple in permutations(range(4)):
            perm = dict(enumerate(perm_tuple))
            permuted = run(perm)
            expected_directed = {(perm[a], perm[b]) for a, b in base.directed}
            expected_undirected = {
                tuple(sorted((perm[a], perm[b]))) for a, b in base.undirected
            }
            assert permuted.directed == frozenset(expected_directed)
            assert permuted.undirected == frozenset(expected_undirected)

    def test_acyclicity_preserved(self):
        ds = xor_dataset(seed=7)
        g = complete_graph(range(3))
        for order in (0, 1):
            g = increase_resolution(g, order, ds, threshold=0.01)
            assert not g._has_directed_cycle()


class TestFindAutonomous:
    def test_collider_decomposition(self):
        g = Cpdag(nodes=[0, 1, 2], directed=[(0, 2), (1, 2)], resolution=0)
        d = find_autonomous(g, endogenous=[0, 1, 2])
        assert d.descendant == frozenset({2})
        assert d.ancestors == (frozenset({0}), frozenset({1}))
        assert d.k == 2

    def test_chain_decomposition(self):
        g = Cpdag(nodes=[0, 1, 2], directed=[(0, 1), (1, 2)], resolution=0)
        d = find_autonomous(g, endogenous=[0, 1, 2])
        assert d.descendant == frozenset({2})
        assert d.ancestors == (frozenset({0, 1}),)
        assert d.k == 1

    def test_edgeless_graph(self):
        g = Cpdag(nodes=[0, 1])
        d = find_autonomous(g, endogenous=[0, 1])
        assert d.descendant == frozenset({0, 1})
        assert d.k == 0

    def test_ancestor_sets_are_autonomous(self):
        """Definition check: all parents of ancestor-set members stay inside
        the set (or in the exogenous context, empty here)."""
        rng = np.random.default_rng(11)
        for trial in range(30):
            nodes = list(range(6))
            directed, undirected = set(), set()
            for a in nodes:
                for b in nodes:
                    if a < b and rng.random() < 0.3:
                        if rng.random() < 0.5:
                            directed.add((a, b))  # a < b keeps it acyclic
                        else:
                            undirected.add((a, b))
            g = Cpdag(nodes=nodes, directed=directed, undirected=undirected)
            d = find_autonomous(g, endogenous=nodes)
            assert d.descendant  # an acyclic graph always has a sink
            for group in d.ancestors:
                for v in group:
                    assert g.parents(v) <= set(group)

    def test_undirected_edges_do_not_count_as_outgoing(self):
        g = Cpdag(nodes=[0, 1], undirected=[(0, 1)])
        d = find_autonomous(g, endogenous=[0, 1])
        assert d.descendant == frozenset({0, 1})
