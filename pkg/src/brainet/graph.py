"""Partially directed acyclic graphs over dataset columns.

A :class:`Cpdag` mixes directed and undirected edges and records the
d-separation resolution reached so far (-1 for an untested complete graph)
plus the separating sets discovered when edges were removed. Refinement at
order n removes edges between pairs found conditionally independent given
some size-n subset of their adjacency, then orients: unshielded colliders
first, then iterated propagation rules that avoid new colliders and cycles.

Exogenous context nodes take part in tests and condition sets but never
receive new arrowheads.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

from .indtest import DEFAULT_THRESHOLD, CiTester

_NO_EDGE, _UNDIRECTED, _TO, _FROM = 0, 1, 2, 3


class GraphError(ValueError):
    """Violated CPDAG contract."""


def _pair(a: int, b: int) -> tuple:
    return (a, b) if a < b else (b, a)


class Cpdag:
    """Immutable partially directed acyclic graph.

    ``directed`` holds (parent, child) pairs, ``undirected`` holds (a, b)
    pairs with a < b. ``sepsets`` maps removed pairs to the condition set
    that separated them; it travels with the graph so later orientation
    passes can recognise colliders discovered at earlier orders.
    """

    __slots__ = ("nodes", "directed", "undirected", "resolution", "sepsets")

    def __init__(self, nodes, directed=(), undirected=(), resolution=-1, sepsets=None):
        self.nodes = frozenset(int(v) for v in nodes)
        directed = frozenset((int(a), int(b)) for a, b in directed)
        undirected = frozenset(_pair(int(a), int(b)) for a, b in undirected)
        for a, b in directed | undirected:
            if a == b:
                raise GraphError("self loops are not allowed")
            if a not in self.nodes or b not in self.nodes:
                raise GraphError(f"edge ({a}, {b}) references unknown node")
        for a, b in directed:
            if _pair(a, b) in undirected or (b, a) in directed:
                raise GraphError(f"conflicting edge records for ({a}, {b})")
        self.directed = directed
        self.undirected = undirected
        self.resolution = int(resolution)
        self.sepsets = dict(sepsets or {})
        if self._has_directed_cycle():
            raise GraphError("directed edges contain a cycle")

    # -- queries ---------------------------------------------------------

    def is_adjacent(self, a: int, b: int) -> bool:
        return (
            _pair(a, b) in self.undirected
            or (a, b) in self.directed
            or (b, a) in self.directed
        )

    def adjacency(self, v: int) -> set:
        out = {b for (a, b) in self.directed if a == v}
        out |= {a for (a, b) in self.directed if b == v}
        out |= {b if a == v else a for (a, b) in self.undirected if v in (a, b)}
        return out

    def parents(self, v: int) -> set:
        return {a for (a, b) in self.directed if b == v}

    def children(self, v: int) -> set:
        return {b for (a, b) in self.directed if a == v}

    def undirected_neighbors(self, v: int) -> set:
        return {b if a == v else a for (a, b) in self.undirected if v in (a, b)}

    def edge_count(self) -> int:
        return len(self.directed) + len(self.undirected)

    def skeleton(self) -> frozenset:
        return frozenset(
            {_pair(a, b) for a, b in self.directed} | set(self.undirected)
        )

    def _has_directed_cycle(self) -> bool:
        out = {v: set() for v in self.nodes}
        indeg = {v: 0 for v in self.nodes}
        for a, b in self.directed:
            out[a].add(b)
            indeg[b] += 1
        queue = [v for v in self.nodes if indeg[v] == 0]
        seen = 0
        while queue:
            v = queue.pop()
            seen += 1
            for w in out[v]:
                indeg[w] -= 1
                if indeg[w] == 0:
                    queue.append(w)
        return seen != len(self.nodes)

    def __eq__(self, other):
        if not isinstance(other, Cpdag):
            return NotImplemented
        return (
            self.nodes == other.nodes
            and self.directed == other.directed
            and self.undirected == other.undirected
        )

    def __hash__(self):
        return hash((self.nodes, self.directed, self.undirected))

    def __repr__(self):
        return (
            f"Cpdag(nodes={len(self.nodes)}, directed={len(self.directed)}, "
            f"undirected={len(self.undirected)}, resolution={self.resolution})"
        )

    # -- serialization ---------------------------------------------------

    def to_doc(self) -> dict:
        return {
            "nodes": sorted(self.nodes),
            "directed": sorted(list(e) for e in self.directed),
            "undirected": sorted(list(e) for e in self.undirected),
            "resolution": self.resolution,
            "sepsets": sorted(
                [a, b, sorted(s)] for (a, b), s in self.sepsets.items()
            ),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Cpdag":
        try:
            return cls(
                nodes=doc["nodes"],
                directed=[tuple(e) for e in doc["directed"]],
                undirected=[tuple(e) for e in doc["undirected"]],
                resolution=doc["resolution"],
                sepsets={
                    _pair(a, b): tuple(s) for a, b, s in doc.get("sepsets", [])
                },
            )
        except (KeyError, TypeError) as exc:
            raise GraphError(f"malformed CPDAG document: {exc}") from exc


@dataclass(frozen=True)
class Decomposition:
    """Split of the endogenous nodes into a descendant set and autonomous ancestor sets."""

    descendant: frozenset
    ancestors: tuple
    exogenous: frozenset

    @property
    def k(self) -> int:
        return len(self.ancestors)


def complete_graph(nodes) -> Cpdag:
    nodes = sorted(int(v) for v in nodes)
    if not nodes:
        raise GraphError("cannot build a complete graph over no nodes")
    return Cpdag(
        nodes=nodes,
        undirected=[(a, b) for a, b in combinations(nodes, 2)],
        resolution=-1,
    )


def max_indegree(graph: Cpdag, nodes) -> int:
    """Max over the nodes of incoming directed edges plus incident undirected edges.

    An undirected edge is a potential parent, so it counts; undercounting
    would end the recursion too early.
    """
    best = 0
    for v in nodes:
        deg = len(graph.parents(v)) + len(graph.undirected_neighbors(v))
        best = max(best, deg)
    return best


def find_autonomous(graph: Cpdag, endogenous, exogenous=frozenset()) -> Decomposition:
    """Descendant set plus connected ancestor components.

    The descendant set collects endogenous nodes without outgoing directed
    edges to other endogenous nodes; removing it (temporarily) exposes the
    unconnected sub-structures that become the ancestor sets.
    """
    endo = frozenset(int(v) for v in endogenous)
    descendant = frozenset(
        v for v in endo if not any(w in endo for w in graph.children(v))
    )
    rest = endo - descendant
    components = []
    remaining = set(rest)
    while remaining:
        start = min(remaining)
        comp = {start}
        stack = [start]
        while stack:
            v = stack.pop()
            for w in graph.adjacency(v):
                if w in remaining and w not in comp:
                    comp.add(w)
                    stack.append(w)
        remaining -= comp
        components.append(frozenset(comp))
    components.sort(key=min)
    return Decomposition(
        descendant=descendant,
        ancestors=tuple(components),
        exogenous=frozenset(int(v) for v in exogenous),
    )


# -- refinement ------------------------------------------------------------


def _adj_matrix(graph: Cpdag):
    """Mutable adjacency map used during orientation."""
    adj = {v: {} for v in graph.nodes}
    for a, b in graph.undirected:
        adj[a][b] = _UNDIRECTED
        adj[b][a] = _UNDIRECTED
    for a, b in graph.directed:
        adj[a][b] = _TO
        adj[b][a] = _FROM
    return adj


def _would_cycle(adj, a: int, b: int) -> bool:
    """True if orienting a -> b closes a directed cycle (b reaches a)."""
    stack, seen = [b], {b}
    while stack:
        v = stack.pop()
        if v == a:
            return True
        for w, kind in adj[v].items():
            if kind == _TO and w not in seen:
                seen.add(w)
                stack.append(w)
    return False


def _orient(adj, a: int, b: int) -> None:
    adj[a][b] = _TO
    adj[b][a] = _FROM


def _orient_colliders(adj, sepsets, endogenous) -> None:
    """Direct unshielded triples a - c - b as a -> c <- b when c separates nothing.

    Only undirected half-edges are turned into arrowheads; existing directed
    edges are never flipped, and arrowheads never point into exogenous nodes.
    """
    for c in sorted(endogenous):
        neighbors = sorted(v for v, kind in adj[c].items() if kind != _NO_EDGE)
        for a, b in combinations(neighbors, 2):
            if b in adj[a] or a in adj[b]:
                continue  # shielded
            sep = sepsets.get(_pair(a, b))
            if sep is None or c in sep:
                continue
            if adj[a].get(c) == _UNDIRECTED and not _would_cycle(adj, a, c):
                _orient(adj, a, c)
            if adj[b].get(c) == _UNDIRECTED and not _would_cycle(adj, b, c):
                _orient(adj, b, c)


def _propagate_orientations(adj, endogenous) -> None:
    """Iterate the three standard propagation rules until a fixpoint.

    Each rule only directs currently undirected edges, avoids creating new
    unshielded colliders or directed cycles, and never points an arrowhead
    at an exogenous node.
    """
    endo = set(endogenous)

    def undirected_pairs():
        return sorted(
            (a, b)
            for a in adj
            for b, kind in adj[a].items()
            if kind == _UNDIRECTED and b in endo
        )

    changed = True
    while changed:
        changed = False
        for a, b in undirected_pairs():
            if adj[a].get(b) != _UNDIRECTED:
                continue
            # rule 1: x -> a, a - b, x and b non-adjacent  =>  a -> b
            rule1 = any(
                kind == _FROM and b not in adj[x] and x != b
                for x, kind in adj[a].items()
            )
            # rule 2: a -> x -> b with a - b  =>  a -> b
            rule2 = any(
                kind == _TO and adj[x].get(b) == _TO for x, kind in adj[a].items()
            )
            # rule 3: a - x, a - y, x -> b, y -> b, x and y non-adjacent  =>  a -> b
            rule3 = False
            spouses = [
                x
                for x, kind in adj[a].items()
                if kind == _UNDIRECTED and adj[x].get(b) == _TO
            ]
            for x, y in combinations(sorted(spouses), 2):
                if y not in adj[x]:
                    rule3 = True
                    break
            if (rule1 or rule2 or rule3) and not _would_cycle(adj, a, b):
                _orient(adj, a, b)
                changed = True


def increase_resolution(
    graph: Cpdag,
    n: int,
    dataset,
    threshold: float | None = None,
    endogenous=None,
    exogenous=frozenset(),
    tester: CiTester | None = None,
) -> Cpdag:
    """Refine the graph from resolution n-1 to n against the given data.

    Every connected pair (endogenous, endogenous-or-exogenous) is tested for
    independence given size-n subsets of the pair's adjacency, enumerated in
    lexicographic order and stopping at the first separating set. Removals
    are batched; orientation runs afterwards.
    """
    if graph.resolution != n - 1:
        raise GraphError(
            f"graph has resolution {graph.resolution}; expected {n - 1} "
            f"before refining to order {n}"
        )
    endo = frozenset(graph.nodes if endogenous is None else endogenous)
    exo = frozenset(exogenous)
    if tester is None:
        tester = CiTester(
            threshold=DEFAULT_THRESHOLD if threshold is None else threshold
        )

    pairs = []
    for x in sorted(endo):
        for y in sorted(graph.adjacency(x)):
            if y in endo and y <= x:
                continue  # endogenous pair handled once, from its low end
            if y not in endo and y not in exo:
                continue
            pairs.append((x, y))

    sepsets = dict(graph.sepsets)
    removals = set()
    for x, y in pairs:
        candidates = sorted((graph.adjacency(x) | graph.adjacency(y)) - {x, y})
        for subset in combinations(candidates, n):
            decision = tester.is_independent(dataset, x, y, subset)
            if decision.independent:
                removals.add(_pair(x, y))
                sepsets[_pair(x, y)] = tuple(subset)
                break

    directed = {e for e in graph.directed if _pair(*e) not in removals}
    undirected = {e for e in graph.undirected if e not in removals}

    adj = _adj_matrix(
        Cpdag(graph.nodes, directed, undirected, graph.resolution, sepsets)
    )
    _orient_colliders(adj, sepsets, endo)
    _propagate_orientations(adj, endo)

    new_directed, new_undirected = set(), set()
    for a in adj:
        for b, kind in adj[a].items():
            if kind == _TO:
                new_directed.add((a, b))
            elif kind == _UNDIRECTED and a < b:
                new_undirected.add((a, b))
    return Cpdag(
        nodes=graph.nodes,
        directed=new_directed,
        undirected=new_undirected,
        resolution=n,
        sepsets=sepsets,
    )
