"""Recursive learning of the scored structure tree.

Each recursion site either exits into a scored leaf (when no conditional
independence of the target order can be tested, or the depth cap is hit) or
spawns ``s`` branches. A branch draws a bootstrap sample, refines the current
graph by one d-separation order, decomposes the endogenous nodes into
autonomous sets, and recurses: ancestors keep the caller's exogenous context,
the descendant additionally treats all ancestor sets as exogenous. Branch
containers later become groups of network layers; leaves become gather
layers over their variables and carry the Bayesian score that weights branch
sampling.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from math import prod

from .bdeu import DEFAULT_ESS, score_variable_set
from .data import Dataset, bootstrap, derive_seed
from .graph import Cpdag, complete_graph, find_autonomous, increase_resolution, max_indegree
from .indtest import DEFAULT_THRESHOLD, CiTester

EXHAUSTIVE_UNIQUE_LIMIT = 10**6
STRUCTURE_FORMAT = "brainet-structure"
STRUCTURE_VERSION = 1


class StructureError(ValueError):
    """Violated structure-tree contract or malformed document."""


@dataclass
class StructureConfig:
    """Knobs of one structure-learning run."""

    s: int = 2
    threshold: float = DEFAULT_THRESHOLD
    ess: float = DEFAULT_ESS
    max_depth: int = 4  # highest condition-set order that will be tested
    seed: int = 0
    ci_method: str = "cmi"
    alpha: float = 0.05
    score_parents: str = "surviving"

    def to_doc(self) -> dict:
        return {
            "s": self.s,
            "threshold": self.threshold,
            "ess": self.ess,
            "max_depth": self.max_depth,
            "seed": self.seed,
            "ci_method": self.ci_method,
            "alpha": self.alpha,
            "score_parents": self.score_parents,
        }


@dataclass
class RunTrace:
    """Counters collected while learning, for complexity measurements."""

    ci_tests: int = 0
    score_calls: int = 0
    max_order: int = 0


def measure_complexity(trace: RunTrace | None) -> dict:
    """Exact test/score counts from a traced run."""
    if trace is None:
        raise StructureError("tracing was not enabled for this run")
    return {
        "ci_tests": trace.ci_tests,
        "score_calls": trace.score_calls,
        "max_order": trace.max_order,
    }


@dataclass
class StructureNode:
    """Leaf (gather layer with a score) or internal node (s scored branches)."""

    variables: frozenset
    node_id: str
    score: float | None = None
    branches: list | None = None

    @property
    def is_leaf(self) -> bool:
        return self.branches is None

    def leaves(self):
        if self.is_leaf:
            yield self
            return
        for branch in self.branches:
            for child in branch.children():
                yield from child.leaves()

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        return 1 + max(
            child.depth() for b in self.branches for child in b.children()
        )


@dataclass
class Branch:
    """One bootstrap branch of an internal node."""

    index: int
    container_id: str
    cpdag: Cpdag
    ancestors: list
    descendant: StructureNode

    def children(self):
        yield from self.ancestors
        yield self.descendant


def learn_structure(
    cpdag: Cpdag,
    endogenous,
    exogenous,
    n: int,
    config: StructureConfig,
    dataset: Dataset,
    trace: RunTrace | None = None,
    node_id: str = "r",
    tester: CiTester | None = None,
    _stagnation: int = 0,
) -> StructureNode:
    """Recursive construction of the structure tree (see module docstring).

    ``_stagnation`` counts consecutive descendant-only recursions that left
    both the variable set and the graph unchanged; two in a row force a leaf
    so a graph that stops responding to higher-order tests cannot generate
    useless depth.
    """
    endo = frozenset(int(v) for v in endogenous)
    exo = frozenset(int(v) for v in exogenous)
    if not endo:
        raise StructureError("cannot learn a structure over no variables")

    if max_indegree(cpdag, endo) < n + 1 or n > config.max_depth or _stagnation >= 2:
        score = score_variable_set(
            dataset,
            endo,
            graph=cpdag,
            ess=config.ess,
            parents_mode=config.score_parents,
            trace=trace,
        )
        return StructureNode(variables=endo, node_id=node_id, score=score)

    if tester is None:
        tester = CiTester(
            threshold=config.threshold,
            method=config.ci_method,
            alpha=config.alpha,
            trace=trace,
        )
    branches = []
    for t in range(config.s):
        sample = bootstrap(dataset, derive_seed(config.seed, node_id, t))
        refined = increase_resolution(
            cpdag, n, sample.take(), endogenous=endo, exogenous=exo, tester=tester
        )
        decomp = find_autonomous(refined, endo, exo)
        ancestors = [
            learn_structure(
                refined,
                group,
                exo,
                n + 1,
                config,
                dataset,
                trace,
                node_id=f"{node_id}/{t}/a{i}",
                tester=tester,
            )
            for i, group in enumerate(decomp.ancestors)
        ]
        desc_exo = exo.union(*decomp.ancestors) if decomp.ancestors else exo
        stalled = (
            not decomp.ancestors
            and decomp.descendant == endo
            and refined == cpdag
        )
        descendant = learn_structure(
            refined,
            decomp.descendant,
            desc_exo,
            n + 1,
            config,
            dataset,
            trace,
            node_id=f"{node_id}/{t}/d",
            tester=tester,
            _stagnation=_stagnation + 1 if stalled else 0,
        )
        branches.append(
            Branch(
                index=t,
                container_id=f"{node_id}/{t}",
                cpdag=refined,
                ancestors=ancestors,
                descendant=descendant,
            )
        )
    return StructureNode(variables=endo, node_id=node_id, branches=branches)


@dataclass
class LearnResult:
    root: StructureNode
    config: StructureConfig
    trace: RunTrace
    column_names: tuple
    cardinalities: tuple


def learn(dataset: Dataset, config: StructureConfig, ci_log=None) -> LearnResult:
    """Learn a structure tree over the dataset's testable columns.

    ``ci_log`` optionally streams every independence decision as a JSON line.
    """
    nodes = dataset.ci_columns
    if not nodes:
        raise StructureError("dataset has no columns usable for independence tests")
    trace = RunTrace()
    tester = CiTester(
        threshold=config.threshold,
        method=config.ci_method,
        alpha=config.alpha,
        trace=trace,
        log=ci_log,
    )
    root = learn_structure(
        complete_graph(nodes),
        frozenset(nodes),
        frozenset(),
        0,
        config,
        dataset,
        trace,
        tester=tester,
    )
    return LearnResult(
        root=root,
        config=config,
        trace=trace,
        column_names=dataset.column_names,
        cardinalities=tuple(int(c) for c in dataset.cardinalities),
    )


def stacked_ensemble_tree(
    variables, s: int, depth: int, leaf_score: float = 0.0
) -> StructureNode:
    """Degenerate tree of s disjoint stacks of dense layers over one gather.

    This is the zero-threshold endpoint of the ablation: no structure at all,
    just an ensemble of s stacked fully connected networks.
    """
    variables = frozenset(int(v) for v in variables)
    if depth < 1:
        raise StructureError("stack depth must be at least 1")

    def chain(node_id: str, level: int) -> StructureNode:
        if level == depth:
            return StructureNode(
                variables=variables, node_id=node_id, score=leaf_score
            )
        child = chain(f"{node_id}/0/d", level + 1)
        return StructureNode(
            variables=variables,
            node_id=node_id,
            branches=[
                Branch(
                    index=0,
                    container_id=f"{node_id}/0",
                    cpdag=complete_graph(variables),
                    ancestors=[],
                    descendant=child,
                )
            ],
        )

    branches = []
    for t in range(s):
        child = chain(f"r/{t}/d", 1)
        branches.append(
            Branch(
                index=t,
                container_id=f"r/{t}",
                cpdag=complete_graph(variables),
                ancestors=[],
                descendant=child,
            )
        )
    return StructureNode(variables=variables, node_id="r", branches=branches)


# -- selection space -------------------------------------------------------


def selection_count(node: StructureNode) -> int:
    """Number of distinct root-to-leaf branch selections (not deduplicated)."""
    if node.is_leaf:
        return 1
    return sum(
        prod(selection_count(c) for c in branch.children())
        for branch in node.branches
    )


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode() if isinstance(p, str) else p)
        h.update(b"\x00")
    return h.hexdigest()


def _shape_digest(node: StructureNode) -> str:
    """Digest of the full subtree shape, used to deduplicate sibling branches."""
    if node.is_leaf:
        return _digest("L", *map(str, sorted(node.variables)))
    parts = []
    for branch in node.branches:
        parts.append(
            _digest(
                "B",
                _digest(*sorted(_shape_digest(a) for a in branch.ancestors)),
                _shape_digest(branch.descendant),
            )
        )
    return _digest("N", *sorted(parts))


def _selection_forms(node: StructureNode, memo: dict) -> frozenset:
    """Set of canonical connectivity digests over all branch selections."""
    key = id(node)
    if key in memo:
        return memo[key]
    if node.is_leaf:
        forms = frozenset({_digest("L", *map(str, sorted(node.variables)))})
        memo[key] = forms
        return forms
    out = set()
    for branch in node.branches:
        anc_sets = [sorted(_selection_forms(a, memo)) for a in branch.ancestors]
        desc_set = sorted(_selection_forms(branch.descendant, memo))
        for d in desc_set:
            combos = [()]
            for options in anc_sets:
                combos = [c + (o,) for c in combos for o in options]
            for combo in combos:
                out.add(_digest("B", _digest(*sorted(combo)), d))
    memo[key] = frozenset(out)
    return memo[key]


def count_unique_structures(root: StructureNode) -> int:
    """Distinct sub-network connectivity patterns reachable by branch choices.

    Identity is the canonical serialized connectivity: two selections count
    once when every gather layer and every container decomposition match.
    Small trees are counted exactly over the full cross-product; past
    ``EXHAUSTIVE_UNIQUE_LIMIT`` selections, sibling branches with identical
    subtree shapes are merged per node and the per-child counts multiplied.
    """
    if selection_count(root) <= EXHAUSTIVE_UNIQUE_LIMIT:
        return len(_selection_forms(root, {}))

    def count(node: StructureNode) -> int:
        if node.is_leaf:
            return 1
        seen = {}
        for branch in node.branches:
            key = _digest(
                "B",
                _digest(*sorted(_shape_digest(a) for a in branch.ancestors)),
                _shape_digest(branch.descendant),
            )
            if key not in seen:
                seen[key] = prod(count(c) for c in branch.children())
        return sum(seen.values())

    return count(root)


def assemble_cpdag(root: StructureNode, choices=None) -> Cpdag | None:
    """Final global CPDAG implied by one branch selection (defaults to branch 0).

    Each branch's refined graph is overlaid with the deeper refinements of
    its children; a child owns every edge incident to its endogenous set, so
    the overlay is well defined. Leaves refine nothing. Returns None for a
    leaf-only tree.
    """
    if root.is_leaf:
        return None
    t = 0 if choices is None else choices[root.node_id]
    branch = root.branches[t]
    graph = branch.cpdag
    directed = set(graph.directed)
    undirected = set(graph.undirected)
    for child in branch.children():
        sub = assemble_cpdag(child, choices)
        if sub is None:
            continue
        scope = child.variables
        directed = {e for e in directed if not (e[0] in scope or e[1] in scope)}
        undirected = {e for e in undirected if not (e[0] in scope or e[1] in scope)}
        directed |= {e for e in sub.directed if e[0] in scope or e[1] in scope}
        undirected |= {e for e in sub.undirected if e[0] in scope or e[1] in scope}
    return Cpdag(
        nodes=graph.nodes,
        directed=directed,
        undirected=undirected,
        resolution=graph.resolution,
        sepsets=graph.sepsets,
    )


# -- serialization ----------------------------------------------------------


def tree_to_doc(node: StructureNode) -> dict:
    if node.is_leaf:
        return {
            "kind": "leaf",
            "id": node.node_id,
            "vars": sorted(node.variables),
            "score": node.score,
        }
    return {
        "kind": "internal",
        "id": node.node_id,
        "vars": sorted(node.variables),
        "branches": [
            {
                "index": b.index,
                "container": b.container_id,
                "cpdag": b.cpdag.to_doc(),
                "ancestors": [tree_to_doc(a) for a in b.ancestors],
                "descendant": tree_to_doc(b.descendant),
            }
            for b in node.branches
        ],
    }


def _require(doc, key, kinds, path):
    if not isinstance(doc, dict) or key not in doc:
        raise StructureError(f"missing field {key!r} at {path}")
    value = doc[key]
    if not isinstance(value, kinds):
        raise StructureError(
            f"field {key!r} at {path} has type {type(value).__name__}"
        )
    return value


def tree_from_doc(doc: dict, path: str = "tree") -> StructureNode:
    kind = _require(doc, "kind", str, path)
    node_id = _require(doc, "id", str, path)
    variables = frozenset(_require(doc, "vars", list, path))
    if kind == "leaf":
        score = _require(doc, "score", (int, float), path)
        if isinstance(score, bool) or not _finite(score):
            raise StructureError(f"field 'score' at {path} is not a finite number")
        return StructureNode(variables=variables, node_id=node_id, score=float(score))
    if kind != "internal":
        raise StructureError(f"unknown node kind {kind!r} at {path}")
    branches = []
    for i, bdoc in enumerate(_require(doc, "branches", list, path)):
        bpath = f"{path}.branches[{i}]"
        branches.append(
            Branch(
                index=_require(bdoc, "index", int, bpath),
                container_id=_require(bdoc, "container", str, bpath),
                cpdag=Cpdag.from_doc(_require(bdoc, "cpdag", dict, bpath)),
                ancestors=[
                    tree_from_doc(a, f"{bpath}.ancestors[{j}]")
                    for j, a in enumerate(_require(bdoc, "ancestors", list, bpath))
                ],
                descendant=tree_from_doc(
                    _require(bdoc, "descendant", dict, bpath), f"{bpath}.descendant"
                ),
            )
        )
    return StructureNode(variables=variables, node_id=node_id, branches=branches)


def _finite(x) -> bool:
    return x == x and abs(x) != float("inf")


def structure_document(result: LearnResult) -> dict:
    """Versioned on-disk form of a learned structure."""
    return {
        "format": STRUCTURE_FORMAT,
        "version": STRUCTURE_VERSION,
        "config": result.config.to_doc(),
        "columns": list(result.column_names),
        "cardinalities": list(result.cardinalities),
        "tree": tree_to_doc(result.root),
    }


def save_structure(result: LearnResult, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(structure_document(result), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_structure(path) -> tuple:
    """Read a structure document; returns (root, document)."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != STRUCTURE_FORMAT:
        raise StructureError(f"{path} is not a structure document")
    return tree_from_doc(doc["tree"]), doc
