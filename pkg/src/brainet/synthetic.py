"""Synthetic data sources for the experiment drivers and the test benches:
discrete Bayesian-network samplers with known ground truth, the two-moons
classification task with a far-corner outlier region, and structured
classification tasks whose dependency pattern a structure learner can
exploit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset, derive_seed


@dataclass(frozen=True)
class DiscreteBayesNet:
    """Ground-truth generator: a DAG over discrete variables with full CPTs.

    ``cpts[i]`` has shape (card(p1), ..., card(pm), card(i)) for parents in
    ``parents[i]`` order; roots hold a plain 1-d distribution.
    """

    names: tuple
    cardinalities: tuple
    parents: dict
    cpts: dict

    def node_count(self) -> int:
        return len(self.names)

    def edges(self):
        return sorted(
            (p, child) for child, ps in self.parents.items() for p in ps
        )

    def topological_order(self):
        order, seen = [], set()

        def visit(v):
            if v in seen:
                return
            for p in self.parents.get(v, ()):
                visit(p)
            seen.add(v)
            order.append(v)

        for v in range(self.node_count()):
            visit(v)
        return order

    def sample(self, n: int, seed: int) -> Dataset:
        rng = np.random.default_rng(seed)
        values = np.zeros((n, self.node_count()), dtype=np.int64)
        for v in self.topological_order():
            cpt = np.asarray(self.cpts[v], dtype=np.float64)
            ps = self.parents.get(v, ())
            if ps:
                dist = cpt[tuple(values[:, p] for p in ps)]
            else:
                dist = np.broadcast_to(cpt, (n, cpt.shape[-1]))
            u = rng.random((n, 1))
            values[:, v] = (dist.cumsum(axis=1) < u).sum(axis=1)
        return Dataset(
            column_names=self.names,
            cardinalities=np.asarray(self.cardinalities, dtype=np.int64),
            values=values,
        )


def benchmark_networks() -> dict:
    """Five small binary ground-truth networks (3 to 8 nodes) for recovery tests."""
    fair = np.array([0.5, 0.5])
    skew = np.array([0.6, 0.4])
    copy_strong = np.array([[0.9, 0.1], [0.1, 0.9]])
    collider_or = np.array(
        [
            [[0.95, 0.05], [0.15, 0.85]],
            [[0.15, 0.85], [0.02, 0.98]],
        ]
    )
    nets = {}
    nets["chain3"] = DiscreteBayesNet(
        names=("A", "B", "C"),
        cardinalities=(2, 2, 2),
        parents={1: (0,), 2: (1,)},
        cpts={0: fair, 1: copy_strong, 2: copy_strong},
    )
    nets["collider3"] = DiscreteBayesNet(
        names=("A", "B", "C"),
        cardinalities=(2, 2, 2),
        parents={2: (0, 1)},
        cpts={0: fair, 1: skew, 2: collider_or},
    )
    nets["diamond4"] = DiscreteBayesNet(
        names=("A", "B", "C", "D"),
        cardinalities=(2, 2, 2, 2),
        parents={1: (0,), 2: (0,), 3: (1, 2)},
        cpts={0: fair, 1: copy_strong, 2: copy_strong, 3: collider_or},
    )
    nets["fork5"] = DiscreteBayesNet(
        names=("A", "B", "C", "D", "E"),
        cardinalities=(2, 2, 2, 2, 2),
        parents={2: (0, 1), 3: (2,), 4: (2,)},
        cpts={0: fair, 1: fair, 2: collider_or, 3: copy_strong, 4: copy_strong},
    )
    nets["modules8"] = DiscreteBayesNet(
        names=tuple("ABCDEFGH"),
        cardinalities=(2,) * 8,
        parents={2: (0, 1), 3: (2,), 6: (4, 5), 7: (6,)},
        cpts={
            0: fair,
            1: skew,
            2: collider_or,
            3: copy_strong,
            4: fair,
            5: skew,
            6: collider_or,
            7: copy_strong,
        },
    )
    return nets


def noisy_chain_net(n_vars: int = 6, strength: float = 0.72) -> DiscreteBayesNet:
    """Binary chain with deliberately weak links; bootstrap replicas disagree
    on borderline edges at small sample sizes, which is what the
    unique-structure sweeps need."""
    copy_weak = np.array([[strength, 1 - strength], [1 - strength, strength]])
    return DiscreteBayesNet(
        names=tuple(f"X{i}" for i in range(n_vars)),
        cardinalities=(2,) * n_vars,
        parents={i: (i - 1,) for i in range(1, n_vars)},
        cpts={0: np.array([0.5, 0.5]), **{i: copy_weak for i in range(1, n_vars)}},
    )


def two_moons(n: int, seed: int, noise: float = 0.15, label_noise: float = 0.0) -> Dataset:
    """Two interleaving half circles with Gaussian jitter; labels 0/1."""
    rng = np.random.default_rng(seed)
    n0 = n // 2
    n1 = n - n0
    theta0 = rng.random(n0) * np.pi
    theta1 = rng.random(n1) * np.pi
    x0 = np.stack([np.cos(theta0), np.sin(theta0)], axis=1)
    x1 = np.stack([1 - np.cos(theta1), 0.5 - np.sin(theta1)], axis=1)
    points = np.concatenate([x0, x1]) + rng.normal(0, noise, size=(n, 2))
    labels = np.concatenate([np.zeros(n0, np.int64), np.ones(n1, np.int64)])
    if label_noise > 0:
        flips = rng.random(n) < label_noise
        labels = labels ^ flips
    perm = rng.permutation(n)
    return Dataset(
        column_names=("x0", "x1"),
        cardinalities=np.zeros(2, dtype=np.int64),
        values=np.zeros((n, 2), dtype=np.int64),
        labels=labels[perm],
        class_count=2,
        raw_features=points[perm],
        continuous=np.ones(2, dtype=bool),
    )


def uniform_box(n: int, seed: int, low=(2.5, 2.5), high=(4.0, 4.0)) -> Dataset:
    """Unlabeled points far outside the two-moons support, used as outliers."""
    rng = np.random.default_rng(seed)
    points = rng.uniform(low, high, size=(n, 2))
    return Dataset(
        column_names=("x0", "x1"),
        cardinalities=np.zeros(2, dtype=np.int64),
        values=np.zeros((n, 2), dtype=np.int64),
        raw_features=points,
        continuous=np.ones(2, dtype=bool),
    )


def collider_blocks(
    n: int,
    seed: int,
    blocks: int = 3,
    gain: float = 1.8,
) -> Dataset:
    """Classification task whose dependency pattern a structure learner can exploit.

    Each block holds two independent fair bits and a collider child driven by
    them; the label follows a logistic function of the summed collider
    signals. The parents are informative only through the colliders, so the
    learned decomposition (per-block ancestor layers plus a joint layer over
    the colliders) matches the generative mechanism, while an unstructured
    dense stack has to find it from data.
    """
    rng = np.random.default_rng(seed)
    collider = np.array(
        [
            [[0.90, 0.10], [0.25, 0.75]],
            [[0.25, 0.75], [0.08, 0.92]],
        ]
    )
    cols, names, signals = [], [], []
    for b in range(blocks):
        u = rng.integers(0, 2, n)
        v = rng.integers(0, 2, n)
        p_m = collider[u, v, 1]
        m = (rng.random(n) < p_m).astype(np.int64)
        signals.append(2 * m - 1)
        cols += [u, v, m]
        names += [f"u{b}", f"v{b}", f"m{b}"]
    score = gain * np.stack(signals).sum(axis=0) / np.sqrt(blocks)
    labels = (rng.random(n) < 1.0 / (1.0 + np.exp(-score))).astype(np.int64)
    values = np.stack(cols, axis=1).astype(np.int64)
    return Dataset(
        column_names=tuple(names),
        cardinalities=np.full(len(names), 2, dtype=np.int64),
        values=values,
        labels=labels,
        class_count=2,
        raw_features=values.astype(np.float64),
    )
