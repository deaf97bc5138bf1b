"""Boltzmann branch sampling and the stochastic inference driver.

Selections are resolved leaves-to-root: every subtree first settles its own
branch choices and aggregate score (the sum over its merged autonomous
sets), then the parent draws one of its s branches with probability
proportional to exp(score / gamma). Uniform mode ignores scores entirely
(used during training); argmax mode is the explicit zero-temperature limit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import derive_seed
from .nnet import Hierarchy, SubNetworkSelection, forward
from .structure import StructureNode
from .uncertainty import PredictiveBatch


@dataclass(frozen=True)
class SamplingConfig:
    gamma: float = 1.0
    passes: int = 1
    mode: str = "posterior"  # posterior | uniform | argmax
    seed: int = 0

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma <= 0:
            raise ValueError(
                "gamma must be finite and positive; the limits are exposed as "
                "the explicit argmax and uniform modes"
            )
        if self.mode not in ("posterior", "uniform", "argmax"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")
        if self.passes < 1:
            raise ValueError("need at least one forward pass")


def boltzmann_probabilities(scores, gamma: float = 1.0) -> np.ndarray:
    """p_t proportional to exp(score_t / gamma), overflow-safe via max subtraction."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("need at least one score")
    if np.isnan(scores).any():
        raise ValueError("scores contain NaN")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    z = scores / gamma
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def sample_selection(
    root: StructureNode, config: SamplingConfig, rng=None
) -> SubNetworkSelection:
    """Draw one sub-network, resolving choices bottom-up per the config mode."""
    if rng is None:
        rng = np.random.default_rng(config.seed)

    def resolve(node: StructureNode):
        if node.is_leaf:
            return {}, node.score
        branch_choices, branch_scores = [], []
        for branch in node.branches:
            merged, total = {}, 0.0
            for child in branch.children():
                sub_choices, sub_score = resolve(child)
                merged.update(sub_choices)
                total += sub_score
            branch_choices.append(merged)
            branch_scores.append(total)
        if config.mode == "uniform":
            t = int(rng.integers(0, len(node.branches)))
        elif config.mode == "argmax":
            t = int(np.argmax(branch_scores))
        else:
            probs = boltzmann_probabilities(branch_scores, config.gamma)
            t = int(rng.choice(len(probs), p=probs))
        choices = dict(branch_choices[t])
        choices[node.node_id] = t
        return choices, branch_scores[t]

    choices, total = resolve(root)
    return SubNetworkSelection(choices=choices, total_score=float(total))


def stochastic_predict(
    hierarchy: Hierarchy,
    root: StructureNode,
    input_batch,
    config: SamplingConfig,
    labels=None,
) -> PredictiveBatch:
    """T posterior-sampled forward passes averaged in probability space.

    Classification outputs are per-pass class probabilities and their mean;
    regression outputs are per-pass (mean, variance) pairs combined by moment
    matching. Per-pass outputs are retained for uncertainty decomposition.
    """
    per_pass = []
    for i in range(config.passes):
        rng = np.random.default_rng(derive_seed(config.seed, "pass", i))
        selection = sample_selection(root, config, rng=rng)
        out = forward(hierarchy, selection, input_batch, mode="eval")
        if hierarchy.head.kind == "softmax":
            per_pass.append(np.exp(out))
        else:
            mean, logvar = out[:, 0], out[:, 1]
            per_pass.append(np.stack([mean, np.exp(logvar)], axis=1))
    stacked = np.stack(per_pass, axis=0)
    kind = "classification" if hierarchy.head.kind == "softmax" else "regression"
    return PredictiveBatch(per_pass=stacked, kind=kind, labels=labels)
