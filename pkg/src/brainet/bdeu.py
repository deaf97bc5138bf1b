"""Bayesian Dirichlet equivalent-uniform scoring of discrete families.

Scores are natural-log marginal likelihoods under a Dirichlet prior with
equivalent sample size ``ess`` spread uniformly over parent configurations
and child states. The score decomposes over families, so a variable set is
scored as the sum of per-variable family scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod

import numpy as np
from scipy.special import gammaln

from .data import Dataset

DEFAULT_ESS = 1.0


@dataclass(frozen=True)
class FamilyScore:
    child: int
    parents: frozenset
    log_score: float
    ess: float


def bdeu_family(
    dataset: Dataset, child: int, parents=(), ess: float = DEFAULT_ESS
) -> FamilyScore:
    """Log marginal likelihood of one child given its discrete parent set."""
    if ess <= 0:
        raise ValueError("equivalent sample size must be positive")
    parents = tuple(sorted(set(int(p) for p in parents)))
    if child in parents:
        raise ValueError("child cannot be its own parent")
    r = int(dataset.cardinalities[child])
    q = prod(int(dataset.cardinalities[p]) for p in parents) if parents else 1
    alpha_j = ess / q
    alpha_jk = ess / (q * r)

    child_vals = dataset.values[:, child]
    if parents:
        # observed parent configurations only; unobserved ones contribute 0
        _, config = np.unique(dataset.values[:, parents], axis=0, return_inverse=True)
        q_obs = int(config.max()) + 1 if config.size else 0
    else:
        config = np.zeros(dataset.n_rows, dtype=np.int64)
        q_obs = 1
    n_jk = np.bincount(config * r + child_vals, minlength=q_obs * r).astype(
        np.float64
    ).reshape(q_obs, r)
    n_j = n_jk.sum(axis=1)

    score = float(
        (gammaln(alpha_j) - gammaln(alpha_j + n_j)).sum()
        + (gammaln(alpha_jk + n_jk) - gammaln(alpha_jk)).sum()
    )
    return FamilyScore(
        child=int(child), parents=frozenset(parents), log_score=score, ess=ess
    )


def score_variable_set(
    dataset: Dataset,
    variables,
    graph=None,
    ess: float = DEFAULT_ESS,
    parents_mode: str = "surviving",
    trace=None,
) -> float:
    """Sum of family scores over a variable set.

    With ``parents_mode="surviving"`` each variable's parents are its directed
    parents in the supplied graph restricted to the variable set; with
    ``"parentless"`` (or no graph) every family is unconditional.
    """
    variables = sorted(set(int(v) for v in variables))
    if not variables:
        raise ValueError("cannot score an empty variable set")
    if parents_mode not in ("surviving", "parentless"):
        raise ValueError(f"unknown parents mode {parents_mode!r}")
    if trace is not None:
        trace.score_calls += 1
    vset = set(variables)
    total = 0.0
    for v in variables:
        if graph is not None and parents_mode == "surviving":
            parents = sorted(graph.parents(v) & vset)
        else:
            parents = ()
        total += bdeu_family(dataset, v, parents, ess).log_score
    return total
