"""Conditional-independence decisions on discrete data.

The default statistic is the plug-in conditional mutual information in nats,
compared against a fixed threshold. A G-test p-value mode is available behind
``method="gtest"``. Sparse contingency tables (more than half the cells below
``min_cell`` samples) force an "independent" verdict: a missing edge at deep
recursion is cheaper than a spurious one that blocks decomposition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .data import Dataset

DEFAULT_THRESHOLD = 0.01  # nats
DEFAULT_MIN_CELL = 5


@dataclass(frozen=True)
class CiDecision:
    """Outcome of a single conditional-independence test."""

    x: int
    y: int
    condition_set: tuple
    statistic: float  # conditional mutual information, nats
    threshold: float
    independent: bool
    sparse: bool = False
    p_value: float | None = None

    def to_json(self) -> str:
        doc = {
            "x": self.x,
            "y": self.y,
            "z": list(self.condition_set),
            "cmi": self.statistic,
            "threshold": self.threshold,
            "independent": self.independent,
            "sparse": self.sparse,
        }
        if self.p_value is not None:
            doc["p_value"] = self.p_value
        return json.dumps(doc, sort_keys=True)


def _check_columns(dataset: Dataset, x: int, y: int, condition_set) -> None:
    if x == y:
        raise ValueError("x and y must differ")
    cols = (x, y, *condition_set)
    if x in condition_set or y in condition_set:
        raise ValueError("condition set must exclude x and y")
    for c in cols:
        if not 0 <= c < dataset.n_cols:
            raise ValueError(f"column {c} out of range")
        if dataset.cardinalities[c] < 2:
            raise ValueError(
                f"column {c} has cardinality {int(dataset.cardinalities[c])}; "
                "independence tests need >= 2 categories"
            )


def _contingency(dataset: Dataset, x: int, y: int, condition_set):
    """Counts over (stratum, x, y) cells, strata being condition configurations."""
    vals = dataset.values
    rx = int(dataset.cardinalities[x])
    ry = int(dataset.cardinalities[y])
    strata = np.zeros(vals.shape[0], dtype=np.int64)
    q = 1
    for c in condition_set:
        rc = int(dataset.cardinalities[c])
        strata = strata * rc + vals[:, c]
        q *= rc
    cell = (strata * rx + vals[:, x]) * ry + vals[:, y]
    counts = np.bincount(cell, minlength=q * rx * ry).astype(np.float64)
    return counts.reshape(q, rx, ry)


def conditional_mutual_information(
    dataset: Dataset, x: int, y: int, condition_set=()
) -> float:
    """Plug-in CMI estimate in nats; empty strata contribute exactly 0."""
    condition_set = tuple(condition_set)
    _check_columns(dataset, x, y, condition_set)
    counts = _contingency(dataset, x, y, condition_set)
    n = dataset.n_rows
    n_s = counts.sum(axis=(1, 2))
    n_sx = counts.sum(axis=2)
    n_sy = counts.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = counts * n_s[:, None, None] / (n_sx[:, :, None] * n_sy[:, None, :])
        terms = np.where(counts > 0, counts * np.log(ratio), 0.0)
    return float(terms.sum() / n)


def is_independent(
    dataset: Dataset,
    x: int,
    y: int,
    condition_set=(),
    threshold: float = DEFAULT_THRESHOLD,
    method: str = "cmi",
    alpha: float = 0.05,
    min_cell: int = DEFAULT_MIN_CELL,
) -> CiDecision:
    """Decide conditional independence of x and y given the condition set."""
    condition_set = tuple(condition_set)
    _check_columns(dataset, x, y, condition_set)
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    counts = _contingency(dataset, x, y, condition_set)
    n = dataset.n_rows
    n_s = counts.sum(axis=(1, 2))
    n_sx = counts.sum(axis=2)
    n_sy = counts.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = counts * n_s[:, None, None] / (n_sx[:, :, None] * n_sy[:, None, :])
        stat = float(np.where(counts > 0, counts * np.log(ratio), 0.0).sum() / n)

    sparse = (counts < min_cell).sum() > counts.size / 2

    p_value = None
    if method == "gtest":
        rx, ry = counts.shape[1], counts.shape[2]
        dof = (rx - 1) * (ry - 1) * counts.shape[0]
        p_value = float(chi2.sf(2.0 * n * stat, dof))
        independent = p_value > alpha
    elif method == "cmi":
        independent = stat < threshold
    else:
        raise ValueError(f"unknown CI method {method!r}")
    if sparse:
        independent = True
    return CiDecision(
        x=int(x),
        y=int(y),
        condition_set=tuple(int(c) for c in condition_set),
        statistic=stat,
        threshold=float(threshold),
        independent=bool(independent),
        sparse=bool(sparse),
        p_value=p_value,
    )


@dataclass
class CiTester:
    """Stateful wrapper carrying test settings, counters, and an audit log.

    One tester serves a whole structure-learning run across different
    bootstrap datasets; it counts every test for the complexity trace and can
    stream decisions as JSON lines.
    """

    threshold: float = DEFAULT_THRESHOLD
    method: str = "cmi"
    alpha: float = 0.05
    min_cell: int = DEFAULT_MIN_CELL
    trace: object | None = None  # structure.RunTrace, duck-typed
    log: object | None = None  # writable text stream

    def is_independent(self, dataset: Dataset, x, y, condition_set=()) -> CiDecision:
        decision = is_independent(
            dataset,
            x,
            y,
            condition_set,
            threshold=self.threshold,
            method=self.method,
            alpha=self.alpha,
            min_cell=self.min_cell,
        )
        if self.trace is not None:
            self.trace.ci_tests += 1
            order = len(decision.condition_set)
            if order > self.trace.max_order:
                self.trace.max_order = order
        if self.log is not None:
            self.log.write(decision.to_json() + "\n")
        return decision
