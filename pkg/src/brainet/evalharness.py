"""Experiment drivers and ranking metrics.

The drivers reproduce the desk-scale protocols end to end: the ablation over
independence thresholds (with the zero-threshold stacked-dense ensemble as
the degenerate endpoint), the unique-structure count versus training size,
out-of-distribution scoring with all four uncertainty measures, and
regression with Gaussian heads. Every driver is deterministic given its
settings and master seed, and returns plain rows ready for CSV/JSON dumps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from . import nnet, sampling, structure, uncertainty
from .data import Dataset, derive_seed, discretize, train_test_split
from .synthetic import two_moons, uniform_box


@dataclass(frozen=True)
class ScoredBinaryOutcomes:
    """Scores (higher = positive) with boolean positive markers."""

    scores: np.ndarray
    positives: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "scores", np.asarray(self.scores, dtype=np.float64)
        )
        object.__setattr__(
            self, "positives", np.asarray(self.positives, dtype=bool)
        )
        if self.scores.shape != self.positives.shape or self.scores.ndim != 1:
            raise ValueError("scores and positives must be matching vectors")
        if self.positives.all() or not self.positives.any():
            raise ValueError("ranking metrics need both classes present")


def roc_auc(outcomes: ScoredBinaryOutcomes) -> float:
    """Mann-Whitney formulation: P(score_pos > score_neg) + 0.5 P(tie)."""
    ranks = rankdata(outcomes.scores)
    n_pos = int(outcomes.positives.sum())
    n_neg = outcomes.scores.size - n_pos
    rank_sum = ranks[outcomes.positives].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _threshold_counts(outcomes: ScoredBinaryOutcomes):
    """Cumulative true/false positives when predicting positive at score >= t,
    for t over the distinct scores in descending order."""
    order = np.argsort(-outcomes.scores, kind="stable")
    scores = outcomes.scores[order]
    pos = outcomes.positives[order].astype(np.float64)
    tp = np.cumsum(pos)
    fp = np.cumsum(1.0 - pos)
    last = np.nonzero(np.diff(scores, append=np.nan))[0]  # last index per tie group
    return tp[last], fp[last]


def pr_auc(outcomes: ScoredBinaryOutcomes) -> float:
    """Area under precision-recall via step-wise interpolation over thresholds."""
    tp, fp = _threshold_counts(outcomes)
    n_pos = outcomes.positives.sum()
    recall = tp / n_pos
    precision = tp / (tp + fp)
    prev_recall = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev_recall) * precision).sum())


def fpr_at_tpr(outcomes: ScoredBinaryOutcomes, tpr_target: float = 0.95) -> float:
    """Smallest false-positive rate among thresholds reaching the target TPR."""
    tp, fp = _threshold_counts(outcomes)
    n_pos = outcomes.positives.sum()
    n_neg = outcomes.scores.size - n_pos
    ok = tp / n_pos >= tpr_target
    return float((fp[ok] / n_neg).min())


def detection_error(outcomes: ScoredBinaryOutcomes) -> float:
    """Minimum balanced classification error over all thresholds."""
    tp, fp = _threshold_counts(outcomes)
    n_pos = outcomes.positives.sum()
    n_neg = outcomes.scores.size - n_pos
    errors = 0.5 * (1.0 - tp / n_pos) + 0.5 * (fp / n_neg)
    # the reject-all threshold is not represented in the cumulative counts
    return float(min(errors.min(), 0.5))


# -- shared pipeline ---------------------------------------------------------


@dataclass
class HarnessSettings:
    """One bundle of knobs for learn + train + predict driver runs."""

    s: int = 2
    ci_threshold: float = 0.01
    ess: float = 1.0
    max_depth: int = 4
    bins: int = 4
    width: int = 32
    width_mult: float = 1.0
    epochs: int = 30
    lr: float = 0.01
    batch_size: int = 64
    loss: str = "cross-entropy"
    passes: int = 15
    gamma: float = 1.0
    seed: int = 0
    stack_depth: int = 2

    def structure_config(self) -> structure.StructureConfig:
        return structure.StructureConfig(
            s=self.s,
            threshold=self.ci_threshold,
            ess=self.ess,
            max_depth=self.max_depth,
            seed=self.seed,
        )

    def to_doc(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def prepare(dataset: Dataset, settings: HarnessSettings) -> Dataset:
    """Discretize pending continuous columns for structure learning."""
    if dataset.continuous.any() and dataset.raw_features is not None:
        return discretize(dataset, bins=settings.bins)
    return dataset


def fit(dataset: Dataset, settings: HarnessSettings, tree=None):
    """Learn a structure (unless given), build the hierarchy, train it."""
    dataset = prepare(dataset, settings)
    if tree is None:
        result = structure.learn(dataset, settings.structure_config())
        tree = result.root
    head = "gaussian" if settings.loss == "gaussian-nll" else "softmax"
    hierarchy = nnet.build_network(
        tree,
        head=head,
        class_count=dataset.class_count,
        width=settings.width,
        width_mult=settings.width_mult,
        seed=settings.seed,
        input_width=dataset.n_cols,
    )
    nnet.train_network(
        hierarchy,
        tree,
        dataset.features(),
        dataset.labels,
        epochs=settings.epochs,
        lr=settings.lr,
        batch_size=settings.batch_size,
        loss=settings.loss,
        seed=settings.seed,
    )
    return tree, hierarchy


def predict_batch(
    hierarchy, tree, dataset: Dataset, settings: HarnessSettings, mode="stochastic"
) -> uncertainty.PredictiveBatch:
    X = dataset.features()
    if mode == "stochastic":
        config = sampling.SamplingConfig(
            gamma=settings.gamma, passes=settings.passes, seed=settings.seed
        )
        return sampling.stochastic_predict(
            hierarchy, tree, X, config, labels=dataset.labels
        )
    if mode != "simultaneous":
        raise ValueError(f"unknown inference mode {mode!r}")
    out = nnet.forward_simultaneous(hierarchy, X, gamma=settings.gamma)
    if hierarchy.head.kind == "softmax":
        per_pass = np.exp(out)[None]
        kind = "classification"
    else:
        per_pass = np.stack([out[:, 0], np.exp(out[:, 1])], axis=1)[None]
        kind = "regression"
    return uncertainty.PredictiveBatch(
        per_pass=per_pass, kind=kind, labels=dataset.labels
    )


def _stack_parameters(d_in: int, width: int, depth: int, s: int, out_width: int) -> int:
    """Closed-form parameter count of the stacked-dense ensemble.

    Each of the s stacks holds one d_in -> width layer plus depth-1
    width -> width layers (bias and the two batchnorm vectors add 3 * width
    apiece); the head reads the selected stack's output.
    """
    per_stack = (d_in * width + 3 * width) + (depth - 1) * (width * width + 3 * width)
    return s * per_stack + (width * out_width + out_width)


def matched_stack_width(
    reference_params: int, dataset: Dataset, settings: HarnessSettings
) -> int:
    """Width making the stacked-dense ensemble's parameter count closest to a target."""
    d_in = len(prepare(dataset, settings).ci_columns)
    out_width = 2 if settings.loss == "gaussian-nll" else dataset.class_count
    best_w, best_gap = 2, None
    for w in range(2, 1025):
        gap = abs(
            _stack_parameters(d_in, w, settings.stack_depth, settings.s, out_width)
            - reference_params
        )
        if best_gap is None or gap < best_gap:
            best_w, best_gap = w, gap
    return best_w


def _zero_threshold_tree(dataset: Dataset, settings: HarnessSettings):
    from .bdeu import score_variable_set

    prepared = prepare(dataset, settings)
    variables = prepared.ci_columns
    leaf_score = score_variable_set(prepared, variables, ess=settings.ess)
    return structure.stacked_ensemble_tree(
        variables, settings.s, settings.stack_depth, leaf_score=leaf_score
    )


def run_ablation(
    dataset: Dataset,
    thresholds,
    settings: HarnessSettings,
    test_fraction: float = 0.2,
) -> list:
    """NLL / error / Brier on held-out data per independence threshold.

    The zero endpoint skips structure learning and directly instantiates the
    stacked-dense ensemble, width-matched to the other points' mean
    parameter count.
    """
    thresholds = sorted(thresholds)
    train, test = train_test_split(dataset, 1 - test_fraction, settings.seed)
    rows, zero_points = [], []
    param_counts = []
    for threshold in thresholds:
        if threshold == 0:
            zero_points.append(threshold)
            continue
        point = replace(settings, ci_threshold=threshold)
        tree, hierarchy = fit(train, point)
        batch = predict_batch(hierarchy, tree, test, point)
        param_counts.append(hierarchy.parameter_count())
        rows.append(_ablation_row(threshold, batch, hierarchy))
    for threshold in zero_points:
        point = settings
        if param_counts:
            width = matched_stack_width(
                int(np.mean(param_counts)), train, settings
            )
            point = replace(settings, width=width)
        tree = _zero_threshold_tree(train, point)
        tree_point, hierarchy = fit(train, point, tree=tree)
        batch = predict_batch(hierarchy, tree_point, test, point)
        rows.append(_ablation_row(threshold, batch, hierarchy))
    rows.sort(key=lambda r: r["threshold"])
    return rows


def _ablation_row(threshold, batch, hierarchy) -> dict:
    return {
        "threshold": threshold,
        "nll": uncertainty.nll(batch),
        "error": uncertainty.error_rate(batch),
        "brier": uncertainty.brier(batch),
        "parameters": hierarchy.parameter_count(),
    }


def run_unique_structures_sweep(
    dataset: Dataset,
    sizes,
    settings: HarnessSettings,
    seeds: int = 5,
) -> list:
    """Seed-averaged unique-structure counts per training-set size."""
    sizes = sorted(sizes)
    if sizes and sizes[-1] > dataset.n_rows:
        raise ValueError("sweep size exceeds the dataset")
    prepared = prepare(dataset, settings)
    rows = []
    for size in sizes:
        counts = []
        for i in range(seeds):
            seed = derive_seed(settings.seed, "sweep", size, i)
            rng = np.random.default_rng(seed)
            subset = prepared.take(rng.choice(prepared.n_rows, size, replace=False))
            config = replace(settings, seed=seed).structure_config()
            result = structure.learn(subset, config)
            counts.append(structure.count_unique_structures(result.root))
        rows.append(
            {
                "train_size": size,
                "unique_structures": float(np.mean(counts)),
                "std": float(np.std(counts)),
                "counts": counts,
            }
        )
    return rows


OOD_SCORES_STOCHASTIC = ("max_softmax", "entropy", "mutual_information", "expected_entropy")
OOD_SCORES_SIMULTANEOUS = ("max_softmax", "entropy")


def _ood_scores(batch: uncertainty.PredictiveBatch, names) -> dict:
    out = {}
    for name in names:
        if name == "max_softmax":
            out[name] = -uncertainty.max_softmax(batch)  # higher = more anomalous
        elif name == "entropy":
            out[name] = uncertainty.predictive_entropy(batch)
        elif name == "mutual_information":
            out[name] = uncertainty.mutual_information(batch)
        elif name == "expected_entropy":
            out[name] = uncertainty.expected_entropy(batch)
    return out


def run_ood(
    train: Dataset,
    id_test: Dataset,
    ood_test: Dataset,
    settings: HarnessSettings,
) -> dict:
    """Train once, score both test sets, report all ranking metrics.

    Outliers are the positive class. Stochastic inference reports all four
    score types; the single simultaneous pass has no pass-to-pass spread, so
    it reports max-softmax and entropy only.
    """
    tree, hierarchy = fit(train, settings)
    doc = {"error": None, "stochastic": {}, "simultaneous": {}}
    for mode, score_names in (
        ("stochastic", OOD_SCORES_STOCHASTIC),
        ("simultaneous", OOD_SCORES_SIMULTANEOUS),
    ):
        id_batch = predict_batch(hierarchy, tree, id_test, settings, mode=mode)
        ood_batch = predict_batch(hierarchy, tree, ood_test, settings, mode=mode)
        if mode == "stochastic" and id_test.labels is not None:
            doc["error"] = uncertainty.error_rate(id_batch)
        id_scores = _ood_scores(id_batch, score_names)
        ood_scores = _ood_scores(ood_batch, score_names)
        for name in score_names:
            outcomes = ScoredBinaryOutcomes(
                scores=np.concatenate([id_scores[name], ood_scores[name]]),
                positives=np.concatenate(
                    [
                        np.zeros(id_test.n_rows, dtype=bool),
                        np.ones(ood_test.n_rows, dtype=bool),
                    ]
                ),
            )
            doc[mode][name] = {
                "auc_roc": roc_auc(outcomes),
                "auc_pr": pr_auc(outcomes),
                "fpr_at_tpr95": fpr_at_tpr(outcomes, 0.95),
                "detection_error": detection_error(outcomes),
            }
    return doc


def moons_ood_benchmark(settings: HarnessSettings, n_train=2000, n_test=500) -> dict:
    """Desk-scale stand-in: two moons in distribution, far-corner uniform outliers."""
    train = two_moons(n_train, derive_seed(settings.seed, "moons-train"))
    id_test = two_moons(n_test, derive_seed(settings.seed, "moons-test"))
    ood_test = uniform_box(n_test, derive_seed(settings.seed, "moons-ood"))
    return run_ood(train, id_test, ood_test, settings)


def run_regression(
    dataset: Dataset,
    settings: HarnessSettings,
    repeats: int = 20,
    train_fraction: float = 0.9,
    compare_stack: bool = True,
) -> list:
    """Gaussian-head regression over repeated splits; optionally also fits the
    parameter-matched stacked-dense endpoint for a paired comparison."""
    rows = []
    for i in range(repeats):
        seed = derive_seed(settings.seed, "regression", i)
        point = replace(settings, seed=seed, loss="gaussian-nll")
        train, test = train_test_split(dataset, train_fraction, seed)
        tree, hierarchy = fit(train, point)
        batch = predict_batch(hierarchy, tree, test, point)
        mu = batch.mean[:, 0]
        row = {
            "repeat": i,
            "rmse": float(np.sqrt(((mu - test.labels) ** 2).mean())),
            "nll": uncertainty.nll(batch),
        }
        if compare_stack:
            width = matched_stack_width(hierarchy.parameter_count(), train, point)
            stack_point = replace(point, width=width)
            stack_tree = _zero_threshold_tree(train, stack_point)
            stack_tree, stack_h = fit(train, stack_point, tree=stack_tree)
            stack_batch = predict_batch(stack_h, stack_tree, test, stack_point)
            stack_mu = stack_batch.mean[:, 0]
            row["rmse_stack"] = float(
                np.sqrt(((stack_mu - test.labels) ** 2).mean())
            )
            row["nll_stack"] = uncertainty.nll(stack_batch)
        rows.append(row)
    return rows
