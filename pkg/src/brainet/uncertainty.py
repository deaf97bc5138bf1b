"""Calibration and uncertainty measures over single- or multi-pass outputs.

Everything works on a :class:`PredictiveBatch`: a (T, N, K) stack of class
probabilities, or (T, N, 2) mean/variance pairs for regression. Natural
logarithms throughout. For out-of-distribution scoring the convention is
"higher means more anomalous": negate max-softmax, keep the entropies and
mutual information as they are.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANCE_FLOOR = 1e-6


@dataclass
class PredictiveBatch:
    """Stacked per-pass outputs plus optional targets."""

    per_pass: np.ndarray  # (T, N, K) probabilities or (T, N, 2) mean/variance
    kind: str = "classification"
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.per_pass = np.asarray(self.per_pass, dtype=np.float64)
        if self.per_pass.ndim != 3 or self.per_pass.shape[0] < 1:
            raise ValueError("per_pass must be a (T, N, K) stack with T >= 1")
        if self.kind not in ("classification", "regression"):
            raise ValueError(f"unknown batch kind {self.kind!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape[0] != self.per_pass.shape[1]:
                raise ValueError("labels must have one entry per sample")

    @property
    def passes(self) -> int:
        return self.per_pass.shape[0]

    @property
    def mean(self) -> np.ndarray:
        """Mean probabilities, or moment-matched (mean, variance) for regression."""
        if self.kind == "classification":
            return self.per_pass.mean(axis=0)
        mu = self.per_pass[:, :, 0]
        var = self.per_pass[:, :, 1]
        mixture_mean = mu.mean(axis=0)
        mixture_var = (var + mu**2).mean(axis=0) - mixture_mean**2
        return np.stack([mixture_mean, mixture_var], axis=1)

    def _need_classification(self):
        if self.kind != "classification":
            raise ValueError("measure defined for classification batches only")

    def _need_labels(self):
        if self.labels is None:
            raise ValueError("measure needs labels")


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    """Row entropies in nats with the 0 * log 0 := 0 convention."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(p), 0.0)
    return -terms.sum(axis=-1)


def max_softmax(batch: PredictiveBatch) -> np.ndarray:
    """Per-sample confidence: the largest mean class probability."""
    batch._need_classification()
    return batch.mean.max(axis=1)


def predictive_entropy(batch: PredictiveBatch) -> np.ndarray:
    """Entropy of the mean predictive distribution (total uncertainty)."""
    batch._need_classification()
    return _entropy_rows(batch.mean)


def expected_entropy(batch: PredictiveBatch) -> np.ndarray:
    """Mean over passes of per-pass entropy (aleatoric part)."""
    batch._need_classification()
    return _entropy_rows(batch.per_pass).mean(axis=0)


def mutual_information(batch: PredictiveBatch) -> np.ndarray:
    """Predictive minus expected entropy, clamped at zero (epistemic part)."""
    return np.maximum(predictive_entropy(batch) - expected_entropy(batch), 0.0)


def nll(batch: PredictiveBatch) -> float:
    """Mean negative log-likelihood of the labels under the mean prediction."""
    batch._need_labels()
    if batch.kind == "classification":
        p_true = batch.mean[np.arange(batch.mean.shape[0]), batch.labels.astype(int)]
        return float(-np.log(np.maximum(p_true, 1e-300)).mean())
    mu, var = batch.mean[:, 0], np.maximum(batch.mean[:, 1], VARIANCE_FLOOR)
    y = batch.labels.astype(np.float64)
    return float(
        (0.5 * (np.log(2 * np.pi * var) + (y - mu) ** 2 / var)).mean()
    )


def brier(batch: PredictiveBatch) -> float:
    """Mean squared distance between mean probabilities and one-hot labels."""
    batch._need_classification()
    batch._need_labels()
    mean = batch.mean
    onehot = np.zeros_like(mean)
    onehot[np.arange(mean.shape[0]), batch.labels.astype(int)] = 1.0
    return float(((mean - onehot) ** 2).sum(axis=1).mean())


def error_rate(batch: PredictiveBatch) -> float:
    """Top-1 classification error of the mean prediction."""
    batch._need_classification()
    batch._need_labels()
    return float((batch.mean.argmax(axis=1) != batch.labels.astype(int)).mean())


def reliability_bins(batch: PredictiveBatch, bins: int = 15):
    """Per-bin (count, mean confidence, accuracy) over equal-width bins.

    Bins are right-inclusive over (0, 1]; a confidence of exactly 0 lands in
    the first bin.
    """
    if bins < 1:
        raise ValueError("bins must be a positive integer")
    batch._need_classification()
    batch._need_labels()
    conf = max_softmax(batch)
    correct = (batch.mean.argmax(axis=1) == batch.labels.astype(int)).astype(float)
    idx = np.clip(np.ceil(conf * bins).astype(int) - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(float)
    conf_sum = np.bincount(idx, weights=conf, minlength=bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=bins)
    with np.errstate(invalid="ignore"):
        mean_conf = np.where(counts > 0, conf_sum / counts, 0.0)
        accuracy = np.where(counts > 0, acc_sum / counts, 0.0)
    return counts, mean_conf, accuracy


def ece(batch: PredictiveBatch, bins: int = 15) -> float:
    """Expected calibration error: count-weighted |accuracy - confidence| per bin."""
    counts, mean_conf, accuracy = reliability_bins(batch, bins)
    n = counts.sum()
    return float((counts / n * np.abs(accuracy - mean_conf)).sum())
