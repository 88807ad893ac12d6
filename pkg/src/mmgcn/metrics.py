"""Evaluation and analysis: error metrics, temporal-drift instrumentation,
feature-independence scoring, and modality-relationship export."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .numerics import NumericalFailure
from .regularization import CovarianceSet

PATTERN_SMOOTHING = 1e-9

MODALITY_LABELS = ("neighborhood", "poi_similarity", "road_connectivity")


def rmse(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Root mean squared error over all cells."""
    predictions = np.asarray(predictions, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if predictions.shape != targets.shape or predictions.size == 0:
        raise ValueError(
            f"shape mismatch: predictions {predictions.shape} vs targets {targets.shape}"
        )
    return float(np.sqrt(np.mean((predictions - targets) ** 2)))


@dataclass(frozen=True)
class DriftEntry:
    week_index: int
    kl_divergence: float
    test_rmse: float | None = None


@dataclass(frozen=True)
class DriftReport:
    weeks: tuple


def _series_values(series) -> np.ndarray:
    return series.values if hasattr(series, "values") else np.asarray(series, dtype=float)


def _weekly_patterns(values: np.ndarray, week: int) -> np.ndarray:
    """City-total demand per time-of-week bin, one smoothed probability
    vector per week."""
    total = values.shape[1]
    if total == 0 or total % week != 0:
        raise ValueError(f"series of {total} intervals does not cover whole weeks of {week}")
    city = values.sum(axis=0).reshape(-1, week)
    smoothed = city + PATTERN_SMOOTHING
    return smoothed / smoothed.sum(axis=1, keepdims=True)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    return float(np.sum(p * np.log(p / q)))


def kl_temporal_drift(train_series, test_series, interval_minutes: int = 30) -> DriftReport:
    """KL divergence from the last training week's temporal pattern to each
    test week's pattern; both series must cover whole weeks.

    ``interval_minutes`` applies to raw arrays; a ``DemandSeries`` input
    carries its own interval.
    """
    if hasattr(train_series, "interval_minutes"):
        interval_minutes = train_series.interval_minutes
    week = 7 * (1440 // interval_minutes)
    train_patterns = _weekly_patterns(_series_values(train_series), week)
    test_patterns = _weekly_patterns(_series_values(test_series), week)
    reference = train_patterns[-1]
    entries = [
        DriftEntry(k, _kl(reference, pattern)) for k, pattern in enumerate(test_patterns)
    ]
    return DriftReport(tuple(entries))


def with_rmse(report: DriftReport, per_week_rmse) -> DriftReport:
    if len(per_week_rmse) != len(report.weeks):
        raise ValueError("one RMSE value per drift week is required")
    return DriftReport(
        tuple(
            DriftEntry(e.week_index, e.kl_divergence, float(r))
            for e, r in zip(report.weeks, per_week_rmse)
        )
    )


def feature_independence(activations: np.ndarray, include_diagonal: bool = True) -> float:
    """Negative log Frobenius norm of the feature covariance matrix.

    Higher means weaker co-variation between hidden features.  Rows are
    flattened (sample, vertex) pairs, columns are features.  Constant
    activations have zero covariance; that degenerate case returns +inf with
    a warning.  ``include_diagonal=False`` scores only off-diagonal entries,
    for readings that exclude the variances themselves.
    """
    activations = np.asarray(activations, dtype=float)
    if activations.ndim != 2 or activations.shape[0] < 2 or activations.shape[1] < 2:
        raise ValueError(f"need at least 2 rows and 2 features, got {activations.shape}")
    cov = np.cov(activations, rowvar=False)
    if not include_diagonal:
        cov = cov - np.diag(np.diagonal(cov))
    norm = float(np.linalg.norm(cov))
    if norm == 0.0:
        warnings.warn("feature covariance is exactly zero; independence is unbounded",
                      stacklevel=2)
        return float("inf")
    return -float(np.log(norm))


@dataclass(frozen=True)
class RelationshipMatrix:
    """Correlation form of the modality-mode covariance, plus the raw matrix."""

    layer_id: int
    matrix: np.ndarray
    raw: np.ndarray
    labels: tuple


def modality_relationship(
    cov: CovarianceSet, layer_id: int, labels=MODALITY_LABELS
) -> RelationshipMatrix:
    """Scale-free modality relationships R_ij = S_ij / sqrt(S_ii S_jj) from
    the modality-mode covariance."""
    sigma = cov.sigma[3]
    diag = np.diagonal(sigma)
    if (diag <= 0).any():
        raise NumericalFailure("modality covariance has a non-positive diagonal")
    scale = np.sqrt(diag)
    matrix = np.clip(sigma / np.outer(scale, scale), -1.0, 1.0)
    np.fill_diagonal(matrix, 1.0)
    if len(labels) != sigma.shape[0]:
        labels = tuple(f"modality_{i}" for i in range(sigma.shape[0]))
    return RelationshipMatrix(layer_id, matrix, sigma.copy(), tuple(labels))


# ---------------------------------------------------------------------------
# reference predictors used to sanity-check learned models

def stack_targets(samples) -> np.ndarray:
    return np.stack([s.target[:, 0] for s in samples])


def zeros_baseline_rmse(samples) -> float:
    targets = stack_targets(samples)
    return rmse(np.zeros_like(targets), targets)


def historical_average_baseline(train_samples) -> np.ndarray:
    """Per-region mean of the training targets, as a constant predictor."""
    return stack_targets(train_samples).mean(axis=0)


def historical_average_rmse(train_samples, eval_samples) -> float:
    prediction = historical_average_baseline(train_samples)
    targets = stack_targets(eval_samples)
    return rmse(np.broadcast_to(prediction, targets.shape), targets)
