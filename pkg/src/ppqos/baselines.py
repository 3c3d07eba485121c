"""UMEAN and IMEAN reference predictors.

UMEAN predicts a user's unknown QoS with that user's training row mean;
IMEAN uses the service's column mean. Cold users/services fall back to
the global training mean.
"""

from __future__ import annotations

import numpy as np

from .dataset import QosMatrix


def _global_mean(train: QosMatrix) -> float:
    if train.n_entries == 0:
        raise ValueError("cannot predict from an empty training matrix")
    return float(np.nan_to_num(train.values).sum() / train.n_entries)


def predict_umean(train: QosMatrix, u: int, s: int) -> float:
    """Row mean of user u's training values; global mean if u has none."""
    row = train.values[u]
    observed = ~np.isnan(row)
    if observed.any():
        return float(row[observed].mean())
    return _global_mean(train)


def predict_imean(train: QosMatrix, u: int, s: int) -> float:
    """Column mean of service s's training values; global mean fallback."""
    col = train.values[:, s]
    observed = ~np.isnan(col)
    if observed.any():
        return float(col[observed].mean())
    return _global_mean(train)


def predict_matrix_umean(train: QosMatrix) -> np.ndarray:
    """UMEAN predictions for every cell at once."""
    g = _global_mean(train)
    mask = train.mask
    counts = mask.sum(axis=1)
    sums = np.nan_to_num(train.values).sum(axis=1)
    means = np.where(counts > 0, sums / np.maximum(counts, 1), g)
    return np.broadcast_to(means[:, None], train.shape).copy()


def predict_matrix_imean(train: QosMatrix) -> np.ndarray:
    """IMEAN predictions for every cell at once."""
    g = _global_mean(train)
    mask = train.mask
    counts = mask.sum(axis=0)
    sums = np.nan_to_num(train.values).sum(axis=0)
    means = np.where(counts > 0, sums / np.maximum(counts, 1), g)
    return np.broadcast_to(means[None, :], train.shape).copy()
