"""Effect-estimation error metrics.

Both metrics compare predicted per-unit effects against ground-truth per-unit
effects (differences of potential outcomes). The root-mean-square metric
penalizes per-unit misses; the average-effect error can be zero even when
every unit is wrong, which is why it is the easier number.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def _pair(pred, true):
    pred = np.asarray(pred, dtype=float).reshape(-1)
    true = np.asarray(true, dtype=float).reshape(-1)
    if pred.shape != true.shape:
        raise ShapeError("prediction and truth lengths differ")
    if pred.size == 0:
        raise ShapeError("empty effect vectors")
    return pred, true


def sqrt_pehe(pred_ite, true_ite):
    """Root mean squared error between predicted and true per-unit effects."""
    pred, true = _pair(pred_ite, true_ite)
    diff = pred - true
    return float(np.sqrt(np.mean(diff * diff)))


def ate_error_signed(pred_ite, true_ite):
    """Signed mean difference: mean(pred) - mean(true)."""
    pred, true = _pair(pred_ite, true_ite)
    return float(np.mean(pred - true))


def eps_ate(pred_ite, true_ite):
    """Absolute error of the average effect, |mean(pred) - mean(true)|."""
    return abs(ate_error_signed(pred_ite, true_ite))
