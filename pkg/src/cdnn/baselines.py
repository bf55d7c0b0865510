"""Closed-form reference estimators: pooled OLS, per-arm OLS, and a
residual-on-residual average-effect estimator with cross-fitting."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateArmError,
    DegenerateTreatmentError,
    OverlapError,
    ShapeError,
)


@dataclass
class LinearModel:
    coefficients: np.ndarray
    intercept: float
    fitted_on: str
    ridge_fallback: bool = False

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.intercept + X @ self.coefficients


def _lstsq_with_fallback(A, y, context):
    """Least squares with a tiny-ridge fallback when A is rank deficient."""
    beta, _, rank, _ = np.linalg.lstsq(A, y, rcond=None)
    if rank < A.shape[1]:
        warnings.warn(f"{context}: rank-deficient design, ridge fallback (lambda=1e-8)")
        gram = A.T @ A + 1e-8 * np.eye(A.shape[1])
        beta = np.linalg.solve(gram, A.T @ y)
        return beta, True
    return beta, False


def ols_lr1(data):
    """Least squares of y on [x, t]; the effect estimate is the t coefficient.

    Returns (model, ite) where ite(X) is the constant treatment coefficient
    broadcast over the query points.
    """
    treated, control = data.arm_counts()
    if treated == 0 or control == 0:
        raise DegenerateTreatmentError("both treatment arms are required")
    n, d = data.x.shape
    if n <= d + 2:
        raise ShapeError(f"need n > d+2 samples, got n={n}, d={d}")
    A = np.column_stack([np.ones(n), data.x, data.t.astype(float)])
    beta, fell_back = _lstsq_with_fallback(A, data.y, "ols_lr1")
    model = LinearModel(beta[1:], float(beta[0]), "pooled", fell_back)
    tau = float(beta[-1])

    def ite(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.full(X.shape[0], tau)

    return model, ite


def ols_lr2(data):
    """Separate least squares per arm; effect is the prediction difference."""
    n, d = data.x.shape
    models = {}
    for arm, name in ((1, "treated"), (0, "control")):
        idx = data.t == arm
        n_arm = int(idx.sum())
        if n_arm <= d + 2:
            raise DegenerateArmError(f"{name} arm has {n_arm} samples, need > {d + 2}")
        A = np.column_stack([np.ones(n_arm), data.x[idx]])
        beta, fell_back = _lstsq_with_fallback(A, data.y[idx], f"ols_lr2[{name}]")
        models[arm] = LinearModel(beta[1:], float(beta[0]), name, fell_back)

    def ite(X):
        return models[1].predict(X) - models[0].predict(X)

    return models[1], models[0], ite


def _ridge_fit(X, y, lam):
    n = X.shape[0]
    A = np.column_stack([np.ones(n), X])
    penalty = lam * np.eye(A.shape[1])
    penalty[0, 0] = 0.0  # intercept unpenalized
    beta = np.linalg.solve(A.T @ A + penalty, A.T @ y)
    return beta


def _ridge_predict(beta, X):
    return beta[0] + X @ beta[1:]


def dml_ate(
    data,
    folds=2,
    crossfit=True,
    ridge_lambda=1e-3,
    clamp=(0.01, 0.99),
    oracle_g=None,
    oracle_e=None,
    seed=0,
):
    """Average effect via residual-on-residual regression.

    Nuisances are ridge-regularized linear fits of y on x and t on x,
    cross-fit over `folds` folds (set crossfit=False to fit on all rows, the
    whole-data protocol). Exact nuisance callables can be injected through
    oracle_g / oracle_e, bypassing fitting. Returns (ate, stderr).
    """
    treated, control = data.arm_counts()
    if treated == 0 or control == 0:
        raise DegenerateTreatmentError("both treatment arms are required")
    if folds < 2:
        raise ShapeError("need at least 2 folds")
    n = len(data)
    X, T, Y = data.x, data.t.astype(float), data.y

    if oracle_g is not None or oracle_e is not None:
        if oracle_g is None or oracle_e is None:
            raise ShapeError("inject both oracle_g and oracle_e or neither")
        ghat = np.array([oracle_g(x) for x in X])
        ehat = np.array([oracle_e(x) for x in X])
    elif not crossfit:
        bg = _ridge_fit(X, Y, ridge_lambda)
        be = _ridge_fit(X, T, ridge_lambda)
        ghat = _ridge_predict(bg, X)
        ehat = _ridge_predict(be, X)
    else:
        ghat = np.empty(n)
        ehat = np.empty(n)
        assignment = np.random.default_rng(seed).permutation(n) % folds
        for j in range(folds):
            hold = assignment == j
            bg = _ridge_fit(X[~hold], Y[~hold], ridge_lambda)
            be = _ridge_fit(X[~hold], T[~hold], ridge_lambda)
            ghat[hold] = _ridge_predict(bg, X[hold])
            ehat[hold] = _ridge_predict(be, X[hold])

    lo, hi = clamp
    n_clamped = int(np.sum((ehat < lo) | (ehat > hi)))
    if n_clamped:
        warnings.warn(f"dml_ate: clamped {n_clamped} propensity estimates to [{lo}, {hi}]")
        ehat = np.clip(ehat, lo, hi)

    t_resid = T - ehat
    y_resid = Y - ghat
    denom = float(np.sum(t_resid * t_resid))
    if denom < 1e-8:
        raise OverlapError("treatment residual variance is numerically zero")
    ate = float(np.sum(t_resid * y_resid) / denom)
    psi = (y_resid - ate * t_resid) * t_resid
    stderr = float(np.sqrt(np.sum(psi * psi)) / denom)
    return ate, stderr
