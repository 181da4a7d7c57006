from __future__ import annotations

import numpy as np
from numba import njit

from ..core import InvalidArgument
from ..ingest import EncodedMatrix
from .base import FittedModel


def _centered_scaled(X: np.ndarray):
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    live = scale > 0
    Xs = np.zeros_like(X)
    Xs[:, live] = (X[:, live] - mean[live]) / scale[live]
    return Xs, mean, scale, live


def fit_ols(train: EncodedMatrix) -> FittedModel:
    """Least squares with intercept via SVD on standardized columns.

    Rank-deficient designs get the minimum-norm solution (in standardized
    units) and ``info["min_norm"] = True``.
    """
    X, y = np.asarray(train.values, dtype=float), np.asarray(train.target, dtype=float)
    if X.shape[0] == 0:
        raise InvalidArgument("empty training matrix")
    Xs, mean, scale, live = _centered_scaled(X)
    y_mean = float(y.mean())
    coef = np.zeros(X.shape[1])
    rank = 0
    if live.any():
        sol, _, rank, _ = np.linalg.lstsq(Xs[:, live], y - y_mean, rcond=None)
        coef[live] = sol / scale[live]
    rank_deficient = bool(rank < X.shape[1])
    intercept = y_mean - float(mean @ coef)
    return FittedModel("ols", train.target_name, tuple(train.columns), intercept, coef=coef,
                       encoding=train.meta,
                       info={"min_norm": rank_deficient, "rank": int(rank)})


@njit(cache=True)
def _coordinate_descent(XT, y, penalty, max_sweeps, tol):
    """Cyclic soft-threshold updates over the rows of ``XT`` (one per feature).

    Returns (coefficients, sweeps, converged).
    """
    p = XT.shape[0]
    col_sq = np.zeros(p)
    for j in range(p):
        col_sq[j] = XT[j] @ XT[j]
    b = np.zeros(p)
    resid = y.copy()
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        max_delta = 0.0
        for j in range(p):
            rho = XT[j] @ resid + col_sq[j] * b[j]
            new = np.sign(rho) * max(abs(rho) - penalty[j], 0.0) / col_sq[j]
            delta = new - b[j]
            if delta != 0.0:
                resid -= delta * XT[j]
                b[j] = new
                max_delta = max(max_delta, abs(delta))
        if max_delta < tol:
            return b, sweeps, True
    return b, sweeps, False


def fit_lasso(train: EncodedMatrix, lam: float, max_sweeps: int = 10_000,
              tol: float = 1e-8, standardize: bool = False) -> FittedModel:
    """Coordinate descent for ``0.5 * ||y - b0 - X b||^2 + lam * ||b||_1``.

    The intercept is unpenalized. Sweeps run in a per-column rescaled basis,
    which leaves the objective unchanged unless ``standardize`` is set, in
    which case the penalty applies to standardized coefficients instead.
    Stops when the largest coefficient change in a sweep drops below ``tol``.
    """
    if lam < 0:
        raise InvalidArgument("lambda must be nonnegative")
    X, y = np.asarray(train.values, dtype=float), np.asarray(train.target, dtype=float)
    Xs, mean, scale, live = _centered_scaled(X)
    yc = y - y.mean()
    p = X.shape[1]
    # penalty on the rescaled coefficient b'_j = b_j * scale_j
    penalty = np.zeros(p)
    penalty[live] = lam if standardize else lam / scale[live]
    active = np.flatnonzero(live)
    b = np.zeros(p)
    sol, sweeps, converged = _coordinate_descent(np.ascontiguousarray(Xs[:, active].T), yc,
                                                 penalty[active], max_sweeps, tol)
    b[active] = sol
    coef = np.zeros(p)
    coef[live] = b[live] / scale[live]
    intercept = float(y.mean() - mean @ coef)
    return FittedModel("lasso", train.target_name, tuple(train.columns), intercept, coef=coef,
                       encoding=train.meta,
                       info={"lambda": float(lam), "sweeps": sweeps, "converged": converged,
                             "standardize": standardize})
