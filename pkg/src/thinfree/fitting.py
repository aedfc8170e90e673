"""Polynomial regression in the monomial basis, scikit-learn style."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .polyalg import Polynomial, monomial_exponents
from .validation import check_points

__all__ = ["MonomialRegressor", "FitResult", "fit_distance_poly"]

RIDGE = 1e-12


def _design(X, exps):
    cols = [np.prod(X ** np.asarray(e)[None, :], axis=1) for e in exps]
    return np.stack(cols, axis=1)


class MonomialRegressor(RegressorMixin, BaseEstimator):
    """Fit ``y ~ sum c_a x^a`` over all monomials of total degree ``<= degree``.

    ``method="lstsq"`` solves the ridge-regularised normal equations on
    column-equilibrated features.  ``method="minimax"`` minimises the maximum
    absolute residual over the samples by linear programming.

    If the design matrix is rank deficient the degree is lowered until it is
    not; ``degree_`` holds the degree actually used.
    """

    def __init__(self, degree=2, method="lstsq", ridge=RIDGE):
        self.degree = degree
        self.method = method
        self.ridge = ridge

    def fit(self, X, y):
        X = check_points(X)
        y = np.asarray(y, dtype=float).ravel()
        if len(y) != len(X):
            raise ValueError(f"{len(X)} points but {len(y)} values")
        if self.method not in ("lstsq", "minimax"):
            raise ValueError(f"unknown method {self.method!r}")
        if int(self.degree) < 0:
            raise ValueError("degree must be nonnegative")

        dim = X.shape[1]
        degree = int(self.degree)
        while True:
            exps = monomial_exponents(dim, degree)
            V = _design(X, exps)
            if np.linalg.matrix_rank(V) == len(exps) or degree == 0:
                break
            degree -= 1

        scale = np.linalg.norm(V, axis=0)
        scale[scale == 0] = 1.0
        Vn = V / scale
        if self.method == "lstsq":
            G = Vn.T @ Vn + self.ridge * np.eye(len(exps))
            c = np.linalg.solve(G, Vn.T @ y)
        else:
            c = _minimax(Vn, y)
        coef = c / scale

        self.degree_ = degree
        self.exponents_ = exps
        self.coef_ = coef
        self.polynomial_ = Polynomial(dim, {e: float(a) for e, a in zip(exps, coef)})
        self.n_features_in_ = dim
        self.residual_ = float(np.max(np.abs(V @ coef - y))) if len(y) else 0.0
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_points(X, dim=self.n_features_in_)
        return _design(X, self.exponents_) @ self.coef_


def _minimax(Vn, y):
    n, m = Vn.shape
    ones = np.ones((n, 1))
    A = np.block([[Vn, -ones], [-Vn, -ones]])
    b = np.concatenate([y, -y])
    cost = np.zeros(m + 1)
    cost[-1] = 1.0
    res = linprog(cost, A_ub=A, b_ub=b, bounds=[(None, None)] * m + [(0, None)], method="highs")
    if not res.success:
        raise RuntimeError(f"minimax fit failed: {res.message}")
    return res.x[:m]


@dataclass(frozen=True)
class FitResult:
    polynomial: Polynomial
    degree: int
    requested_degree: int
    residual: float
    method: str


def fit_distance_poly(samples, degree, method="lstsq"):
    """Fit a polynomial to ``(point, value)`` samples.

    ``samples`` may be a list of pairs or a tuple ``(points, values)`` of
    arrays.  Returns a :class:`FitResult` carrying the max absolute residual
    over the samples and the degree actually used.
    """
    if isinstance(samples, tuple) and len(samples) == 2 and np.ndim(samples[1]) == 1:
        X, y = samples
    else:
        samples = list(samples)
        X = [p for p, _ in samples]
        y = [v for _, v in samples]
    X = check_points(X)
    n_basis = len(monomial_exponents(X.shape[1], int(degree)))
    if len(X) < n_basis:
        raise ValueError(f"{len(X)} samples cannot determine {n_basis} coefficients")
    model = MonomialRegressor(degree=degree, method=method).fit(X, y)
    return FitResult(model.polynomial_, model.degree_, int(degree), model.residual_, method)
