"""Validity classifier: binary logistic regression fitted by IRLS.

Two-class multinomial logistic regression reduces to the binary model, so
only that is implemented. Invalid is the positive class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from ..data import AggregatedDataset
from ..errors import SingleClassError

RIDGE = 1e-6


@dataclass(frozen=True, eq=False)
class ValidityClassifier:
    coefficients: np.ndarray
    intercept: float
    train_accuracy: float
    iterations: int = 0
    converged: bool = True

    def decision(self, configs) -> np.ndarray:
        return np.asarray(configs, dtype=np.float64) @ self.coefficients + self.intercept

    def predict_proba(self, configs) -> np.ndarray:
        """Probability that each configuration is invalid."""
        return expit(self.decision(configs))

    def predict(self, configs) -> np.ndarray:
        return self.predict_proba(configs) >= 0.5


def _penalized_nll(A, y, w, lam) -> float:
    eta = A @ w
    ll = y * log_expit(eta) + (1 - y) * log_expit(-eta)
    return float(-ll.sum() + 0.5 * lam * (w @ w))


def fit_logistic_irls(X, y, *, lam: float = RIDGE, tol: float = 1e-8,
                      max_iter: int = 100) -> tuple[np.ndarray, float, int, bool]:
    """Newton/IRLS with a small ridge penalty on all weights (intercept included).

    Returns (coefficients, intercept, iterations, converged). Steps are
    halved while they fail to decrease the penalized loss.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.column_stack([np.ones(X.shape[0]), X])
    w = np.zeros(A.shape[1])
    eye = np.eye(A.shape[1])
    loss = _penalized_nll(A, y, w, lam)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = expit(A @ w)
        grad = A.T @ (p - y) + lam * w
        hess = (A * (p * (1 - p))[:, None]).T @ A + lam * eye
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        scale = 1.0
        while True:
            cand = w - scale * step
            cand_loss = _penalized_nll(A, y, cand, lam)
            if cand_loss <= loss or scale < 1e-10:
                break
            scale *= 0.5
        change = float(np.max(np.abs(cand - w)))
        w, loss = cand, cand_loss
        if change < tol:
            converged = True
            break
    return w[1:], float(w[0]), it, converged


def fit_validity_classifier(ds: AggregatedDataset) -> ValidityClassifier:
    invalid = ~ds.valid
    if invalid.all() or not invalid.any():
        raise SingleClassError("validity labels contain a single class")
    X = ds.configs.astype(np.float64)
    y = invalid.astype(np.float64)
    coef, intercept, iters, converged = fit_logistic_irls(X, y)
    pred = (X @ coef + intercept) >= 0.0
    accuracy = float(np.mean(pred == invalid))
    return ValidityClassifier(coef, intercept, accuracy, iters, converged)
