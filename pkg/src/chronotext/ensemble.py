"""Blend several daters by a linear combination whose weights sum to 1,
fitted by least squares on a validation set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["BlendWeights", "fit_blend", "blend_predict"]


@dataclass(frozen=True)
class BlendWeights:
    """Sum-to-one blending weights, one per base method.

    Weights may be negative.  ``degenerate`` marks a fit that fell back to
    equal weights because the system could not be solved.
    """

    weights: tuple[float, ...]
    degenerate: bool = False

    def __post_init__(self):
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")


def fit_blend(estimates, truths, ridge: float = 1e-8,
              nonnegative: bool = False) -> BlendWeights:
    """Fit sum-to-one blending weights minimizing squared validation error.

    ``estimates`` is (n_docs, n_methods); ``truths`` length n_docs.  Solves
    the equality-constrained normal equations exactly; collinear methods
    are resolved by a small ridge term (identical methods split evenly).
    With ``nonnegative`` the weights are additionally constrained to be
    >= 0 and solved numerically.
    """
    X = np.asarray(estimates, dtype=float)
    y = np.asarray(truths, dtype=float)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValueError("need a 2-d estimate matrix with at least 2 methods")
    n, k = X.shape
    if y.shape != (n,):
        raise ValueError("truths length must match the number of rows")
    if n < k + 1:
        raise ValueError("need at least n_methods + 1 validation documents")
    if nonnegative:
        return _fit_nonnegative(X, y)
    gram = X.T @ X
    for lam in (0.0, ridge, ridge * 1e4):
        kkt = np.zeros((k + 1, k + 1))
        kkt[:k, :k] = gram + lam * np.eye(k)
        kkt[:k, k] = 1.0
        kkt[k, :k] = 1.0
        rhs = np.concatenate([X.T @ y, [1.0]])
        try:
            if np.linalg.cond(kkt) > 1e12:
                continue
            sol = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            continue
        w = sol[:k]
        if np.isfinite(w).all():
            w = w / w.sum()  # remove float drift from the constraint
            return BlendWeights(weights=tuple(w.tolist()))
    return BlendWeights(weights=tuple([1.0 / k] * k), degenerate=True)


def _fit_nonnegative(X, y):
    from scipy.optimize import minimize

    n, k = X.shape

    def objective(w):
        r = X @ w - y
        return float(r @ r)

    res = minimize(objective, np.full(k, 1.0 / k), method="SLSQP",
                   bounds=[(0.0, None)] * k,
                   constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0}])
    w = np.clip(res.x, 0.0, None)
    w = w / w.sum()
    return BlendWeights(weights=tuple(w.tolist()))


def blend_predict(weights: BlendWeights, estimates) -> float:
    """Dot product of the blend weights with one row of method estimates."""
    row = np.asarray(estimates, dtype=float)
    w = np.asarray(weights.weights)
    if row.shape != w.shape:
        raise ValueError("estimate row length must match the number of weights")
    return float(row @ w)
