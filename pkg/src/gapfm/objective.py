"""Smoothed GAP surrogate and its analytic gradients.

This is the readable numpy reference.  The trainer runs the fused kernels in
:mod:`gapfm._kernels`, which are tested against these functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    EmptyProfileError,
    GradedDataset,
    ModelFactors,
    ThresholdVector,
    beta_matrix,
)


def logistic(x):
    """``1 / (1 + exp(-x))`` without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


def logistic_deriv(x):
    """``g(x) * (1 - g(x))``, written as ``g(x) * g(-x)`` so it is exactly even."""
    x = np.asarray(x, dtype=np.float64)
    out = logistic(x) * logistic(-x)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class UserLossContext:
    """One user's rated items with scores and pairwise credits."""

    user: int
    items: np.ndarray
    grades: np.ndarray
    beta: np.ndarray
    scores: np.ndarray

    def __post_init__(self) -> None:
        if len(self.items) == 0:
            raise EmptyProfileError(f"user {self.user} has no rated items")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    @classmethod
    def build(
        cls,
        model: ModelFactors,
        dataset: GradedDataset,
        thresholds: ThresholdVector,
        m: int,
    ) -> "UserLossContext":
        items = dataset.user_items(m)
        grades = dataset.user_grades(m)
        if len(items) == 0:
            raise EmptyProfileError(f"user {m} has no rated items")
        return cls(m, items, grades, beta_matrix(thresholds, grades), model.scores(m, items))

    @property
    def diff(self) -> np.ndarray:
        """``diff[i, j] = f_j - f_i``."""
        return self.scores[None, :] - self.scores[:, None]


def smoothed_gap_user(ctx: UserLossContext) -> float:
    """Smoothed GAP of one user without the ``1/Z`` factor; includes j == i."""
    inner = (ctx.beta * logistic(ctx.diff)).sum(axis=1)
    return float(np.dot(logistic(ctx.scores), inner))


def objective_value(
    model: ModelFactors, dataset: GradedDataset, thresholds: ThresholdVector, reg: float
) -> float:
    """Summed smoothed GAP over users minus the L2 penalty on both factor matrices."""
    model.check_compatible(dataset)
    total = 0.0
    for m in np.flatnonzero(dataset.sizes):
        total += smoothed_gap_user(UserLossContext.build(model, dataset, thresholds, int(m)))
    penalty = 0.5 * reg * (np.sum(model.U**2) + np.sum(model.V**2))
    return float(total - penalty)


def grad_user(ctx: UserLossContext, model: ModelFactors, reg: float) -> np.ndarray:
    """Gradient of the objective with respect to ``U[:, ctx.user]``."""
    V_s = model.V[:, ctx.items]
    G = logistic(ctx.diff)
    Gp = logistic_deriv(ctx.diff)
    g_f = logistic(ctx.scores)
    gp_f = logistic_deriv(ctx.scores)
    point = gp_f * (ctx.beta * G).sum(axis=1)
    W = g_f[:, None] * ctx.beta * Gp
    # sum_ij W_ij (V_j - V_i)
    pair = V_s @ W.sum(axis=0) - V_s @ W.sum(axis=1)
    return V_s @ point + pair - reg * model.U[:, ctx.user]


def grad_item(
    m: int, i: int, ctx: UserLossContext, model: ModelFactors, reg: float
) -> np.ndarray:
    """User ``m``'s contribution to the gradient with respect to ``V[:, i]``."""
    if ctx.user != m:
        raise ValueError(f"context belongs to user {ctx.user}, not {m}")
    hit = np.flatnonzero(ctx.items == i)
    if hit.size == 0:
        raise ValueError(f"item {i} is not rated by user {m}")
    a = int(hit[0])
    d = ctx.diff[a]
    g_f = logistic(ctx.scores)
    b = ctx.beta[a]
    coef = logistic_deriv(ctx.scores[a]) * np.dot(b, logistic(d))
    # beta is symmetric, so beta_ji == beta_ij
    coef += np.dot(b * (g_f - g_f[a]), logistic_deriv(d))
    return coef * model.U[:, m] - reg * model.V[:, i]
