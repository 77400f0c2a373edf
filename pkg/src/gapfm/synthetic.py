"""Seeded synthetic graded datasets with latent structure and item popularity."""

from __future__ import annotations

import numpy as np

from .core import GradedDataset

# share of ratings per grade on a 1..5 scale, roughly movie-rating shaped
_GRADE_SHARES_5 = np.array([0.06, 0.11, 0.27, 0.34, 0.22])


def make_synthetic(
    num_users: int = 500,
    num_items: int = 300,
    ratings_per_user: int | tuple[int, int] = (60, 100),
    y_max: int = 5,
    latent_dim: int = 5,
    popularity: float = 1.0,
    selectivity: float = 1.5,
    noise: float = 0.5,
    seed: int = 0,
) -> GradedDataset:
    """Generate users who rate items they like, and grade them by affinity.

    Affinity is a latent inner product plus an item popularity offset.  Each
    user rates a Gumbel-top-k sample of items weighted by
    ``selectivity * affinity``; grades quantise ``affinity + noise`` by
    global quantiles.

    Args:
        ratings_per_user: exact count, or an inclusive ``(low, high)`` range.
        popularity: weight of the shared item-popularity offset.
    """
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(num_users, latent_dim)) / np.sqrt(latent_dim)
    Q = rng.normal(size=(num_items, latent_dim))
    pop = rng.normal(size=num_items)
    affinity = P @ Q.T + popularity * pop[None, :]

    if isinstance(ratings_per_user, tuple):
        lo, hi = ratings_per_user
        counts = rng.integers(lo, hi + 1, size=num_users)
    else:
        counts = np.full(num_users, int(ratings_per_user))
    counts = np.minimum(counts, num_items)

    keys = selectivity * affinity + rng.gumbel(size=affinity.shape)
    users, items = [], []
    for m in range(num_users):
        chosen = np.argpartition(-keys[m], counts[m] - 1)[: counts[m]]
        users.append(np.full(counts[m], m))
        items.append(chosen)
    users = np.concatenate(users)
    items = np.concatenate(items)

    latent = affinity[users, items] + noise * rng.normal(size=len(users))
    if y_max == 5:
        shares = _GRADE_SHARES_5
    else:
        shares = np.full(y_max, 1.0 / y_max)
    edges = np.quantile(latent, np.cumsum(shares)[:-1])
    grades = 1 + np.searchsorted(edges, latent, side="right")
    return GradedDataset(num_users, num_items, users, items, grades, y_max=y_max)
