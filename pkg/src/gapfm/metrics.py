"""Exact ranking metrics for graded relevance.

Every metric takes a :class:`RankedJudgedList`, a ranked view of a candidate
pool where unjudged items carry grade 0.  Metrics that cannot be defined for
a list (for example, no judged entries) return ``None``; :func:`aggregate`
skips those users and counts them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import GapfmError, ThresholdVector, rank_items


class UndefinedAggregateError(GapfmError, ValueError):
    pass


@dataclass(frozen=True)
class RankedJudgedList:
    """Items in rank order (position 1 first) with their grades."""

    items: np.ndarray
    grades: np.ndarray

    def __post_init__(self) -> None:
        items = np.asarray(self.items, dtype=np.int64).reshape(-1)
        grades = np.asarray(self.grades, dtype=np.int64).reshape(-1)
        if items.shape != grades.shape:
            raise ValueError("items and grades must align")
        if grades.size and grades.min() < 0:
            raise ValueError("grades must be >= 0")
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "grades", grades)

    @classmethod
    def from_grades(cls, grades: Sequence[int]) -> "RankedJudgedList":
        """List whose items are simply numbered by position."""
        return cls(np.arange(len(grades)), np.asarray(grades))

    @classmethod
    def from_scores(
        cls, items: np.ndarray, scores: np.ndarray, grades: np.ndarray
    ) -> "RankedJudgedList":
        """Rank ``items`` by descending score.

        Ties resolve by ascending item id, so the outcome never depends on
        the order candidates were supplied in.
        """
        items = np.asarray(items, dtype=np.int64)
        scores = np.asarray(scores, dtype=np.float64)
        grades = np.asarray(grades, dtype=np.int64)
        by_id = np.argsort(items, kind="stable")
        items, scores, grades = items[by_id], scores[by_id], grades[by_id]
        order = np.argsort(rank_items(scores))
        return cls(items[order], grades[order])

    def __len__(self) -> int:
        return len(self.items)

    @property
    def judged(self) -> np.ndarray:
        return self.grades > 0

    @property
    def num_judged(self) -> int:
        return int(np.count_nonzero(self.grades))


def _cutoff(lst: RankedJudgedList, k: int | None) -> int:
    if k is None or k == "full":
        return len(lst)
    if k < 0:
        raise ValueError("cutoff must be nonnegative")
    return min(int(k), len(lst))


def gap_exact(
    lst: RankedJudgedList, thresholds: ThresholdVector, k: int | None = None
) -> float | None:
    """Graded average precision, optionally truncated at rank ``k``.

    Truncation applies to the outer sum only; the normaliser always covers
    every judged item in the list, so GAP@k never exceeds full GAP.
    """
    if lst.num_judged == 0:
        return None
    table = thresholds.table
    pos = np.flatnonzero(lst.judged)
    g = lst.grades[pos]
    z = float(table[g].sum())
    cut = _cutoff(lst, k)
    keep = pos < cut
    pos, g_top = pos[keep], g[keep]
    if pos.size == 0:
        return 0.0
    # judged items only; row a sums over judged items at or above position a
    credit = table[np.minimum.outer(g_top, g_top)]
    inner = np.tril(credit).sum(axis=1)
    return float(np.sum(inner / (pos + 1)) / z)


def ap_at_k(lst: RankedJudgedList, k: int | None = None, relevance_threshold: int = 1) -> float | None:
    """Binary average precision with items at or above the threshold relevant."""
    rel = lst.grades >= relevance_threshold
    n_rel = int(rel.sum())
    if n_rel == 0:
        return None
    cut = _cutoff(lst, k)
    hits = np.cumsum(rel[:cut])
    pos = np.arange(1, cut + 1)
    return float(np.sum((hits / pos)[rel[:cut]]) / n_rel)


def _dcg(grades: np.ndarray) -> float:
    gains = np.exp2(grades.astype(np.float64)) - 1.0
    discounts = np.log2(np.arange(2, len(grades) + 2, dtype=np.float64))
    return float(np.sum(gains / discounts))


def ndcg_at_k(lst: RankedJudgedList, k: int | None = None) -> float | None:
    """NDCG with ``2**grade - 1`` gains and ``log2(position + 1)`` discounts."""
    if lst.num_judged == 0:
        return None
    cut = _cutoff(lst, k)
    ideal = np.sort(lst.grades)[::-1][:cut]
    return _dcg(lst.grades[:cut]) / _dcg(ideal)


def precision_at_k(lst: RankedJudgedList, k: int, relevance_threshold: int) -> float:
    """Fraction of the top ``k`` slots holding an item graded at least the threshold."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = np.count_nonzero(lst.grades[:k] >= relevance_threshold)
    return hits / k


def gp_at_n(lst: RankedJudgedList, thresholds: ThresholdVector, n: int) -> float | None:
    """Graded precision at ``n``.

    Each judged item in the top ``n`` earns the running sum at
    ``min(grade, c)`` relative to the running sum at ``c``, where ``c`` is
    the ``n``-th highest grade among the judged items.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    judged = np.sort(lst.grades[lst.judged])[::-1]
    if len(judged) < n:
        return None
    table = thresholds.table
    c = int(judged[n - 1])
    top = lst.grades[:n]
    top = top[top > 0]
    xi = table[np.minimum(top, c)] / table[c]
    return float(xi.sum() / n)


def gr_at_n(lst: RankedJudgedList, thresholds: ThresholdVector, n: int | None) -> float | None:
    """Graded recall at ``n``: captured share of the GAP normaliser."""
    if lst.num_judged == 0:
        return None
    table = thresholds.table
    z = float(table[lst.grades].sum())
    cut = _cutoff(lst, n)
    return float(table[lst.grades[:cut]].sum() / z)


@dataclass(frozen=True)
class Aggregate:
    mean: float
    count: int
    skipped: int


def aggregate(values: Iterable[float | None]) -> Aggregate:
    """Mean over measurable users; ``None`` (or NaN) entries are skipped."""
    kept: list[float] = []
    skipped = 0
    for v in values:
        if v is None or (isinstance(v, float) and math.isnan(v)):
            skipped += 1
        else:
            kept.append(float(v))
    if not kept:
        raise UndefinedAggregateError(f"no measurable users ({skipped} skipped)")
    return Aggregate(math.fsum(kept) / len(kept), len(kept), skipped)
