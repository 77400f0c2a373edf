"""Shared domain types: graded datasets, factor models, thresholding probabilities."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class GapfmError(Exception):
    """Base class for all errors raised by this package."""


class EmptyProfileError(GapfmError, ValueError):
    pass


class InvalidScoreError(GapfmError, ValueError):
    pass


class DimensionError(GapfmError, ValueError):
    pass


class GradedDataset:
    """Sparse user x item matrix of integer grades, stored per user.

    Entries live in CSR form: the items of user ``m`` are
    ``items[indptr[m]:indptr[m + 1]]`` in ascending index order, with the
    matching ``grades`` slice.  Instances are treated as immutable.

    Args:
        num_users: number of users M.
        num_items: number of items N.
        users, items, grades: parallel arrays of triples.
        y_max: grade ceiling; inferred as the largest grade when omitted.
    """

    def __init__(
        self,
        num_users: int,
        num_items: int,
        users: Sequence[int] | np.ndarray,
        items: Sequence[int] | np.ndarray,
        grades: Sequence[int] | np.ndarray,
        y_max: int | None = None,
    ) -> None:
        users = np.asarray(users, dtype=np.int64).reshape(-1)
        items = np.asarray(items, dtype=np.int64).reshape(-1)
        grades_in = np.asarray(grades).reshape(-1)
        if not (len(users) == len(items) == len(grades_in)):
            raise DimensionError("users, items and grades must have equal length")
        if grades_in.size and not np.all(np.equal(np.mod(grades_in, 1), 0)):
            raise ValueError("grades must be integers")
        grades_i = grades_in.astype(np.int64)
        if num_users < 0 or num_items < 0:
            raise ValueError("dataset dimensions must be nonnegative")
        if users.size:
            if users.min() < 0 or users.max() >= num_users:
                raise IndexError("user index out of range")
            if items.min() < 0 or items.max() >= num_items:
                raise IndexError("item index out of range")
            if grades_i.min() < 1:
                raise ValueError("grades must be >= 1")
        if y_max is None:
            y_max = int(grades_i.max()) if grades_i.size else 1
        if y_max < 1:
            raise ValueError("y_max must be >= 1")
        if grades_i.size and grades_i.max() > y_max:
            raise ValueError(f"grade {int(grades_i.max())} exceeds y_max={y_max}")

        order = np.lexsort((items, users))
        users, items, grades_i = users[order], items[order], grades_i[order]
        if users.size > 1:
            dup = (users[1:] == users[:-1]) & (items[1:] == items[:-1])
            if dup.any():
                k = int(np.flatnonzero(dup)[0])
                raise ValueError(f"duplicate entry for user {users[k]}, item {items[k]}")

        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.y_max = int(y_max)
        self.indptr = np.zeros(self.num_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(users, minlength=self.num_users), out=self.indptr[1:])
        self.items = items
        self.grades = grades_i

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[tuple[int, int, int]],
        num_users: int | None = None,
        num_items: int | None = None,
        y_max: int | None = None,
    ) -> "GradedDataset":
        arr = np.asarray(list(triples), dtype=np.int64).reshape(-1, 3)
        if num_users is None:
            num_users = int(arr[:, 0].max()) + 1 if len(arr) else 0
        if num_items is None:
            num_items = int(arr[:, 1].max()) + 1 if len(arr) else 0
        return cls(num_users, num_items, arr[:, 0], arr[:, 1], arr[:, 2], y_max=y_max)

    @property
    def sizes(self) -> np.ndarray:
        """Per-user profile sizes S_m."""
        return np.diff(self.indptr)

    @property
    def n_entries(self) -> int:
        return int(self.indptr[-1])

    def __len__(self) -> int:
        return self.n_entries

    def user_items(self, m: int) -> np.ndarray:
        return self.items[self.indptr[m] : self.indptr[m + 1]]

    def user_grades(self, m: int) -> np.ndarray:
        return self.grades[self.indptr[m] : self.indptr[m + 1]]

    def user_rows(self) -> np.ndarray:
        """User index of every stored entry, aligned with ``items``."""
        return np.repeat(np.arange(self.num_users), self.sizes)

    def triples(self) -> np.ndarray:
        return np.column_stack([self.user_rows(), self.items, self.grades])

    def subset(self, mask: np.ndarray) -> "GradedDataset":
        """Dataset of the entries selected by a boolean mask over stored entries."""
        mask = np.asarray(mask, dtype=bool)
        return GradedDataset(
            self.num_users,
            self.num_items,
            self.user_rows()[mask],
            self.items[mask],
            self.grades[mask],
            y_max=self.y_max,
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GradedDataset):
            return NotImplemented
        return (
            self.num_users == other.num_users
            and self.num_items == other.num_items
            and self.y_max == other.y_max
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.items, other.items)
            and np.array_equal(self.grades, other.grades)
        )

    def __repr__(self) -> str:
        return (
            f"GradedDataset(num_users={self.num_users}, num_items={self.num_items}, "
            f"entries={self.n_entries}, y_max={self.y_max})"
        )


@dataclass(frozen=True)
class ThresholdVector:
    """Per-grade thresholding probabilities and their running sums.

    ``deltas[l - 1]`` is the probability for grade ``l`` and
    ``cumulative[l - 1]`` the sum of the first ``l`` deltas.  ``table`` is
    the same running sum indexed directly by grade, with ``table[0] == 0``
    standing for unjudged items.
    """

    deltas: np.ndarray
    cumulative: np.ndarray = field(init=False)
    table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        deltas = np.array(self.deltas, dtype=np.float64).reshape(-1)
        if deltas.size == 0:
            raise ValueError("at least one grade is required")
        if np.any(deltas <= 0) or np.any(deltas > 1) or not np.all(np.isfinite(deltas)):
            raise ValueError("each delta must lie in (0, 1]")
        deltas.setflags(write=False)
        cumulative = np.cumsum(deltas)
        cumulative.setflags(write=False)
        table = np.concatenate([[0.0], cumulative])
        table.setflags(write=False)
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "cumulative", cumulative)
        object.__setattr__(self, "table", table)

    @property
    def y_max(self) -> int:
        return len(self.deltas)

    def cum(self, grade: int) -> float:
        """Running sum up to ``grade`` (0 for an unjudged item)."""
        return float(self.table[grade])


def make_thresholds(y_max: int) -> ThresholdVector:
    """Exponential grade mapping: ``(2**l - 1) / 2**y_max``, or 1 for binary data."""
    if int(y_max) != y_max or y_max < 1:
        raise ValueError(f"y_max must be an integer >= 1, got {y_max!r}")
    y_max = int(y_max)
    if y_max == 1:
        return ThresholdVector(np.array([1.0]))
    levels = np.arange(1, y_max + 1, dtype=np.float64)
    return ThresholdVector((2.0**levels - 1.0) / 2.0**y_max)


def _check_grade(thresholds: ThresholdVector, grade: int) -> None:
    if not 1 <= grade <= thresholds.y_max:
        raise ValueError(f"grade {grade} outside [1, {thresholds.y_max}]")


def beta(thresholds: ThresholdVector, y_i: int, y_j: int) -> float:
    """Pairwise credit of two judged items.

    Evaluates the two-branch indicator form directly; it always equals the
    running sum at ``min(y_i, y_j)``.
    """
    _check_grade(thresholds, y_i)
    _check_grade(thresholds, y_j)
    cum = thresholds.table
    return float((y_i < y_j) * cum[y_i] + (y_j <= y_i) * cum[y_j])


def beta_matrix(thresholds: ThresholdVector, grades: np.ndarray) -> np.ndarray:
    """All pairwise credits for one user's grades, as an S x S array."""
    grades = np.asarray(grades, dtype=np.int64)
    return thresholds.table[np.minimum.outer(grades, grades)]


def z_norm(thresholds: ThresholdVector, user_grades: Iterable[int]) -> float:
    """GAP normaliser: sum over the user's judged items of ``table[grade]``."""
    grades = np.asarray(list(user_grades), dtype=np.int64)
    if grades.size == 0:
        raise EmptyProfileError("normaliser undefined for an empty profile")
    if grades.min() < 1 or grades.max() > thresholds.y_max:
        raise ValueError("grade outside threshold range")
    counts = np.bincount(grades, minlength=thresholds.y_max + 1)[1:]
    return float(np.dot(counts, thresholds.cumulative))


@dataclass
class ModelFactors:
    """Latent factors: ``U`` is D x M (one column per user), ``V`` is D x N.

    Both matrices are kept in Fortran order so that a user's or item's
    column is contiguous; ``U.T`` and ``V.T`` are then C-contiguous row views
    that the training kernels update in place.
    """

    U: np.ndarray
    V: np.ndarray

    def __post_init__(self) -> None:
        self.U = np.asfortranarray(self.U, dtype=np.float64)
        self.V = np.asfortranarray(self.V, dtype=np.float64)
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[0] != self.V.shape[0]:
            raise DimensionError(f"incompatible factor shapes {self.U.shape} and {self.V.shape}")

    @property
    def dim(self) -> int:
        return self.U.shape[0]

    @property
    def num_users(self) -> int:
        return self.U.shape[1]

    @property
    def num_items(self) -> int:
        return self.V.shape[1]

    def copy(self) -> "ModelFactors":
        return ModelFactors(self.U.copy(order="F"), self.V.copy(order="F"))

    def check_compatible(self, dataset: GradedDataset) -> None:
        if self.num_users != dataset.num_users or self.num_items != dataset.num_items:
            raise DimensionError(
                f"model is {self.num_users}x{self.num_items} but dataset is "
                f"{dataset.num_users}x{dataset.num_items}"
            )

    def scores(self, m: int, items: np.ndarray | None = None) -> np.ndarray:
        """Predicted relevance of ``items`` (all items by default) for user ``m``."""
        if not 0 <= m < self.num_users:
            raise IndexError(f"user index {m} out of range")
        if items is None:
            return self.V.T @ self.U[:, m]
        return self.V[:, np.asarray(items, dtype=np.int64)].T @ self.U[:, m]

    def __call__(self, m: int, items: np.ndarray) -> np.ndarray:
        return self.scores(m, items)


def score(model: ModelFactors, m: int, i: int) -> float:
    """Inner product of user ``m``'s and item ``i``'s factors."""
    if not 0 <= m < model.num_users:
        raise IndexError(f"user index {m} out of range")
    if not 0 <= i < model.num_items:
        raise IndexError(f"item index {i} out of range")
    return float(np.dot(model.U[:, m], model.V[:, i]))


def rank_items(scores: Sequence[float] | np.ndarray) -> np.ndarray:
    """1-based rank positions by descending score; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if np.isnan(scores).any():
        raise InvalidScoreError("NaN score cannot be ranked")
    order = np.argsort(-scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.int64)
    ranks[order] = np.arange(1, len(scores) + 1)
    return ranks


SELECTION_MODES = ("adaptive", "adaptive-tiered", "random")


@dataclass(frozen=True)
class HyperParams:
    """Training settings; the defaults are 10 factors, reg 0.001 and step 1e-5."""

    dim: int = 10
    reg: float = 0.001
    learn_rate: float = 1e-5
    select_k: int | str = "all"
    itermax: int = 100
    seed: int = 0
    parallelism: int | str = 1
    selection: str = "adaptive"
    early_stopping: bool = False
    patience: int = 5
    restore_best: bool = False

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.reg < 0:
            raise ValueError("reg must be >= 0")
        # zero is accepted: a frozen-model epoch is a useful reference point
        if not self.learn_rate >= 0:
            raise ValueError("learn_rate must be >= 0")
        if self.itermax < 1:
            raise ValueError("itermax must be >= 1")
        if self.select_k != "all" and (not isinstance(self.select_k, int) or self.select_k < 1):
            raise ValueError("select_k must be a positive integer or 'all'")
        if self.parallelism != "auto" and (
            not isinstance(self.parallelism, int) or self.parallelism < 1
        ):
            raise ValueError("parallelism must be a positive integer or 'auto'")
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"selection must be one of {SELECTION_MODES}")

    @property
    def workers(self) -> int:
        if self.parallelism == "auto":
            return os.cpu_count() or 1
        return int(self.parallelism)

    def k_for(self, size: int) -> int:
        """Number of items selected from a profile of ``size`` rated items."""
        if self.select_k == "all":
            return size
        return min(int(self.select_k), size)
