"""Two-phase stochastic gradient ascent on the smoothed GAP objective.

Each epoch first moves every user factor against a frozen snapshot (sharded
over worker threads), then walks the users in a seeded order and updates the
factors of a selected subset of each user's rated items.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterator, TextIO

import numpy as np

from . import _kernels
from .core import (
    EmptyProfileError,
    GapfmError,
    GradedDataset,
    HyperParams,
    ModelFactors,
    ThresholdVector,
    rank_items,
)

log = logging.getLogger(__name__)

INIT_SCALE = 0.01


class DivergenceError(GapfmError, FloatingPointError):
    pass


@dataclass
class EpochRecord:
    iteration: int
    objective: float | None
    u_ms: float
    v_ms: float
    item_grads: int
    validation_gap: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SelectionResult:
    user: int
    items: np.ndarray
    distances: np.ndarray


@dataclass
class TrainState:
    model: ModelFactors
    rng: np.random.Generator
    t: int = 0
    telemetry: list[EpochRecord] = field(default_factory=list)
    initial: EpochRecord | None = None
    best_model: ModelFactors | None = None
    best_iteration: int | None = None


@dataclass
class TrainResult:
    model: ModelFactors
    telemetry: list[EpochRecord]
    initial: EpochRecord | None
    state: TrainState

    @property
    def validation_curve(self) -> list[float | None]:
        """Validation GAP before training followed by one value per epoch."""
        head = [self.initial.validation_gap] if self.initial else []
        return head + [r.validation_gap for r in self.telemetry]


def init_factors(num_users: int, num_items: int, dim: int, seed: int | np.random.Generator) -> ModelFactors:
    """Uniform factors in [-0.01, 0.01]; ``U`` is drawn before ``V``."""
    if num_users < 0 or num_items < 0 or dim < 1:
        raise ValueError("dimensions must be positive")
    rng = np.random.default_rng(seed)
    U = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(num_users, dim)).T
    V = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(num_items, dim)).T
    return ModelFactors(U, V)


def new_state(dataset: GradedDataset, hyper: HyperParams) -> TrainState:
    """Fresh state: factors and the epoch RNG both derive from ``hyper.seed``."""
    init_seq, epoch_seq = np.random.SeedSequence(hyper.seed).spawn(2)
    model = init_factors(dataset.num_users, dataset.num_items, hyper.dim, np.random.default_rng(init_seq))
    return TrainState(model=model, rng=np.random.default_rng(epoch_seq))


def _grade_ranks(grades: np.ndarray) -> np.ndarray:
    return rank_items(grades.astype(np.float64))


def _tier_gaps(grades: np.ndarray, pred: np.ndarray) -> np.ndarray:
    # distance from each predicted rank to the span of ranks its grade tier occupies
    above = (grades[None, :] > grades[:, None]).sum(axis=1)
    tied = (grades[None, :] == grades[:, None]).sum(axis=1)
    lo, hi = above + 1, above + tied
    return np.maximum(lo - pred, 0) + np.maximum(pred - hi, 0)


def adaptive_select(
    m: int, model: ModelFactors, dataset: GradedDataset, k: int, tiered: bool = False
) -> SelectionResult:
    """The ``k`` rated items whose score rank strays furthest from their grade rank.

    Both rank vectors break ties by ascending item index, as does the final
    pick among equal distances.  Profiles of at most ``k`` items are returned
    whole.  With ``tiered`` the distance is measured to the band of ranks
    shared by the item's grade, so reordering equal grades costs nothing.
    """
    items = dataset.user_items(m)
    grades = dataset.user_grades(m)
    if len(items) == 0:
        raise EmptyProfileError(f"user {m} has no rated items")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(items) <= k:
        return SelectionResult(m, items.copy(), np.zeros(len(items)))
    pred = rank_items(model.scores(m, items))
    if tiered:
        dist = _tier_gaps(grades, pred).astype(np.float64)
    else:
        dist = np.abs(_grade_ranks(grades) - pred).astype(np.float64)
    pick = np.sort(np.argsort(-dist, kind="stable")[:k])
    return SelectionResult(m, items[pick], dist)


def _user_shards(dataset: GradedDataset, workers: int) -> list[np.ndarray]:
    # balance shards by quadratic per-user cost
    users = np.flatnonzero(dataset.sizes)
    if workers <= 1 or len(users) <= 1:
        return [users]
    cost = np.cumsum(dataset.sizes[users].astype(np.float64) ** 2)
    bounds = np.searchsorted(cost, cost[-1] * np.arange(1, workers) / workers)
    return [s for s in np.split(users, bounds) if len(s)]


def _check_finite(model: ModelFactors, hyper: HyperParams, phase: str) -> None:
    if not (np.isfinite(model.U).all() and np.isfinite(model.V).all()):
        raise DivergenceError(
            f"non-finite factors after {phase} phase; learning rate {hyper.learn_rate:g} "
            "is too large, try a smaller value"
        )


def _objective(model: ModelFactors, dataset: GradedDataset, thresholds: ThresholdVector, reg: float) -> float:
    total = _kernels.smoothed_total(
        dataset.indptr, dataset.items, dataset.grades, thresholds.table, model.U.T, model.V.T
    )
    return float(total - 0.5 * reg * (np.sum(model.U**2) + np.sum(model.V**2)))


def train_epoch(
    state: TrainState,
    dataset: GradedDataset,
    thresholds: ThresholdVector,
    hyper: HyperParams,
    executor: ThreadPoolExecutor | None = None,
    track_objective: bool = True,
) -> TrainState:
    """Run one epoch in place and append its telemetry record."""
    model = state.model
    model.check_compatible(dataset)
    if dataset.y_max > thresholds.y_max:
        raise ValueError("thresholds do not cover the dataset's grades")
    indptr, items, grades, table = dataset.indptr, dataset.items, dataset.grades, thresholds.table
    rate, reg = hyper.learn_rate, hyper.reg

    # phase 1: every U_m from the frozen (U, V) of the previous epoch
    t0 = time.perf_counter()
    Ut_old = model.U.T
    Ut_new = np.array(Ut_old, order="C")
    shards = _user_shards(dataset, hyper.workers)
    args = (indptr, items, grades, table, Ut_old, model.V.T, reg, rate, Ut_new)
    if len(shards) == 1:
        _kernels.user_ascent(shards[0], *args)
    else:
        pool = executor or ThreadPoolExecutor(hyper.workers)
        try:
            list(pool.map(lambda users: _kernels.user_ascent(users, *args), shards))
        finally:
            if executor is None:
                pool.shutdown()
    model.U = Ut_new.T
    u_ms = (time.perf_counter() - t0) * 1e3
    _check_finite(model, hyper, "user")

    # phase 2: item updates, users in a seeded order, selection on fresh U
    t1 = time.perf_counter()
    order = state.rng.permutation(dataset.num_users)
    if hyper.selection == "random":
        mode = _kernels.RANDOM
        keys = state.rng.random(dataset.n_entries)
    else:
        mode = _kernels.ADAPTIVE if hyper.selection == "adaptive" else _kernels.ADAPTIVE_TIERED
        keys = np.empty(dataset.n_entries)
    k = -1 if hyper.select_k == "all" else int(hyper.select_k)
    n_grads = _kernels.item_phase(order, indptr, items, grades, table, model.U.T, model.V.T, reg, rate, k, mode, keys)
    v_ms = (time.perf_counter() - t1) * 1e3
    _check_finite(model, hyper, "item")

    state.t += 1
    obj = _objective(model, dataset, thresholds, reg) if track_objective else None
    state.telemetry.append(EpochRecord(state.t, obj, u_ms, v_ms, int(n_grads)))
    return state


def iterate(
    dataset: GradedDataset,
    thresholds: ThresholdVector,
    hyper: HyperParams,
    validation: Callable[[ModelFactors], float | None] | None = None,
    track_objective: bool = True,
    state: TrainState | None = None,
) -> Iterator[TrainState]:
    """Yield the state after each epoch until ``itermax`` or early stopping."""
    if state is None:
        state = new_state(dataset, hyper)
    if state.initial is None:
        obj = _objective(state.model, dataset, thresholds, hyper.reg) if track_objective else None
        val = validation(state.model) if validation else None
        state.initial = EpochRecord(0, obj, 0.0, 0.0, 0, val)
    best, stale = state.initial.validation_gap, 0
    if hyper.restore_best and best is not None and state.best_model is None:
        state.best_model, state.best_iteration = state.model.copy(), 0
    pool = ThreadPoolExecutor(hyper.workers) if hyper.workers > 1 else None
    try:
        while state.t < hyper.itermax:
            train_epoch(state, dataset, thresholds, hyper, executor=pool, track_objective=track_objective)
            rec = state.telemetry[-1]
            if validation is not None:
                rec.validation_gap = validation(state.model)
            log.debug("epoch %d objective=%s val=%s", rec.iteration, rec.objective, rec.validation_gap)
            if rec.validation_gap is not None:
                if best is None or rec.validation_gap > best:
                    best, stale = rec.validation_gap, 0
                    if hyper.restore_best:
                        state.best_model, state.best_iteration = state.model.copy(), state.t
                else:
                    stale += 1
            yield state
            if hyper.early_stopping and stale >= hyper.patience:
                log.info("early stop at epoch %d", state.t)
                break
    finally:
        if pool is not None:
            pool.shutdown()


def train(
    dataset: GradedDataset,
    thresholds: ThresholdVector,
    hyper: HyperParams,
    validation: Callable[[ModelFactors], float | None] | None = None,
    telemetry: TextIO | None = None,
    track_objective: bool = True,
) -> TrainResult:
    """Train from a fresh seeded initialisation.

    With ``hyper.restore_best`` the returned factors are those of the epoch
    with the highest validation score rather than the last epoch.

    Args:
        validation: optional callable scoring the current model (typically
            validation GAP@5); evaluated before training and after each epoch.
        telemetry: optional text stream receiving one JSON record per epoch.
    """
    state = None
    for state in iterate(dataset, thresholds, hyper, validation, track_objective):
        if telemetry is not None:
            telemetry.write(state.telemetry[-1].to_json() + "\n")
            telemetry.flush()
    assert state is not None
    model = state.model
    if hyper.restore_best and state.best_model is not None:
        model = state.best_model
    return TrainResult(model, state.telemetry, state.initial, state)
