"""Experimental protocols: Given-n splits, sampled top-N evaluation, rated-item ranking."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Union

import numpy as np

from .core import GapfmError, GradedDataset, ModelFactors, make_thresholds, rank_items
from .metrics import (
    RankedJudgedList,
    UndefinedAggregateError,
    aggregate,
    ap_at_k,
    gap_exact,
    ndcg_at_k,
    precision_at_k,
)

Scorer = Callable[[int, np.ndarray], np.ndarray]
ScoreSource = Union[ModelFactors, Scorer]

# RNG stream tags, so each sampling purpose is independent of the others
_SPLIT, _PROBE_NEG, _VAL_NEG = 0, 1, 2


class EmptyProtocolError(GapfmError, ValueError):
    pass


@dataclass(frozen=True)
class ProtocolConfig:
    given_n: int = 10
    min_train_ratings: int = 50
    min_probe_ratings: int = 5
    negatives_per_user: int = 1000
    eval_cutoffs: tuple[int, ...] = (1, 3, 5)
    precision_threshold: int | None = None
    validation_fraction: float = 0.015
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "eval_cutoffs", tuple(int(k) for k in self.eval_cutoffs))
        if self.given_n < 1:
            raise ValueError("given_n must be >= 1")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if not self.eval_cutoffs or min(self.eval_cutoffs) < 1:
            raise ValueError("cutoffs must be positive")
        if self.negatives_per_user < 0 or self.min_probe_ratings < 1:
            raise ValueError("invalid sampling sizes")

    def threshold_for(self, y_max: int) -> int:
        return y_max if self.precision_threshold is None else int(self.precision_threshold)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eval_cutoffs"] = list(self.eval_cutoffs)
        return d


@dataclass
class SplitBundle:
    """Disjoint train / validation / probe datasets plus fixed candidate negatives."""

    train: GradedDataset
    validation: GradedDataset
    probe: GradedDataset
    config: ProtocolConfig
    probe_users: np.ndarray
    negatives: dict[int, np.ndarray]
    validation_negatives: dict[int, np.ndarray]
    short_pools: list[int] = field(default_factory=list)

    @property
    def y_max(self) -> int:
        return self.train.y_max


def sample_negatives(
    m: int, dataset: GradedDataset, n: int = 1000, seed: int = 0, stream: int = _PROBE_NEG
) -> np.ndarray:
    """``n`` distinct items user ``m`` never rated in ``dataset``, ascending.

    When fewer than ``n`` unrated items exist, all of them are returned; the
    caller detects the shortfall from the length.
    """
    unrated = np.setdiff1d(np.arange(dataset.num_items), dataset.user_items(m), assume_unique=True)
    if len(unrated) <= n:
        return unrated
    rng = np.random.default_rng([seed, stream, m])
    return np.sort(rng.choice(unrated, size=n, replace=False))


def carve_given_n(dataset: GradedDataset, config: ProtocolConfig) -> SplitBundle:
    """Split ratings per user into validation, exactly ``given_n`` training, and probe.

    Users with fewer than ``min_train_ratings`` ratings are dropped.  The
    validation set is a uniform ``validation_fraction`` sample of the kept
    ratings, drawn first; each user's ``given_n`` training ratings come from
    what remains and everything else becomes the probe ("holdout" mode).
    """
    if dataset.n_entries == 0:
        raise EmptyProtocolError("dataset is empty")
    sizes = dataset.sizes
    need = max(config.min_train_ratings, config.given_n)
    eligible = sizes >= need
    if not eligible.any():
        raise EmptyProtocolError(f"no user has at least {need} ratings")
    rng = np.random.default_rng([config.seed, _SPLIT])
    rows = dataset.user_rows()
    role = np.full(dataset.n_entries, -1, dtype=np.int8)  # -1 dropped, 0 train, 1 val, 2 probe
    kept = np.flatnonzero(eligible[rows])
    is_val = np.zeros(dataset.n_entries, dtype=bool)
    n_val = int(round(config.validation_fraction * len(kept)))
    is_val[rng.choice(kept, size=n_val, replace=False)] = True

    for m in np.flatnonzero(eligible):
        lo, hi = dataset.indptr[m], dataset.indptr[m + 1]
        idx = np.arange(lo, hi)
        free = idx[~is_val[lo:hi]]
        if len(free) < config.given_n:
            # give back validation entries so the user still gets given_n
            back = idx[is_val[lo:hi]][: config.given_n - len(free)]
            is_val[back] = False
            free = idx[~is_val[lo:hi]]
        train = rng.choice(free, size=config.given_n, replace=False)
        role[idx] = 2
        role[idx[is_val[lo:hi]]] = 1
        role[train] = 0

    train_ds = dataset.subset(role == 0)
    val_ds = dataset.subset(role == 1)
    probe_ds = dataset.subset(role == 2)
    probe_users = np.flatnonzero(probe_ds.sizes >= config.min_probe_ratings)

    negatives, short = {}, []
    for m in probe_users:
        neg = sample_negatives(int(m), dataset, config.negatives_per_user, config.seed, _PROBE_NEG)
        negatives[int(m)] = neg
        if len(neg) < config.negatives_per_user:
            short.append(int(m))
    val_negatives = {
        int(m): sample_negatives(int(m), dataset, config.negatives_per_user, config.seed, _VAL_NEG)
        for m in np.flatnonzero(val_ds.sizes)
    }
    return SplitBundle(train_ds, val_ds, probe_ds, config, probe_users, negatives, val_negatives, short)


def _scorer(source: ScoreSource) -> Scorer:
    if isinstance(source, ModelFactors):
        return source.scores
    return source


def rank_pool(source: ScoreSource, m: int, pool: np.ndarray) -> np.ndarray:
    """Candidate items in recommended order.  Sees item ids and scores only."""
    pool = np.sort(np.asarray(pool, dtype=np.int64))
    scores = np.asarray(_scorer(source)(m, pool), dtype=np.float64)
    return pool[np.argsort(rank_items(scores))]


def _judge(ranked: np.ndarray, items: np.ndarray, grades: np.ndarray) -> RankedJudgedList:
    lookup = dict(zip(items.tolist(), grades.tolist()))
    return RankedJudgedList(ranked, np.array([lookup.get(i, 0) for i in ranked.tolist()], dtype=np.int64))


@dataclass(frozen=True)
class MetricRow:
    metric: str
    cutoff: int
    mean: float | None
    users: int
    skipped: int


@dataclass
class EvalReport:
    """Averaged metrics with per-user values and protocol metadata."""

    protocol: str
    rows: list[MetricRow]
    per_user: dict[str, list[tuple[int, float | None]]]
    flagged_users: list[int]
    meta: dict

    def get(self, metric: str, cutoff: int) -> float | None:
        for row in self.rows:
            if row.metric == metric and row.cutoff == cutoff:
                return row.mean
        raise KeyError(f"{metric}@{cutoff}")

    def to_text(self) -> str:
        lines = [f"# protocol\t{self.protocol}"]
        lines += [f"# {k}\t{json.dumps(self.meta[k], sort_keys=True)}" for k in sorted(self.meta)]
        lines.append(f"# flagged_users\t{len(self.flagged_users)}")
        lines.append("metric\tcutoff\tmean\tusers\tskipped")
        for r in self.rows:
            mean = "undefined" if r.mean is None else repr(r.mean)
            lines.append(f"{r.metric}\t{r.cutoff}\t{mean}\t{r.users}\t{r.skipped}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {
            "protocol": self.protocol,
            "meta": self.meta,
            "flagged_users": self.flagged_users,
            "metrics": [asdict(r) for r in self.rows],
            "per_user": {k: [[u, v] for u, v in vals] for k, vals in self.per_user.items()},
        }
        return json.dumps(payload, sort_keys=True)


def _report(
    protocol: str,
    results: dict[tuple[str, int], list[tuple[int, float | None]]],
    flagged: list[int],
    meta: dict,
) -> EvalReport:
    rows, per_user = [], {}
    for (metric, k), vals in results.items():
        try:
            agg = aggregate(v for _, v in vals)
            rows.append(MetricRow(metric, k, agg.mean, agg.count, agg.skipped))
        except UndefinedAggregateError:
            rows.append(MetricRow(metric, k, None, 0, len(vals)))
        per_user[f"{metric}@{k}"] = vals
    return EvalReport(protocol, rows, per_user, flagged, meta)


def evaluate_topn(source: ScoreSource, bundle: SplitBundle, config: ProtocolConfig | None = None) -> EvalReport:
    """GAP@k, NDCG@k and P@k over pools of probe items plus sampled unrated items."""
    config = config or bundle.config
    if len(bundle.probe_users) == 0:
        raise EmptyProtocolError("no probe-eligible users")
    y_max = bundle.y_max
    thresholds = make_thresholds(y_max)
    threshold = config.threshold_for(y_max)
    results: dict[tuple[str, int], list] = {}
    for name in ("GAP", "NDCG", "P"):
        for k in config.eval_cutoffs:
            results[(name, k)] = []
    flagged = list(bundle.short_pools)
    for m in bundle.probe_users.tolist():
        items, grades = bundle.probe.user_items(m), bundle.probe.user_grades(m)
        pool = np.concatenate([bundle.negatives[m], items])
        lst = _judge(rank_pool(source, m, pool), items, grades)
        if len(lst) < max(config.eval_cutoffs) and m not in flagged:
            flagged.append(m)
        for k in config.eval_cutoffs:
            results[("GAP", k)].append((m, gap_exact(lst, thresholds, k)))
            results[("NDCG", k)].append((m, ndcg_at_k(lst, k)))
            results[("P", k)].append((m, float(precision_at_k(lst, k, threshold))))
    meta = {"config": config.to_dict(), "y_max": y_max, "threshold": threshold}
    return _report("topn", results, sorted(flagged), meta)


def evaluate_rated_ranking(
    source: ScoreSource, bundle: SplitBundle, config: ProtocolConfig | None = None
) -> EvalReport:
    """NDCG@k of each probe user's own rated probe items; no unrated items mixed in."""
    config = config or bundle.config
    if len(bundle.probe_users) == 0:
        raise EmptyProtocolError("no probe-eligible users")
    results = {("NDCG", k): [] for k in config.eval_cutoffs}
    for m in bundle.probe_users.tolist():
        items, grades = bundle.probe.user_items(m), bundle.probe.user_grades(m)
        lst = _judge(rank_pool(source, m, items), items, grades)
        for k in config.eval_cutoffs:
            results[("NDCG", k)].append((m, ndcg_at_k(lst, k)))
    meta = {"config": config.to_dict(), "y_max": bundle.y_max}
    return _report("rated-ranking", results, [], meta)


def evaluate_ap(source: ScoreSource, bundle: SplitBundle, config: ProtocolConfig | None = None) -> dict[int, dict[int, tuple]]:
    """Per-user (GAP@k, AP@k) pairs on the top-N pools, for binary-data checks."""
    config = config or bundle.config
    thresholds = make_thresholds(bundle.y_max)
    out: dict[int, dict[int, tuple]] = {}
    for m in bundle.probe_users.tolist():
        items, grades = bundle.probe.user_items(m), bundle.probe.user_grades(m)
        pool = np.concatenate([bundle.negatives[m], items])
        lst = _judge(rank_pool(source, m, pool), items, grades)
        out[m] = {k: (gap_exact(lst, thresholds, k), ap_at_k(lst, k)) for k in config.eval_cutoffs}
    return out


class ValidationProbe:
    """Mean GAP@k on the validation ratings, each ranked among that user's negatives."""

    def __init__(self, bundle: SplitBundle, k: int = 5) -> None:
        self.k = k
        self.thresholds = make_thresholds(bundle.y_max)
        self.users = np.flatnonzero(bundle.validation.sizes)
        self._cases = []
        for m in self.users.tolist():
            items = bundle.validation.user_items(m)
            pool = np.sort(np.concatenate([bundle.validation_negatives[m], items]))
            self._cases.append((m, pool, items, bundle.validation.user_grades(m)))

    def __call__(self, source: ScoreSource) -> float | None:
        vals = []
        for m, pool, items, grades in self._cases:
            lst = _judge(rank_pool(source, m, pool), items, grades)
            vals.append(gap_exact(lst, self.thresholds, self.k))
        if not vals:
            return None
        return aggregate(vals).mean


class RatedValidation:
    """Mean NDCG@k of each validation user's own validation items, ranked alone.

    Users with fewer than ``min_items`` validation ratings are left out,
    since a single item always ranks perfectly.
    """

    def __init__(self, bundle: SplitBundle, k: int = 5, min_items: int = 2) -> None:
        self.k = k
        sizes = bundle.validation.sizes
        self.users = np.flatnonzero(sizes >= min_items)
        self._cases = [
            (m, bundle.validation.user_items(m), bundle.validation.user_grades(m)) for m in self.users.tolist()
        ]

    def __call__(self, source: ScoreSource) -> float | None:
        vals = [ndcg_at_k(_judge(rank_pool(source, m, items), items, grades), self.k) for m, items, grades in self._cases]
        if not vals:
            return None
        return aggregate(vals).mean


class PopularityScorer:
    """Scores every item by its training rating count, identically for all users."""

    def __init__(self, train: GradedDataset) -> None:
        if train.n_entries == 0:
            raise EmptyProtocolError("popularity needs a nonempty training set")
        self.counts = np.bincount(train.items, minlength=train.num_items).astype(np.float64)

    def __call__(self, m: int, items: np.ndarray) -> np.ndarray:
        return self.counts[np.asarray(items, dtype=np.int64)]


def poprec_baseline(train: GradedDataset) -> PopularityScorer:
    return PopularityScorer(train)
