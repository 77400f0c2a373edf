import io
import json

import numpy as np
import pytest

from gapfm.core import EmptyProfileError, GradedDataset, HyperParams, ModelFactors, make_thresholds, rank_items
from gapfm.harness import ProtocolConfig, ValidationProbe, carve_given_n
from gapfm.metrics import RankedJudgedList, gap_exact
from gapfm.objective import UserLossContext, grad_item, objective_value
from gapfm.synthetic import make_synthetic
from gapfm.trainer import (
    DivergenceError,
    adaptive_select,
    init_factors,
    iterate,
    new_state,
    train,
    train_epoch,
)

from instances import desk_instance, random_instance

T5 = make_thresholds(5)


def one_user(grades, scores):
    n = len(grades)
    ds = GradedDataset.from_triples([(0, i, g) for i, g in enumerate(grades)], 1, n, y_max=max(grades))
    model = ModelFactors(np.ones((1, 1)), np.asarray(scores, float)[None, :])
    return ds, model


class TestInitFactors:
    def test_deterministic(self):
        a, b = init_factors(7, 9, 4, 3), init_factors(7, 9, 4, 3)
        assert np.array_equal(a.U, b.U) and np.array_equal(a.V, b.V)

    def test_range(self):
        m = init_factors(50, 60, 10, 0)
        assert np.abs(m.U).max() <= 0.01 and np.abs(m.V).max() <= 0.01

    def test_seeds_differ(self):
        for s in range(10):
            a, b = init_factors(5, 5, 3, s), init_factors(5, 5, 3, s + 100)
            assert not np.array_equal(a.U, b.U)

    def test_invalid(self):
        with pytest.raises(ValueError):
            init_factors(3, 3, 0, 0)


class TestAdaptiveSelect:
    def test_most_misranked(self):
        ds, model = one_user([2, 4, 5], [0.3, 0.5, 0.1])
        sel = adaptive_select(0, model, ds, 1)
        assert sel.items.tolist() == [2]
        assert sel.distances.tolist() == [1.0, 1.0, 2.0]

    def test_short_profile_returns_all(self):
        ds, model = one_user([2, 4, 5], [0.3, 0.5, 0.1])
        assert adaptive_select(0, model, ds, 5).items.tolist() == [0, 1, 2]

    def test_perfect_order_takes_first_items(self):
        ds, model = one_user([5, 4, 3, 2, 1], [5, 4, 3, 2, 1])
        sel = adaptive_select(0, model, ds, 2)
        assert sel.items.tolist() == [0, 1]
        assert not sel.distances.any()

    def test_tiered_ignores_order_within_grade(self):
        ds, model = one_user([3, 3, 1], [0.1, 0.9, 0.0])
        sel = adaptive_select(0, model, ds, 1, tiered=True)
        assert sel.distances.tolist() == [0.0, 0.0, 0.0]
        assert adaptive_select(0, model, ds, 1).distances.tolist() == [1.0, 1.0, 0.0]

    def test_size_is_min_of_k_and_profile(self):
        ds, model = random_instance(4, num_users=4, num_items=10, min_rated=1)
        for m in range(4):
            for k in (1, 3, 20):
                sel = adaptive_select(m, model, ds, k)
                assert len(sel.items) == min(k, ds.sizes[m])
                assert set(sel.items.tolist()) <= set(ds.user_items(m).tolist())

    def test_errors(self):
        ds = GradedDataset.from_triples([(1, 0, 1)], 2, 1)
        model = ModelFactors(np.ones((1, 2)), np.ones((1, 1)))
        with pytest.raises(EmptyProfileError):
            adaptive_select(0, model, ds, 1)
        with pytest.raises(ValueError):
            adaptive_select(1, model, ds, 0)


class TestTrainEpoch:
    def test_zero_rate_leaves_model(self):
        ds, _ = desk_instance()
        hp = HyperParams(dim=4, learn_rate=0.0)
        state = new_state(ds, hp)
        before = state.model.copy()
        train_epoch(state, ds, T5, hp)
        assert state.t == 1 and len(state.telemetry) == 1
        assert np.array_equal(state.model.U, before.U) and np.array_equal(state.model.V, before.V)

    def test_small_step_does_not_decrease_objective(self):
        ds, model = desk_instance()
        hp = HyperParams(dim=4, learn_rate=1e-3, reg=0.0)
        state = new_state(ds, hp)
        state.model = model.copy()
        before = objective_value(state.model, ds, T5, 0.0)
        train_epoch(state, ds, T5, hp)
        assert objective_value(state.model, ds, T5, 0.0) >= before
        assert state.telemetry[0].objective == pytest.approx(objective_value(state.model, ds, T5, 0.0), abs=1e-12)

    def test_k_all_equals_k_items(self):
        ds = make_synthetic(60, 40, (5, 15), seed=2)
        a = train(ds, T5, HyperParams(select_k="all", itermax=3, learn_rate=0.05))
        b = train(ds, T5, HyperParams(select_k=ds.num_items, itermax=3, learn_rate=0.05))
        assert np.array_equal(a.model.U, b.model.U) and np.array_equal(a.model.V, b.model.V)

    def test_gradient_count(self):
        ds = make_synthetic(80, 60, (5, 40), seed=1)
        res = train(ds, T5, HyperParams(select_k=20, itermax=2, learn_rate=0.01))
        expect = int(np.minimum(ds.sizes, 20).sum())
        assert [r.item_grads for r in res.telemetry] == [expect, expect]

    def test_divergence(self):
        ds, _ = desk_instance()
        hp = HyperParams(dim=4, learn_rate=1e308)
        state = new_state(ds, hp)
        state.model.U[:] = 1.0
        with pytest.raises(DivergenceError, match="learning rate"):
            train_epoch(state, ds, T5, hp)

    def test_parallel_user_phase_bit_identical(self):
        ds = make_synthetic(120, 50, (10, 30), seed=5)
        models = [train(ds, T5, HyperParams(itermax=3, learn_rate=0.02, parallelism=w)).model for w in (1, 3, 4)]
        for other in models[1:]:
            assert np.array_equal(models[0].U, other.U) and np.array_equal(models[0].V, other.V)

    def test_random_selection_is_seeded(self):
        ds = make_synthetic(60, 40, 30, seed=3)
        hp = HyperParams(select_k=5, selection="random", itermax=2, learn_rate=0.05, seed=9)
        a, b = train(ds, T5, hp), train(ds, T5, hp)
        assert np.array_equal(a.model.V, b.model.V)
        c = train(ds, T5, HyperParams(select_k=5, selection="adaptive", itermax=2, learn_rate=0.05, seed=9))
        assert not np.array_equal(a.model.V, c.model.V)

    def test_grade_ceiling_mismatch(self):
        ds, _ = desk_instance()
        with pytest.raises(ValueError):
            train_epoch(new_state(ds, HyperParams(dim=4)), ds, make_thresholds(3), HyperParams(dim=4))


class TestTrain:
    def test_single_iteration_equals_epoch(self):
        ds, _ = desk_instance()
        hp = HyperParams(dim=4, itermax=1, learn_rate=0.01)
        res = train(ds, T5, hp)
        state = new_state(ds, hp)
        train_epoch(state, ds, T5, hp)
        assert np.array_equal(res.model.U, state.model.U) and np.array_equal(res.model.V, state.model.V)

    def test_reproducible(self):
        ds = make_synthetic(50, 30, (5, 20), seed=0)
        hp = HyperParams(itermax=4, learn_rate=0.05, select_k=5, seed=11)
        a, b = train(ds, T5, hp), train(ds, T5, hp)
        assert a.model.U.tobytes() == b.model.U.tobytes() and a.model.V.tobytes() == b.model.V.tobytes()

    def test_telemetry_stream(self):
        ds, _ = desk_instance()
        buf = io.StringIO()
        res = train(ds, T5, HyperParams(dim=4, itermax=3, learn_rate=0.01), telemetry=buf)
        rows = [json.loads(line) for line in buf.getvalue().splitlines()]
        assert [r["iteration"] for r in rows] == [1, 2, 3]
        assert set(rows[0]) == {"iteration", "objective", "u_ms", "v_ms", "item_grads", "validation_gap"}
        assert len(res.telemetry) == res.state.t == 3

    def test_early_stopping_and_restore(self):
        ds, _ = desk_instance()
        scores = iter([0.5, 0.6, 0.55, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0, 0.0])
        hp = HyperParams(dim=4, itermax=50, learn_rate=0.01, early_stopping=True, patience=3, restore_best=True)
        res = train(ds, T5, hp, validation=lambda model: next(scores))
        assert res.state.t == 4
        assert res.state.best_iteration == 1
        assert res.validation_curve == [0.5, 0.6, 0.55, 0.5, 0.4]
        assert not np.array_equal(res.model.U, res.state.model.U)

    def test_iterate_resumes(self):
        ds, _ = desk_instance()
        hp = HyperParams(dim=4, itermax=3, learn_rate=0.01)
        state = new_state(ds, hp)
        for _ in iterate(ds, T5, hp, state=state):
            pass
        one_go = train(ds, T5, hp)
        assert np.array_equal(state.model.V, one_go.model.V)

    @pytest.mark.slow
    def test_validation_improves(self):
        ds = make_synthetic(200, 150, (40, 70), seed=4)
        bundle = carve_given_n(ds, ProtocolConfig(given_n=20, min_train_ratings=30, validation_fraction=0.05, seed=4))
        res = train(bundle.train, T5, HyperParams(itermax=30, learn_rate=0.01, seed=4), validation=ValidationProbe(bundle))
        assert res.validation_curve[30] > res.validation_curve[0]


class TestMisrankingFocus:
    """A step on each user's most misranked item helps the training ranking more than one on the least."""

    @staticmethod
    def user_gap(model, ds, m):
        items = ds.user_items(m)
        return gap_exact(RankedJudgedList.from_scores(items, model.scores(m, items), ds.user_grades(m)), T5)

    def test_most_beats_least_on_average(self):
        gains = []
        for seed in range(20):
            ds = make_synthetic(num_users=40, num_items=60, ratings_per_user=15, seed=seed)
            rng = np.random.default_rng(seed)
            model = ModelFactors(0.3 * rng.normal(size=(5, 40)), 0.3 * rng.normal(size=(5, 60)))
            total = np.zeros(2)
            for m in range(ds.num_users):
                items, grades = ds.user_items(m), ds.user_grades(m)
                dist = np.abs(rank_items(grades.astype(float)) - rank_items(model.scores(m, items)))
                ctx = UserLossContext.build(model, ds, T5, m)
                base = self.user_gap(model, ds, m)
                for slot, pos in enumerate((int(np.argmax(dist)), int(np.argmin(dist)))):
                    stepped = model.copy()
                    stepped.V[:, items[pos]] += 1.0 * grad_item(m, int(items[pos]), ctx, model, 0.0)
                    total[slot] += self.user_gap(stepped, ds, m) - base
            gains.append(total / ds.num_users)
        gains = np.array(gains)
        assert gains[:, 0].mean() >= gains[:, 1].mean()
