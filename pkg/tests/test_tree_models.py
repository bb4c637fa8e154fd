import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gustcast.trees import (
    DirectMultiStep, EtParams, GbmModel, GbmParams, Learner, expand_grid, fit_direct_multistep, fit_extra_trees,
    fit_gbm, fit_linear, grid_search, learner_fit_predict, model_from_dict, model_to_json,
)
from oracles import best_split_brute_force


def regression_data(seed, n=200, f=5, noise=0.1):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, f))
    y = np.sin(3 * X[:, 0]) + X[:, 1] ** 2 + noise * rng.normal(size=n)
    return X, y


def nd(y, yhat):
    return float(np.abs(yhat - y).sum() / np.abs(y).sum())


class TestLinear:
    def test_exact_line(self):
        x = np.arange(5.0)[:, None]
        m = fit_linear(x, 2 * x[:, 0] + 1)
        assert m.coef[0] == pytest.approx(2, abs=1e-9) and m.intercept == pytest.approx(1, abs=1e-9)
        assert m.ridge == 0.0

    def test_constant_target(self):
        rng = np.random.default_rng(0)
        m = fit_linear(rng.normal(size=(10, 3)), np.full(10, 4.5))
        np.testing.assert_allclose(m.coef, 0, atol=1e-12)
        assert m.intercept == pytest.approx(4.5)

    def test_residuals_orthogonal_to_columns(self):
        rng = np.random.default_rng(1)
        X, y = rng.normal(size=(20, 3)), rng.normal(size=20)
        m = fit_linear(X, y)
        r = y - m.predict(X)
        np.testing.assert_allclose(X.T @ r, 0, atol=1e-8)
        assert abs(r.sum()) < 1e-8

    def test_rank_deficient_gets_ridge(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(30, 2))
        X = np.column_stack([X, X[:, 0] + X[:, 1], np.ones(30)])
        y = X[:, 0] - 2 * X[:, 1] + 0.5
        m = fit_linear(X, y)
        assert m.ridge > 0 and m.coef[3] == 0.0
        np.testing.assert_allclose(m.predict(X), y, atol=1e-6)

    def test_matches_lstsq(self):
        X, y = regression_data(3, n=60)
        m = fit_linear(X, y)
        A = np.column_stack([X, np.ones(len(X))])
        ref = np.linalg.lstsq(A, y, rcond=None)[0]
        np.testing.assert_allclose(np.r_[m.coef, m.intercept], ref, atol=1e-10)

    def test_empty(self):
        with pytest.raises(ValueError):
            fit_linear(np.zeros((0, 2)), np.zeros(0))


class TestGbm:
    def test_worked_split(self):
        X = np.array([[0.0], [1.0], [2.0], [3.0]])
        m = fit_gbm(X, np.array([0.0, 0.0, 1.0, 1.0]), GbmParams(1, 1.0, 2, 1))
        tree = m.trees[0]
        assert m.base_score == 0.5
        assert 1 < tree.threshold[0] < 2
        np.testing.assert_array_equal(sorted(tree.value[tree.leaf_mask]), [-0.5, 0.5])
        np.testing.assert_array_equal(m.predict(X), [0.0, 0.0, 1.0, 1.0])

    def test_zero_learning_rate(self):
        X, y = regression_data(0)
        m = fit_gbm(X, y, GbmParams(n_estimators=5, learning_rate=0.0))
        np.testing.assert_array_equal(m.predict(X), np.full(len(y), y.mean()))

    def test_training_loss_non_increasing(self):
        X, y = regression_data(1)
        m = fit_gbm(X, y, GbmParams(n_estimators=30, num_leaves=8, min_child_samples=5))
        assert len(m.train_loss) == 31
        assert np.all(np.diff(m.train_loss) <= 1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_additivity_exact(self, seed):
        X, y = regression_data(seed)
        m = fit_gbm(X, y, GbmParams(n_estimators=7, learning_rate=0.3, num_leaves=6, min_child_samples=4))
        total = np.zeros(len(X))
        for tree in m.trees:
            total += tree.predict(X)
        assert np.array_equal(m.predict(X), m.base_score + m.learning_rate * total)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(2, 12), st.integers(1, 15))
    def test_leaf_constraints(self, seed, num_leaves, min_child):
        X, y = regression_data(seed, n=120, f=3)
        m = fit_gbm(X, y, GbmParams(n_estimators=3, num_leaves=num_leaves, min_child_samples=min_child))
        for tree in m.trees:
            assert tree.n_leaves <= num_leaves
            assert tree.n_samples[tree.leaf_mask].min() >= min_child
            assert tree.n_samples[tree.leaf_mask].sum() == len(y)
            counts = np.bincount(tree.apply(X), minlength=tree.node_count)
            np.testing.assert_array_equal(counts[tree.leaf_mask], tree.n_samples[tree.leaf_mask])

    def test_max_depth(self):
        X, y = regression_data(4)
        m = fit_gbm(X, y, GbmParams(n_estimators=2, num_leaves=64, min_child_samples=1, max_depth=3))
        assert all(t.depth() <= 3 for t in m.trees)

    @pytest.mark.parametrize("seed", range(20))
    def test_single_split_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        X = np.round(rng.uniform(size=(15, 3)), 1)
        y = rng.normal(size=15)
        m = fit_gbm(X, y, GbmParams(1, 1.0, 2, 2))
        oracle = best_split_brute_force(X, y, 2)
        tree = m.trees[0]
        assert (tree.feature[0], tree.threshold[0]) == oracle[:2]

    def test_permutation_invariance(self):
        X, y = regression_data(5)
        X = np.round(X, 1)  # plenty of ties
        p = np.random.default_rng(9).permutation(len(y))
        a = fit_gbm(X, y, GbmParams(n_estimators=4, num_leaves=10, min_child_samples=3))
        b = fit_gbm(X[p], y[p], GbmParams(n_estimators=4, num_leaves=10, min_child_samples=3))
        for ta, tb in zip(a.trees, b.trees):
            np.testing.assert_array_equal(ta.feature, tb.feature)
            np.testing.assert_array_equal(ta.threshold, tb.threshold)
        np.testing.assert_allclose(a.predict(X), b.predict(X), rtol=0, atol=1e-12)

    def test_constant_columns_never_split(self):
        X, y = regression_data(6)
        Xc = np.column_stack([X, np.zeros((len(y), 4))])
        a = fit_gbm(X, y, GbmParams(n_estimators=5, num_leaves=12, min_child_samples=5))
        b = fit_gbm(Xc, y, GbmParams(n_estimators=5, num_leaves=12, min_child_samples=5))
        np.testing.assert_array_equal(a.predict(X), b.predict(Xc))

    def test_insufficient_rows(self):
        with pytest.raises(ValueError, match="at least"):
            fit_gbm(np.zeros((10, 1)), np.zeros(10), GbmParams(min_child_samples=22))

    def test_paper_defaults(self):
        p = GbmParams()
        assert (p.n_estimators, p.learning_rate, p.num_leaves, p.min_child_samples, p.max_depth) == (
            100, 0.07, 90, 22, None)


class TestExtraTrees:
    def test_pure_data_single_leaf(self):
        X = np.random.default_rng(0).normal(size=(30, 4))
        m = fit_extra_trees(X, np.full(30, 2.5), EtParams(n_trees=5), 0)
        assert all(t.node_count == 1 for t in m.trees)
        np.testing.assert_array_equal(m.predict(X), 2.5)

    def test_deterministic(self):
        X, y = regression_data(1)
        a = fit_extra_trees(X, y, EtParams(n_trees=4), 11)
        b = fit_extra_trees(X, y, EtParams(n_trees=4), 11)
        for ta, tb in zip(a.trees, b.trees):
            np.testing.assert_array_equal(ta.threshold, tb.threshold)
        assert a.seeds == b.seeds

    def test_seed_changes_forest(self):
        X, y = regression_data(1)
        a = fit_extra_trees(X, y, EtParams(n_trees=2), 1)
        b = fit_extra_trees(X, y, EtParams(n_trees=2), 2)
        fresh, _ = regression_data(99)
        assert not np.array_equal(a.predict(fresh), b.predict(fresh))

    def test_separable_data_beats_single_split_oracle(self):
        rng = np.random.default_rng(0)
        x = np.concatenate([rng.uniform(0, 0.3, 20), rng.uniform(0.7, 1.0, 20)])
        y = (x > 0.5).astype(float)
        oracle = best_split_brute_force(x[:, None], y)
        oracle_mse = (float(((y - y.mean()) ** 2).sum()) - oracle[2]) / len(y)
        wins = 0
        for seed in range(100):
            m = fit_extra_trees(x[:, None], y, EtParams(n_trees=1, max_features=1), seed)
            wins += float(np.mean((m.predict(x[:, None]) - y) ** 2)) < oracle_mse + 1e-12
        assert wins >= 95

    def test_fully_grown_interpolates_training_rows(self):
        X, y = regression_data(2)
        m = fit_extra_trees(X, y, EtParams(n_trees=1), 3)
        np.testing.assert_allclose(m.predict(X), y, atol=1e-12)

    def test_leaf_mean_on_duplicated_rows(self):
        X = np.array([[0.0], [0.0], [1.0]])
        m = fit_extra_trees(X, np.array([1.0, 3.0, 5.0]), EtParams(n_trees=1), 0)
        np.testing.assert_array_equal(m.predict(X), [2.0, 2.0, 5.0])

    def test_mean_of_trees(self):
        X, y = regression_data(3)
        m = fit_extra_trees(X, y, EtParams(n_trees=9, max_depth=4), 0)
        np.testing.assert_allclose(m.predict(X), m.tree_outputs(X).mean(axis=0), rtol=0, atol=1e-12)

    def test_threshold_inside_observed_range(self):
        X, y = regression_data(4)
        m = fit_extra_trees(X, y, EtParams(n_trees=3), 0)
        for t in m.trees:
            inner = ~t.leaf_mask
            lo, hi = X.min(axis=0)[t.feature[inner]], X.max(axis=0)[t.feature[inner]]
            assert np.all((t.threshold[inner] >= lo) & (t.threshold[inner] < hi))

    def test_candidate_count(self):
        assert EtParams().features_per_split(478) == 21
        assert EtParams().features_per_split(3) == 1
        assert EtParams(max_features=50).features_per_split(10) == 10
        assert EtParams().n_trees == 120


class TestDirectMultiStep:
    def step_data(self, n=80, horizon=4, seed=0):
        rng = np.random.default_rng(seed)
        feats = [rng.normal(size=(n, 3)) for _ in range(horizon)]
        Y = np.column_stack([f @ np.array([1.0, -h, 0.5]) for h, f in enumerate(feats)])
        return feats, Y

    def test_cardinality(self):
        feats, Y = self.step_data(horizon=24)
        m = fit_direct_multistep(feats, Y, Learner("lr"), horizon=24)
        assert len(m.models) == 24
        assert m.predict(feats).shape == (80, 24)

    def test_constant_targets_per_step(self):
        feats, _ = self.step_data()
        Y = np.tile(np.arange(4.0), (80, 1))
        m = fit_direct_multistep(feats, Y, Learner("gbm", {"n_estimators": 3, "min_child_samples": 5}), horizon=4)
        np.testing.assert_allclose(m.predict(feats), Y, atol=1e-12)

    def test_steps_are_independent(self):
        feats, Y = self.step_data()
        learner = Learner("et", {"n_trees": 3})
        a = fit_direct_multistep(feats, Y, learner, horizon=4, seed=5)
        rng = np.random.default_rng(1)
        shuffled = [f if h == 2 else rng.permutation(f) for h, f in enumerate(feats)]
        Ys = Y.copy()
        Ys[:, [0, 1, 3]] = rng.permutation(Ys[:, [0, 1, 3]])
        b = fit_direct_multistep(shuffled, Ys, learner, horizon=4, seed=5)
        np.testing.assert_array_equal(a.predict(feats)[:, 2], b.predict(feats)[:, 2])

    def test_callable_features(self):
        feats, Y = self.step_data()
        a = fit_direct_multistep(feats, Y, Learner("lr"), horizon=4)
        b = fit_direct_multistep(lambda h: feats[h], Y, Learner("lr"), horizon=4)
        np.testing.assert_array_equal(a.predict(feats), b.predict(lambda h: feats[h]))

    def test_missing_step(self):
        feats, Y = self.step_data()
        with pytest.raises(ValueError, match="step matrices"):
            fit_direct_multistep(feats[:3], Y, Learner("lr"), horizon=4)

    def test_json_round_trip(self):
        feats, Y = self.step_data()
        for learner in (Learner("lr"), Learner("gbm", {"n_estimators": 2, "min_child_samples": 3}),
                        Learner("et", {"n_trees": 2})):
            m = fit_direct_multistep(feats, Y, learner, horizon=4)
            back = DirectMultiStep.from_dict(json.loads(json.dumps(m.to_dict())))
            np.testing.assert_array_equal(back.predict(feats), m.predict(feats))

    def test_model_json_has_type_tag(self):
        X, y = regression_data(0)
        m = fit_gbm(X, y, GbmParams(n_estimators=2))
        d = json.loads(model_to_json(m))
        assert d["model_type"] == "gbm" and d["params"]["num_leaves"] == 90
        assert isinstance(model_from_dict(d), GbmModel)

    def test_unknown_learner(self):
        with pytest.raises(ValueError):
            Learner("svm")
        with pytest.raises(ValueError, match="unknown gbm"):
            Learner("gbm", {"depth": 3})


class TestGridSearch:
    def test_singleton(self):
        X, y = regression_data(0)
        res = grid_search({"num_leaves": [4]}, (X, y), (X, y),
                          learner_fit_predict(Learner("gbm", {"n_estimators": 3})), nd)
        assert res.best_params == {"num_leaves": 4} and len(res.table) == 1

    def test_degenerate_config_loses(self):
        X, y = regression_data(1)
        Xv, yv = regression_data(2)
        res = grid_search({"learning_rate": [0.0, 0.3]}, (X, y), (Xv, yv),
                          learner_fit_predict(Learner("gbm", {"n_estimators": 10, "min_child_samples": 5})), nd)
        assert res.best_params["learning_rate"] == 0.3

    def test_table_size(self, tmp_path):
        X, y = regression_data(3, n=60)
        grid = {"n_trees": [1, 2], "max_depth": [2, 3, None]}
        res = grid_search(grid, (X, y), (X, y), learner_fit_predict(Learner("et")), nd)
        assert len(res.table) == 6
        res.write_csv(tmp_path / "grid.csv")
        assert len((tmp_path / "grid.csv").read_text().splitlines()) == 7

    def test_direct_multistep_search(self):
        feats = [np.random.default_rng(h).normal(size=(60, 2)) for h in range(3)]
        Y = np.column_stack([f[:, 0] for f in feats]) + 5
        res = grid_search({"learning_rate": [0.0, 0.5]}, (feats, Y), (feats, Y),
                          learner_fit_predict(Learner("gbm", {"n_estimators": 5, "min_child_samples": 3}), horizon=3),
                          nd)
        assert res.best_params["learning_rate"] == 0.5

    def test_empty_grid(self):
        with pytest.raises(ValueError):
            expand_grid({})
        with pytest.raises(ValueError):
            expand_grid({"a": []})
