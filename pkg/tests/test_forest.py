import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_data, make_tdc_data
from rocsurv._rng import stream
from rocsurv.forest import (
    ForestModel,
    fit_forest,
    forest_hazard,
    forest_hazard_paths,
    forest_survival,
    local_weights,
)
from rocsurv.kernels import clamp_time, epanechnikov
from rocsurv.scenarios import ScenarioSpec, generate
from rocsurv.survival_data import CovariatePath, Dataset, transform, uncensored_quantile_grid
from rocsurv.tree import grow, predict_survival


def prep(d, q=20):
    return transform(d, uncensored_quantile_grid(d, q))


def walk(tree, x):
    """Leaf reached by one point, by explicit descent."""
    j = 0
    while tree.left[j] >= 0:
        j = tree.left[j] if x[tree.feature[j]] <= tree.threshold[j] else tree.right[j]
    return j


def same_forest(a, b):
    return (np.array_equal(a.weights, b.weights) and all(
        np.array_equal(s.feature, t.feature) and np.array_equal(s.threshold, t.threshold)
        for s, t in zip(a.trees, b.trees)))


@pytest.fixture(scope="module")
def scenario_i_fit():
    sim = generate(ScenarioSpec("I", n=1000), stream(0, "forest-hazard-check"))
    td = prep(sim.dataset)
    f = fit_forest(td, B=200, seed=0)
    g = td.grid.times
    inner = g[(g >= f.bandwidth) & (g <= sim.dataset.horizon - f.bandwidth)]
    path = CovariatePath.constant("median", np.zeros(25), 99.0, 0)
    # true hazard at Z = 0 is exp(0) = 1
    return np.array([forest_hazard_paths(f, path, t) for t in inner])


class TestFit:
    def test_bootstrap_weights_sum_to_n(self):
        td = prep(make_data(80, seed=1))
        f = fit_forest(td, B=5, seed=0)
        assert np.all(f.weights.sum(axis=1) == 80)
        assert np.array_equal(f.weights, f.grow_weights)

    def test_honest_sets_disjoint(self):
        td = prep(make_data(80, seed=1))
        f = fit_forest(td, B=5, seed=0, resample_mode="subsample_honest")
        for I1, I2 in f.honest_sets():
            assert I1.size and I2.size and not np.intersect1d(I1, I2).size
            assert I1.size + I2.size == round(0.632 * 80)

    def test_default_m(self):
        td = prep(make_data(60, p=10, seed=2))
        assert fit_forest(td, B=1, seed=0).m == 4

    def test_same_seed_identical(self):
        td = prep(make_data(100, p=5, seed=3))
        assert same_forest(fit_forest(td, B=8, seed=7), fit_forest(td, B=8, seed=7))
        assert not same_forest(fit_forest(td, B=8, seed=7), fit_forest(td, B=8, seed=8))

    def test_bad_arguments(self):
        td = prep(make_data(40))
        with pytest.raises(ValueError):
            fit_forest(td, B=0)
        with pytest.raises(ValueError):
            fit_forest(td, B=1, m=4)
        with pytest.raises(ValueError):
            fit_forest(td, B=1, resample_mode="jackknife")

    def test_zero_event_weights_give_root(self):
        td = prep(make_data(100, seed=4))
        w = (td.source.delta == 0).astype(float)
        assert grow(td, weights=w).n_leaves == 1

    def test_single_tree_matches_grow(self):
        td = prep(make_data(120, seed=5))
        f = fit_forest(td, B=1, m=td.p, resample_mode="none", seed=0)
        t = grow(td)
        assert np.array_equal(f.trees[0].feature, t.feature) and np.array_equal(f.trees[0].threshold, t.threshold)


class TestLocalWeights:
    def test_brute_force_three_trees(self):
        d = make_tdc_data(20, seed=5)
        td = prep(d, 5)
        f = fit_forest(td, B=3, m=1, n_min=4, seed=1)
        rng = np.random.default_rng(0)
        for t in td.grid.times[[0, 2, 4]]:
            z = rng.random(2)
            k = int(np.argmin(np.abs(td.grid.times - t)))
            ref = np.zeros(20)
            for tree, w in zip(f.trees, f.weights):
                lz = walk(tree, z)
                for i in range(20):
                    if walk(tree, td.values[k, i]) == lz:
                        ref[i] += w[i]
            assert np.array_equal(local_weights(f, t, z).weights, ref / 3)

    def test_root_forest_weights_are_resample_means(self):
        td = prep(make_data(50, seed=6))
        f = fit_forest(td, B=4, n_min=1000, seed=0)
        lw = local_weights(f, td.grid.times[3], np.full(td.p, 0.5))
        assert np.allclose(lw.weights, f.weights.mean(axis=0))


class TestHazard:
    def test_single_tree_is_leafwise_kernel_nelson_aalen(self):
        d = make_data(150, seed=7)
        td = prep(d)
        f = fit_forest(td, B=1, m=td.p, resample_mode="none", seed=0)
        tree = f.trees[0]
        z = np.array([0.3, 0.6, 0.2])
        h = f.bandwidth
        for t in td.grid.times[[2, 9, 15]]:
            lz = walk(tree, z)
            tc = clamp_time(t, h, d.horizon)
            ref = 0.0
            for i in np.flatnonzero(d.delta == 1):
                k = int(td.anchor[i])
                if walk(tree, td.values[k, i]) != lz:
                    continue
                r = sum(1 for j in range(d.n) if d.Y[j] >= d.Y[i] and walk(tree, td.values[k, j]) == lz)
                ref += epanechnikov((tc - d.Y[i]) / h) / h / r
            assert forest_hazard(f, z, t) == pytest.approx(ref, rel=1e-12, abs=1e-15)

    def test_duplicated_data_unchanged(self):
        d = make_tdc_data(60, seed=8)
        td = prep(d, 10)
        f = fit_forest(td, B=6, seed=2)
        d2 = Dataset(list(d.subjects) + list(d.subjects), d.horizon)
        td2 = transform(d2, td.grid)
        f2 = ForestModel(f.trees, np.tile(f.weights, 2), np.tile(f.grow_weights, 2), f.mode, td2, f.policy,
                         f.bandwidth, f.m, f.n_min, f.criterion, f.seed)
        Z = np.random.default_rng(1).random((5, 2))
        for t in td.grid.times[[1, 5, 8]]:
            assert np.allclose(forest_hazard(f, Z, t), forest_hazard(f2, Z, t), rtol=1e-12, equal_nan=True)
        times = np.linspace(0, 2, 9)
        assert np.allclose(forest_survival(f, d.subjects[:4], times), forest_survival(f2, d.subjects[:4], times),
                           rtol=1e-12)

    def test_paths_use_nearest_grid_covariate(self):
        d = make_tdc_data(80, seed=9)
        td = prep(d, 10)
        f = fit_forest(td, B=4, seed=0)
        p = d.subjects[0]
        t = td.grid.times[4]
        assert forest_hazard_paths(f, p, t) == forest_hazard(f, td.transform_paths([p])[0, 4], t)

    def test_nonnegative(self):
        td = prep(make_data(100, seed=10))
        f = fit_forest(td, B=10, seed=0)
        Z = np.random.default_rng(2).random((20, td.p))
        v = forest_hazard(f, Z, td.grid.times[10])
        assert np.all(v[~np.isnan(v)] >= 0)

    @pytest.mark.slow
    @pytest.mark.xfail(strict=True, reason="late interior grid times have few subjects at risk in the "
                                           "neighbourhood; see the decisions ledger")
    def test_scenario_i_hazard_pointwise(self, scenario_i_fit):
        assert np.all(np.abs(scenario_i_fit - 1.0) <= 0.25), scenario_i_fit

    @pytest.mark.slow
    def test_scenario_i_hazard_typical_error(self, scenario_i_fit):
        assert np.median(np.abs(scenario_i_fit - 1.0)) <= 0.25


class TestSurvival:
    def test_single_tree_reduction(self):
        d = make_tdc_data(120, seed=11)
        td = prep(d)
        f = fit_forest(td, B=1, m=td.p, resample_mode="none", seed=0)
        paths = make_tdc_data(6, seed=12).subjects
        times = np.linspace(0, 3, 25)
        assert np.allclose(forest_survival(f, paths, times), predict_survival(grow(td), paths, times),
                           rtol=0, atol=1e-12)

    def test_properties(self):
        d = make_tdc_data(100, seed=13)
        f = fit_forest(prep(d), B=10, seed=0)
        S = forest_survival(f, make_tdc_data(8, seed=14).subjects, np.linspace(0, 4, 40))
        assert np.all(S[:, 0] == 1.0)
        assert np.all(np.diff(S, axis=1) <= 0)
        assert np.all((S > 0) & (S <= 1))

    def test_tree_order_invariance(self):
        d = make_data(100, seed=15)
        td = prep(d)
        f = fit_forest(td, B=7, seed=0)
        r = ForestModel(f.trees[::-1], f.weights[::-1], f.grow_weights[::-1], f.mode, td, f.policy, f.bandwidth,
                        f.m, f.n_min, f.criterion, f.seed)
        times = np.linspace(0, 2, 11)
        assert np.allclose(forest_survival(f, d.subjects[:5], times), forest_survival(r, d.subjects[:5], times),
                           rtol=1e-12)

    def test_skipped_count(self):
        td = prep(make_data(80, seed=16))
        f = fit_forest(td, B=3, seed=0, resample_mode="subsample_honest")
        _, skipped = forest_survival(f, td.source.subjects[:2], [1.0], return_skipped=True)
        assert skipped >= 0


@settings(max_examples=10)
@given(st.integers(0, 1000))
def test_local_weights_mass(seed):
    td = prep(make_data(40, seed=seed % 7))
    f = fit_forest(td, B=3, n_min=6, seed=seed)
    z = np.random.default_rng(seed).random(td.p)
    w = local_weights(f, td.grid.times[5], z).weights
    assert np.all(w >= 0) and w.sum() <= 40 + 1e-9
