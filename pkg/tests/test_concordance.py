import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import make_data
from oracles import node_concordance, pairwise_concordance
from rocsurv.concordance import con_t, con_t_grid, delta_icon, icon, icon_value, ranking_key, roc_star
from rocsurv.kernels import BandwidthPolicy, Region, node_hazard
from rocsurv.scenarios import ScenarioSpec, generate
from rocsurv.survival_data import TimeGrid, transform, uncensored_quantile_grid

masses = hnp.arrays(float, st.integers(1, 6), elements=st.floats(0, 1))


class TestConT:
    def test_single_node(self):
        assert con_t([1.3], [0.2], [0.7]) == 0.5

    def test_two_nodes(self):
        assert con_t([2.0, 1.0], [0.2, 0.1], [0.3, 0.6]) == pytest.approx(2 / 3, abs=1e-15)

    @given(st.floats(0, 5), masses, masses)
    def test_all_tied(self, lam, f, S):
        M = min(len(f), len(S))
        f, S = f[:M], S[:M]
        val = con_t(np.full(M, lam), f, S)
        if f.sum() > 0 and S.sum() > 0:
            assert val == pytest.approx(0.5, abs=1e-12)
        else:
            assert np.isnan(val)

    @given(masses, masses, hnp.arrays(float, 6, elements=st.floats(0, 10)))
    def test_matches_ordered_pair_oracle_and_bounds(self, f, S, lam):
        M = min(len(f), len(S))
        f, S, lam = f[:M], S[:M], lam[:M]
        val = con_t(lam, f, S)
        ref = node_concordance(lam, f, S)
        if np.isnan(ref):
            assert np.isnan(val)
        else:
            assert val == pytest.approx(ref, abs=1e-12)
            assert 0 <= val <= 1

    @given(masses, masses, hnp.arrays(float, 6, elements=st.sampled_from([0.0, 0.25, 1.0, 2.0, 3.5, 8.0])))
    def test_invariant_under_increasing_map(self, f, S, lam):
        M = min(len(f), len(S))
        f, S, lam = f[:M], S[:M], lam[:M]
        a, b = con_t(lam, f, S), con_t(lam**3 + 2 * lam + 1, f, S)
        assert (np.isnan(a) and np.isnan(b)) or a == b

    def test_undefined_when_no_mass(self):
        assert np.isnan(con_t([1.0, 2.0], [0.0, 0.0], [0.5, 0.5]))

    def test_event_mass_over_empty_risk_ranks_highest(self):
        key = ranking_key([np.nan, 1.0], [0.1, 0.2], [0.0, 0.5])
        assert key[0] == np.inf

    def test_grid_version_agrees(self):
        rng = np.random.default_rng(0)
        f = rng.random((5, 9))
        S = rng.random((5, 9))
        key = rng.integers(0, 3, (5, 9)).astype(float)
        cg = con_t_grid(key, f, S)
        for k in range(9):
            assert cg[k] == pytest.approx(con_t(key[:, k], f[:, k], S[:, k]), abs=1e-14)


class TestRocStar:
    def test_single_node_diagonal(self):
        c = roc_star([1.0], [0.3], [0.4])
        assert c.fpr.tolist() == [0.0, 1.0] and c.tpr.tolist() == [0.0, 1.0]

    def test_two_node_anchors(self):
        c = roc_star([2.0, 1.0], [0.2, 0.1], [0.3, 0.6])
        assert np.allclose(c.fpr, [0, 1 / 3, 1]) and np.allclose(c.tpr, [0, 2 / 3, 1])
        assert c.area() == pytest.approx(2 / 3, abs=1e-15)

    def test_reversal_leaves_curve(self):
        a = roc_star([2.0, 1.0, 3.0], [0.2, 0.1, 0.4], [0.3, 0.6, 0.1])
        b = roc_star([3.0, 1.0, 2.0], [0.4, 0.1, 0.2], [0.1, 0.6, 0.3])
        assert np.array_equal(a.fpr, b.fpr) and np.array_equal(a.tpr, b.tpr)

    @given(masses, masses, hnp.arrays(float, 6, elements=st.sampled_from([0.0, 1.0, 2.0, 3.5])))
    def test_monotone_anchors(self, f, S, lam):
        M = min(len(f), len(S))
        f, S, lam = f[:M], S[:M], lam[:M]
        if not (f.sum() > 0 and S.sum() > 0):
            return
        c = roc_star(lam, f, S)
        assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
        assert c.fpr[0] == c.tpr[0] == 0 and c.fpr[-1] == c.tpr[-1] == 1


class TestIcon:
    def test_root_only(self, tdata):
        c = node_hazard(tdata, Region.full(tdata.p))
        assert icon(c.f_star[None], c.S_star[None], tdata.grid).icon == 0.5

    def test_constant_con(self):
        g = TimeGrid.uniform([1.0, 2.0, 3.0])
        f = np.array([[0.2] * 3, [0.1] * 3])
        S = np.array([[0.3] * 3, [0.6] * 3])
        assert icon(f, S, g, hazard=np.array([[2.0] * 3, [1.0] * 3])).icon == pytest.approx(2 / 3)

    def test_renormalizes_over_defined(self):
        g = TimeGrid([1.0, 2.0], [0.25, 0.75])
        f = np.array([[0.2, 0.0], [0.1, 0.0]])
        S = np.array([[0.3, 0.5], [0.6, 0.5]])
        rep = icon(f, S, g, hazard=np.array([[2.0, 1.0], [1.0, 1.0]]))
        assert np.isnan(rep.con[1]) and rep.icon == pytest.approx(2 / 3)

    def test_scenario_ii_three_leaves(self):
        sim = generate(ScenarioSpec("II", n=200), np.random.default_rng(11))
        td = transform(sim.dataset, uncensored_quantile_grid(sim.dataset, 20))
        a, b = Region.full(td.p).split(0, 0.5)
        b1, b2 = b.split(1, 0.5)
        curves = [node_hazard(td, r) for r in (a, b1, b2)]
        f = np.array([c.f_star for c in curves])
        S = np.array([c.S_star for c in curves])
        rep = icon(f, S, td.grid)
        vals = []
        for k in range(td.q):
            lam = [f[j, k] / S[j, k] if S[j, k] > 0 else (np.inf if f[j, k] > 0 else 0.0) for j in range(3)]
            vals.append(node_concordance(lam, f[:, k], S[:, k]))
        vals = np.array(vals)
        ok = ~np.isnan(vals)
        assert rep.icon == pytest.approx(np.sum(td.grid.weights[ok] * vals[ok]) / td.grid.weights[ok].sum(), abs=1e-13)

    def test_exports(self, tmp_path):
        g = TimeGrid.uniform([1.0, 2.0])
        rep = icon(np.array([[0.2, 0.1], [0.1, 0.3]]), np.array([[0.3, 0.2], [0.6, 0.4]]), g)
        rep.to_csv(tmp_path / "c.csv")
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "t,con_t" and len(lines) == 3
        assert json.loads(rep.to_json())["icon"] == rep.icon

    def test_icon_value_matches_report(self, tdata):
        lo, hi = Region.full(tdata.p).split(0, 0.4)
        cs = [node_hazard(tdata, r) for r in (lo, hi)]
        f = np.array([c.f_star for c in cs])
        S = np.array([c.S_star for c in cs])
        assert icon_value(f, S, tdata.grid.weights) == icon(f, S, tdata.grid).icon


class TestDeltaIcon:
    def test_identical_children_score_zero(self):
        fP, SP = np.array([0.4, 0.2]), np.array([0.8, 0.6])
        assert delta_icon(fP, SP, fP / 2, SP / 2, fP / 2, SP / 2, np.array([0.5, 0.5])) == 0.0

    def test_events_all_left_positive(self):
        assert delta_icon([0.4], [0.8], [0.4], [0.3], [0.0], [0.5], np.array([1.0])) > 0

    def test_direct_sum_50_subjects(self):
        d = make_data(50, seed=12)
        td = transform(d, uncensored_quantile_grid(d, 10))
        P = Region.full(td.p)
        L, R = P.split(1, 0.5)
        cp, cl, cr = (node_hazard(td, r) for r in (P, L, R))
        got = delta_icon(cp.f_star, cp.S_star, cl.f_star, cl.S_star, cr.f_star, cr.S_star, td.grid.weights)
        ref = 0.0
        for k in range(td.q):
            den = cp.f_star[k] * cp.S_star[k]
            if den > 0:
                ref += td.grid.weights[k] * abs(cl.f_star[k] * cr.S_star[k] - cr.f_star[k] * cl.S_star[k]) / den
        assert got == pytest.approx(ref, abs=1e-14)
        assert got >= 0

    def test_scaled_increment_equals_con_gain(self):
        # with a single grid point the gain in CON_t is half the increment
        f = np.array([0.3, 0.1])
        S = np.array([0.2, 0.5])
        before = con_t([1.0], [f.sum()], [S.sum()])
        after = con_t(f / S, f, S)
        inc = delta_icon([f.sum()], [S.sum()], [f[0]], [S[0]], [f[1]], [S[1]], np.array([1.0]))
        assert after - before == pytest.approx(0.5 * inc, abs=1e-15)


@given(st.integers(2, 30), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_subject_pairwise_equivalence(n, M, seed):
    rng = np.random.default_rng(seed)
    node_ev = rng.integers(0, M, n)
    node_risk = rng.integers(0, M, n)
    kw = rng.random(n) * rng.integers(0, 2, n)
    at_risk = rng.integers(0, 2, n)
    f = np.bincount(node_ev, weights=kw, minlength=M) / n
    S = np.bincount(node_risk, weights=at_risk.astype(float), minlength=M) / n
    key = ranking_key(np.where(S > 0, f / np.where(S > 0, S, 1), np.nan), f, S)
    ref = pairwise_concordance(kw / n, at_risk / n, key[node_ev], key[node_risk])
    val = con_t(key, f, S)
    if np.isnan(ref):
        assert np.isnan(val)
    else:
        assert val == pytest.approx(ref, abs=1e-12)


def test_default_policy_matches_tree_bandwidth(tdata):
    assert node_hazard(tdata, Region.full(tdata.p)).h == BandwidthPolicy().global_bandwidth(tdata.source)
