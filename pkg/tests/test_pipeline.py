import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from batdeg.cell import CellHistory, CellParams, CycleRecord, run_life
from batdeg.features import FeatureMatrix
from batdeg.pipeline import (ELEMENTS, PATTERN_ORDER, DatasetLabels, FleetConfig, KneeConfig,
                             LifeLabelConfig, TaskConfig, accuracy, auc, build_fleet, cumulated_mae_curve,
                             cycle_life, delta_q_feature, delta_q_variance, fixture_patterns,
                             knee_label, label_dataset, load_group_centers, load_listed_derived,
                             load_report, load_xps, mae, mape, matrix, nominal_capacity, one_vs_rest,
                             pattern_labels, plan_fleet, ratio_violations, ridge_model, rmse, roc_auc,
                             roc_curve, run_task, split_indices, sum_violations, total_variation,
                             variance_model, xps_patterns)
from batdeg.protocol import GaussianHmm, constant_protocol, generate_protocol


# --- metrics -----------------------------------------------------------------

def test_metric_examples():
    assert mape([100], [110]) == pytest.approx(10)
    assert mae([100], [110]) == pytest.approx(10)
    assert rmse([100], [110]) == pytest.approx(10)
    assert rmse([0, 0], [3, 4]) == pytest.approx(math.sqrt(12.5))


@given(st.lists(st.floats(1, 1e4), min_size=1, max_size=50))
def test_perfect_predictions_zero_error(y):
    assert mape(y, y) == mae(y, y) == rmse(y, y) == 0


def test_mape_zero_target_lists_cells():
    with pytest.raises(ValueError, match="c2"):
        mape([1.0, 0.0], [1.0, 1.0], ids=["c1", "c2"])
    with pytest.raises(ValueError):
        mae([1.0], [1.0, 2.0])


def test_roc_perfect_random_and_ties():
    rng = np.random.default_rng(0)
    labels = rng.permutation(np.r_[np.ones(5000), np.zeros(5000)])
    assert roc_auc(labels + 0.1 * rng.random(10_000), labels) == 1.0
    assert abs(roc_auc(rng.random(10_000), labels) - 0.5) <= 0.02
    assert roc_auc(np.ones(4), [0, 1, 0, 1]) == 0.5
    fpr, tpr, thr = roc_curve([0.9, 0.8, 0.8, 0.1], [1, 1, 0, 0])
    np.testing.assert_allclose(fpr, [0, 0, 0.5, 1])
    np.testing.assert_allclose(tpr, [0, 0.5, 1, 1])
    assert thr[0] == np.inf
    assert auc([0, 1], [0, 1]) == 0.5
    with pytest.raises(ValueError):
        roc_curve([0.1, 0.2], [1, 1])


def test_one_vs_rest_macro():
    labels = np.array([0, 0, 1, 1, 2, 2])
    proba = np.eye(3)[labels] * 0.8 + 0.1
    roc = one_vs_rest(proba, labels, [0, 1, 2])
    assert set(roc) == {0, 1, 2, "macro"}
    assert all(roc[k]["auc"] == 1.0 for k in roc)


def test_cum_mae_and_tv_and_accuracy():
    np.testing.assert_allclose(cumulated_mae_curve(["a", "b", "c"], {"a": 1, "b": -3, "c": 2}), [1, 2, 2])
    assert total_variation([1, 0], [0, 1]) == 1.0
    assert total_variation([1, 2, 3], [2, 4, 6]) == 0.0
    assert accuracy([1, 0, 1, 1], [1, 1, 1, 1]) == 0.75


# --- labels ------------------------------------------------------------------

def test_nominal_capacity():
    assert nominal_capacity([2.2] * 5) == pytest.approx(2.2)
    assert nominal_capacity([2.0, 2.1, 2.2, 2.1, 2.1, 0.1]) == pytest.approx(2.1)
    with pytest.raises(ValueError):
        nominal_capacity([2.0] * 4)


def test_cycle_life_linear_fade():
    # nominal 2.0 over the first five cycles, then cycle n holds 2.0 * (1 - 0.01 n):
    # cycle 20 sits exactly on the threshold, cycle 21 is the first below it
    n = np.arange(6, 41)
    lab = cycle_life(np.r_[np.full(5, 2.0), 2.0 * (1 - 0.01 * n)])
    assert lab.life == 21 and not lab.censored
    assert cycle_life(np.full(30, 2.0)).censored


def test_cycle_life_strict_boundary():
    q = np.r_[np.full(5, 1.0), 0.8, 0.8, 0.79]
    assert cycle_life(q).life == 8


def test_knee_labels_on_curves():
    linear = 2.2 - 1e-3 * np.arange(300)
    lab = knee_label(linear)
    assert not lab.knee
    np.testing.assert_allclose(lab.slopes, 1e-3)
    np.testing.assert_allclose(lab.changes, 0, atol=1e-12)
    assert knee_label(linear, KneeConfig(mode="max_slope")).knee
    bent = np.where(np.arange(300) < 120, linear, linear[120] - 5e-3 * (np.arange(300) - 120))
    assert knee_label(bent).knee
    assert not knee_label(bent, KneeConfig(threshold=math.inf)).knee
    with pytest.raises(ValueError):
        knee_label(linear[:99])


def _fake_history(cid, caps, temp=25.0):
    cycles = [CycleRecord(i + 1, temp, "p", q, q, 0.0, 0.0) for i, q in enumerate(caps)]
    return CellHistory(cid, CellParams(temperature=temp), cycles, "max_cycles")


def test_label_dataset_reconciles():
    hs = [
        _fake_history("short", np.full(20, 2.0)),
        _fake_history("flat", np.full(120, 2.0)),
        _fake_history("fades", 2.0 - 0.005 * np.arange(120)),
        _fake_history("cold", 2.0 - 0.008 * np.arange(120), temp=-10.0),
    ]
    labels = label_dataset(hs)
    assert labels.life == {"short": None, "flat": None, "fades": 83, "cold": 53}
    assert labels.knee["short"] is None and labels.knee["fades"] == 0
    s = labels.summary()
    assert s["n_cells"] == 4 and s["n_life"] == 2
    assert sum(s["excluded"].values()) == s["n_cells"] - s["n_life"]
    assert labels.pattern == {"short": None, "flat": None, "fades": 3, "cold": 1}
    back = DatasetLabels.from_json(json.loads(json.dumps(labels.to_json())))
    assert back.life == labels.life


def test_pattern_labels_bands():
    temps = {"a": -10, "b": 0, "c": 25, "d": 45, "e": 46, "f": 70, "g": 30}
    lives = {"a": 100, "b": 200, "c": 300, "d": 500, "e": 90, "f": 80, "g": None}
    p = pattern_labels(temps, lives)
    assert p == {"a": 1, "b": 2, "c": 3, "d": 4, "e": 6, "f": 5, "g": None}


# --- baselines ---------------------------------------------------------------

def test_variance_model_log_linear_oracle():
    rng = np.random.default_rng(2)
    var = 10 ** rng.uniform(-6, -3, 30)
    life = 10 ** (0.5 - 0.4 * np.log10(var))
    res = variance_model(var[:20], life[:20], var[20:], life[20:])
    assert res.test_metrics["mape"] < 0.5
    np.testing.assert_allclose(res.coef, [0.5, -0.4], atol=1e-9)
    row = res.table_row()
    assert list(row) == ["model", "train_mape", "test_mape", "train_rmse", "test_rmse"]


def test_variance_model_drops_non_positive():
    var = np.array([1e-4, 2e-4, 0.0, 4e-4, 5e-4, np.nan])
    life = np.array([100, 90, 80, 70, 60, 50.0])
    with pytest.warns(UserWarning, match="2"):
        res = variance_model(var, life, var[:2], life[:2])
    assert res.dropped == ["2", "5"]
    with pytest.raises(ValueError):
        variance_model(var[2:4], life[2:4], var, life)


def test_ridge_exact_log_linear():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(40, 5))
    life = 10 ** (2.5 + 0.1 * X[:, 0])
    res = ridge_model(X[:30], life[:30], X[30:], life[30:], alpha=1e-8)
    assert res.test_metrics["mape"] < 1e-3


@pytest.fixture(scope="module")
def traced_cell():
    model = GaussianHmm([[0.8, 0.2, 0.0], [0.1, 0.8, 0.1], [0.0, 0.3, 0.7]],
                        [0.0, 6.0, 14.0], [0.01, 2.0, 4.0], [0.3, 0.4, 0.3])
    protos = [generate_protocol(model, s, 21600, 140) for s in range(50)]
    return run_life(CellParams(seed=5, fade_per_cycle=2e-3), protos, max_cycles=50, dt=10.0,
                    cell_id="dq")


def test_delta_q(traced_cell):
    assert np.all(np.nan_to_num(delta_q_feature(traced_cell, 10, 10)) == 0)
    dq = delta_q_feature(traced_cell)
    finite = dq[~np.isnan(dq)]
    assert len(finite) > 0 and np.mean(finite < 0) > 0.5
    v = delta_q_variance(traced_cell)
    assert math.isfinite(v) and v == pytest.approx(np.var(finite))
    with pytest.raises(ValueError):
        delta_q_feature(traced_cell, 10, 51)


# --- task runner -------------------------------------------------------------

def _matrix(n=30, p=20, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    ids = [f"c{i:02d}" for i in range(n)]
    return FeatureMatrix(ids, [f"f{j}" for j in range(p)], X)


def test_run_task_life_predictable():
    fm = _matrix(60)
    x = fm.values[:, 3]
    labels = {c: 300 + 100 * np.tanh(v) for c, v in zip(fm.cell_ids, x)}
    cfg = TaskConfig(seeds=(0, 1, 2), n_trees=60, max_features="all")
    rep = run_task("life", fm, labels, cfg)
    assert rep.summary()["forest"]["test"]["mape"]["mean"] < 5
    assert rep.importance_top[0][1] == "f3"
    assert len(rep.cum_mae["forest"]) == len(split_indices(60, 0)[1])
    again = run_task("life", fm, labels, cfg)
    assert json.dumps(again.to_json(), sort_keys=True) == json.dumps(rep.to_json(), sort_keys=True)


def test_run_task_life_with_baselines_and_exclusions(tmp_path):
    fm = _matrix(25, 8, 1)
    rng = np.random.default_rng(4)
    labels = {c: float(200 + 50 * v) for c, v in zip(fm.cell_ids, fm.values[:, 0])}
    labels["c00"] = None
    dq = {c: rng.normal(size=10) * (1 + abs(fm.row(c)[0])) for c in fm.cell_ids}
    rep = run_task("life", fm, labels, TaskConfig(seeds=(0, 1), n_trees=20), delta_q=dq)
    assert set(rep.per_seed) == {"forest", "variance", "ridge"}
    assert rep.excluded == {"c00": "no label (censored or too short)"}
    assert set(rep.cum_mae) == {"forest", "variance", "ridge"}
    assert len({len(v) for v in rep.cum_mae.values()}) == 1
    rep.write(tmp_path)
    back = load_report(tmp_path)
    assert back.summary() == rep.summary()


def test_run_task_knee_threshold_auc():
    fm = _matrix(40, 10, 2)
    labels = {c: int(v > 0) for c, v in zip(fm.cell_ids, fm.values[:, 5])}
    rep = run_task("knee", fm, labels, TaskConfig(seeds=(0, 1, 2, 3), n_trees=50))
    assert rep.roc["macro"]["auc"] > 0.95
    assert set(rep.roc) == {"knee", "no_knee", "macro"}


def test_run_task_pattern_and_errors():
    fm = _matrix(36, 6, 3)
    labels = {c: 1 + int(np.clip(np.floor(v + 1.5), 0, 2)) for c, v in zip(fm.cell_ids, fm.values[:, 1])}
    rep = run_task("pattern", fm, labels, TaskConfig(seeds=(0,), n_trees=30))
    assert {k for k in rep.roc if k != "macro"} <= {"pattern1", "pattern2", "pattern3"}
    with pytest.raises(ValueError):
        run_task("life", fm, {c: None for c in fm.cell_ids})
    with pytest.raises(ValueError):
        run_task("unknown", fm, labels)


def test_split_indices_properties():
    tr, te = split_indices(40, 7)
    assert len(tr) == 24 and len(te) == 16 and not set(tr) & set(te)
    strata = np.repeat([0, 1, 2], [10, 3, 2])
    tr, te = split_indices(15, 1, strata=strata)
    for c in (0, 1, 2):
        assert np.any(strata[tr] == c) and np.any(strata[te] == c)


# --- XPS ---------------------------------------------------------------------

def test_xps_fixture_shape_and_validation():
    samples = load_xps()
    assert len(samples) == 56
    assert all(len(s.fractions) == len(ELEMENTS) for s in samples)
    # rows whose printed fractions do not add up to 100 +- 0.5
    assert [t for t, _ in sum_violations(samples)] == ["25C-15", "25C-17", "30C-40"]
    listed = load_listed_derived()
    pf_off = []
    for s in samples:
        co, pf, _ = listed[s.data_tag]
        assert s.co == pytest.approx(co, abs=1e-6)
        if abs(s.pf - pf) > 1e-6:
            pf_off.append(s.data_tag)
    # the listed PF column disagrees with F1s + P2p on these rows
    assert pf_off == ["25C-15", "25C-4", "25C-17", "25C-11", "30C-35", "30C-40"]
    bad = {t for t, *_ in ratio_violations(samples, listed)}
    assert len(bad) == 22 and "25C-19" not in bad


def test_fixture_groups_match_listed_centers():
    samples = load_xps()
    labels, centers = load_group_centers()
    X = matrix(samples)
    groups = np.array([s.group for s in samples])
    for g, c in centers.items():
        np.testing.assert_allclose(X[groups == g].mean(axis=0), c, atol=1e-3)


def test_fixture_patterns():
    res = fixture_patterns()
    assert sorted(res.excluded) == ["25C-11", "70C-14"]
    assert list(res.names.values()) == list(PATTERN_ORDER)
    assert list(res.patterns) == [f"Pattern {i}" for i in range(1, 7)]
    assert [len(v) for v in res.patterns.values()] == [6, 15, 6, 9, 13, 5]
    assert sum(len(v) for v in res.patterns.values()) == 54


def test_fresh_kmeans_finds_the_singletons():
    res = xps_patterns(load_xps(), k=8, seed=0)
    assert sorted(res.excluded) == ["25C-11", "70C-14"]
    assert len(res.patterns) == 6


def test_xps_duplicate_rows_single_pattern():
    s = load_xps()[0]
    res = xps_patterns([s] * 4, k=1)
    assert len(res.patterns) == 1 and res.inertia == 0
    with pytest.raises(ValueError):
        xps_patterns(load_xps()[:3], k=8)


# --- fleet -------------------------------------------------------------------

def test_fleet_plan_knee_fraction_and_determinism():
    cfg = FleetConfig(n_cells=10, knee_fraction=0.5, temperatures=(10.0, 30.0), seed=3)
    plans = plan_fleet(cfg)
    assert sum(p.knee for p in plans) == 5
    assert all((p.params.knee_cycle is not None) == p.knee for p in plans)
    assert [p.params.temperature for p in plans[:4]] == [10.0, 30.0, 10.0, 30.0]
    assert plan_fleet(cfg) == plans


def test_build_fleet_small():
    model = GaussianHmm([[0.9, 0.1], [0.2, 0.8]], [2.0, 9.0], [0.5, 2.0], [0.5, 0.5])
    cfg = FleetConfig(n_cells=2, max_cycles=3, keep_traces=2, dt=20.0, temperatures=(25.0,))
    a = build_fleet(cfg, model)
    b = build_fleet(cfg, model, jobs=2)
    assert [h.cell_id for h in a] == ["cell000", "cell001"]
    for ha, hb in zip(a, b):
        np.testing.assert_array_equal(ha.discharge_capacities(), hb.discharge_capacities())
    assert a[0].cycles[2].discharge is None and a[0].cycles[1].discharge is not None
