import json

import numpy as np
import pytest

from avlbp import evaluation as ev
from avlbp.classify import ClassifierSpec
from avlbp.errors import SchemaError
from avlbp.evaluation import ConfusionCounts
from avlbp.features import Dataset


def pairwise_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def dataset(X, y, images=None, schema="t"):
    n = len(y)
    return Dataset(np.asarray(X, float).reshape(n, -1), y, images or [f"im{i % 10}" for i in range(n)],
                   range(n), schema)


# --- folds ------------------------------------------------------------------

def test_614_samples_fold_sizes():
    y = np.array([1] * 300 + [0] * 314)
    folds = ev.stratified_kfold(y, 10, 0)
    sizes = np.bincount(folds.assignment, minlength=10)
    assert set(sizes.tolist()) <= {61, 62} and sizes.sum() == 614


def test_exact_stratification_small():
    y = [1, 0] * 5
    folds = ev.stratified_kfold(y, 5, 3)
    for f in range(5):
        assert sorted(np.asarray(y)[folds.test_index(f)].tolist()) == [0, 1]


def test_folds_deterministic_and_seed_sensitive():
    y = np.random.default_rng(0).integers(0, 2, 100)
    a = ev.stratified_kfold(y, 10, 4).assignment
    assert np.array_equal(a, ev.stratified_kfold(y, 10, 4).assignment)
    assert not np.array_equal(a, ev.stratified_kfold(y, 10, 5).assignment)


def test_too_few_per_class():
    with pytest.raises(ValueError):
        ev.stratified_kfold([1] * 3 + [0] * 20, 10)


def test_group_kfold_keeps_groups_together():
    groups = [f"g{i // 7}" for i in range(70)]
    y = [i % 2 for i in range(70)]
    folds = ev.group_kfold(groups, y, 5, 1)
    for g in set(groups):
        assert len({folds.assignment[i] for i in range(70) if groups[i] == g}) == 1
    assert folds.grouped


# --- metrics ----------------------------------------------------------------

def test_recognition_rate_examples():
    assert ev.recognition_rate(ConfusionCounts(5, 0, 5, 0)) == 100.0
    assert ev.recognition_rate(ConfusionCounts(0, 3, 0, 7)) == 0.0
    assert ev.recognition_rate(ConfusionCounts(3, 1, 4, 2)) == 70.0


def test_auc_examples():
    assert ev.roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert ev.roc_auc([0.5] * 6, [0, 1] * 3) == 0.5
    rng = np.random.default_rng(1)
    s = rng.integers(0, 5, 30) / 4
    y = rng.integers(0, 2, 30)
    assert ev.roc_auc(s, y) == pytest.approx(pairwise_auc(s, y), abs=1e-12)


def test_auc_string_labels():
    assert ev.roc_auc([0.9, 0.1], ["artery", "vein"]) == 1.0
    with pytest.raises(ValueError):
        ev.roc_auc([0.9, 0.1], ["artery", "capillary"])


def test_roc_points_end_at_one():
    pts = ev.roc_points([0.9, 0.4, 0.6, 0.1], [1, 0, 1, 0])
    assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
    assert pts[2] == (0.0, 1.0)


# --- cross validation -------------------------------------------------------

def test_prototype_on_repeated_vectors_is_perfect():
    a = np.array([0.7, 0.2, 0.1])
    v = np.array([0.1, 0.3, 0.6])
    X = np.array([a] * 20 + [v] * 20)
    ds = dataset(X, [1] * 20 + [0] * 20)
    rep = ev.cross_validate(ClassifierSpec("prototype_lbp"), ds, 10, 0)
    assert rep.recognition_rate == 100.0 and rep.auc == 1.0
    assert rep.pooled.total == 40


def test_repeated_run_identical_report():
    rng = np.random.default_rng(2)
    ds = dataset(rng.normal(size=(60, 4)) + np.repeat([[0], [1]], 30, axis=0), [0] * 30 + [1] * 30)
    spec = ClassifierSpec("random_forest", {"n_trees": 10}, seed=3)
    a = ev.cross_validate(spec, ds, 5, 7, config={"cv_seed": 7})
    b = ev.cross_validate(spec, ds, 5, 7, config={"cv_seed": 7})
    assert a.to_text() == b.to_text() and a.to_json_text() == b.to_json_text()
    doc = json.loads(a.to_json_text())
    assert doc["cv_seed"] == 7 and doc["classifier_seed"] == 3 and doc["config"] == {"cv_seed": 7}
    assert sum(f["TP"] + f["FP"] + f["TN"] + f["FN"] for f in doc["per_fold"]) == 60


def test_random_labels_auc_near_half():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 5))
    y = rng.permutation([0] * 100 + [1] * 100)
    for spec in (ClassifierSpec("naive_bayes"), ClassifierSpec("random_forest", {"n_trees": 20})):
        rep = ev.cross_validate(spec, dataset(X, y), 10, 0)
        assert abs(rep.auc - 0.5) <= 0.15


def test_grouped_cross_validation():
    rng = np.random.default_rng(5)
    y = [0, 1] * 30
    ds = dataset(rng.normal(size=(60, 2)) + np.array(y)[:, None], y)
    rep = ev.cross_validate(ClassifierSpec("naive_bayes"), ds, 5, 0, group_by_image=True)
    assert rep.grouped and "group_by_image" in rep.to_text()


# --- comparison -------------------------------------------------------------

def two_schema_datasets():
    rng = np.random.default_rng(6)
    y = np.array([0] * 30 + [1] * 30)
    good = dataset(rng.normal(size=(60, 3)) + 4 * y[:, None], y, schema="good")
    bad = dataset(rng.normal(size=(60, 3)), y, schema="bad")
    return {"good": good, "bad": bad}


def test_compare_shape_ranks_and_averages():
    specs = [ClassifierSpec("naive_bayes"), ClassifierSpec("cart")]
    table = ev.compare(specs, two_schema_datasets(), 5, 0)
    assert table.rates.shape == (2, 2)
    assert len(table.rate_averages) == 2
    ranks = table.rank(table.rate_averages)
    assert set(ranks.tolist()) <= {1, 2}
    assert ranks[0] == 1  # "good" dominates every cell
    assert np.all(table.rates[:, 0] > table.rates[:, 1])
    for j in range(2):
        assert table.rate_averages[j] == pytest.approx(table.rates[:, j].sum() / 2, abs=1e-12)
    text = table.render("rate")
    assert "Ave. perf." in text and "Ranking" in text


def test_compare_rejects_different_segment_sets():
    data = two_schema_datasets()
    data["bad"] = data["bad"].subset(np.arange(1, 60))
    with pytest.raises(SchemaError):
        ev.compare([ClassifierSpec("naive_bayes")], data, 5, 0)


def test_rank_ties_share_best_rank():
    assert ev.ComparisonTable.rank([90.0, 95.0, 90.0]).tolist() == [2, 1, 2]
