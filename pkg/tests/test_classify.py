import numpy as np
import pytest

from avlbp import classify
from avlbp.classify import ClassifierSpec
from avlbp.errors import ModelFileError, SchemaError
from avlbp.features import Dataset


def clusters(n=50, d=3, gap=10.0, seed=0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 1, (n, d)), rng.normal(gap, 1, (n, d))])
    y = np.array([0] * n + [1] * n)
    return Dataset(X, y, ["img"] * (2 * n), np.arange(2 * n), "test:gauss")


def histogram_dataset():
    rng = np.random.default_rng(3)
    X = rng.dirichlet(np.ones(36), size=40)
    X[:20, :5] += 0.5
    X /= X.sum(axis=1, keepdims=True)
    X = np.hstack([X, X[:, ::-1]])
    return Dataset(X, [0] * 20 + [1] * 20, ["i"] * 40, range(40), "lbp:P8R1ri,P8R2ri;w15;green")


ALL_SPECS = [
    ClassifierSpec("naive_bayes"),
    ClassifierSpec("cart"),
    ClassifierSpec("random_tree", seed=4),
    ClassifierSpec("random_forest", {"n_trees": 15}, seed=2),
    ClassifierSpec("bagging_cart", {"n_trees": 7}, seed=5),
    ClassifierSpec("majority_voting", seed=1),
    ClassifierSpec("prototype_lbp"),
]


def test_naive_bayes_separated_clusters_perfect():
    ds = clusters()
    model = classify.train(ClassifierSpec("naive_bayes"), ds)
    assert np.array_equal(classify.predict_dataset(model, ds) >= 0.5, ds.y == 1)


def test_naive_bayes_symmetric_point_scores_half():
    # class means -1 and +1, equal spreads and priors: 0 is equidistant
    X = np.array([[-1.5], [-0.5], [0.5], [1.5]])
    ds = Dataset(X, [0, 0, 1, 1], ["i"] * 4, range(4), "t")
    model = classify.train(ClassifierSpec("naive_bayes"), ds)
    assert classify.predict(model, [0.0]).artery_score == pytest.approx(0.5, abs=1e-9)


def test_random_forest_deterministic():
    ds = clusters(gap=1.5)
    probe = np.random.default_rng(9).normal(0.7, 2, (40, 3))
    spec = ClassifierSpec("random_forest", {"n_trees": 20}, seed=11)
    a = classify.train(spec, ds).scores(probe)
    b = classify.train(spec, ds).scores(probe)
    assert np.array_equal(a, b)
    c = classify.train(ClassifierSpec("random_forest", {"n_trees": 20}, seed=12), ds).scores(probe)
    assert not np.array_equal(a, c)


def test_forest_vote_fraction():
    leaf = lambda v: {"feature": np.array([-1]), "threshold": np.array([0.0]),  # noqa: E731
                      "left": np.array([-1]), "right": np.array([-1]), "value": np.array([v])}
    params = {"trees": [leaf(1.0)] * 7 + [leaf(0.0)] * 3}
    model = classify.TrainedModel(ClassifierSpec("random_forest", {"n_trees": 10}), "s", 2,
                                  {"artery": 1, "vein": 1}, params)
    pred = classify.predict(model, [0.0, 0.0])
    assert pred.artery_score == pytest.approx(0.7) and pred.label == "artery"


def test_prototype_one_sample_per_class():
    ds = histogram_dataset().subset([0, 39])
    model = classify.train(ClassifierSpec("prototype_lbp"), ds)
    assert model.params["blocks"] == [36, 36]
    s = model.scores(ds.X)
    assert s[0] < 0.5 < s[1]
    assert s[1] == 1.0  # L_artery = 0 for the artery prototype itself


def test_cart_fits_training_data():
    ds = clusters(gap=1.0)
    model = classify.train(ClassifierSpec("cart"), ds)
    assert np.array_equal(model.scores(ds.X), ds.y.astype(float))


def test_max_depth_limits_tree():
    ds = clusters(gap=1.0)
    model = classify.train(ClassifierSpec("cart", {"max_depth": 1}), ds)
    assert len(model.params["trees"][0]["feature"]) == 3


def test_single_class_training_rejected():
    ds = clusters().subset(np.arange(50))
    with pytest.raises(ValueError):
        classify.train(ClassifierSpec("cart"), ds)


def test_spec_validation():
    with pytest.raises(ValueError):
        ClassifierSpec("svm")
    with pytest.raises(ValueError):
        ClassifierSpec("cart", {"n_trees": 3})
    with pytest.raises(ValueError):
        ClassifierSpec("random_forest", {"n_trees": 0})
    with pytest.raises(ValueError):
        ClassifierSpec("majority_voting", {"members": ["majority_voting"]})


def test_wrong_feature_count_and_schema():
    ds = clusters()
    model = classify.train(ClassifierSpec("naive_bayes"), ds)
    with pytest.raises(SchemaError):
        model.scores(np.zeros((1, 4)))
    with pytest.raises(SchemaError):
        classify.predict(model, [0, 0, 0], schema_id="other")


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.kind)
def test_model_round_trip(spec, tmp_path):
    ds = histogram_dataset()
    model = classify.train(spec, ds)
    path = tmp_path / "m.bin"
    classify.save_model(model, path)
    back = classify.load_model(path)
    assert back.spec == spec.__class__.from_json(spec.to_json())
    assert back.schema_id == ds.schema_id
    assert np.array_equal(back.scores(ds.X), model.scores(ds.X))
    assert classify.model_to_bytes(back) == path.read_bytes()


def test_truncated_and_future_model_files():
    data = classify.model_to_bytes(classify.train(ClassifierSpec("naive_bayes"), clusters()))
    with pytest.raises(ModelFileError):
        classify.model_from_bytes(data[:-10])
    with pytest.raises(ModelFileError):
        classify.model_from_bytes(data[:5])
    future = bytearray(data)
    future[8:10] = (classify.FORMAT_VERSION + 1).to_bytes(2, "little")
    with pytest.raises(ModelFileError, match="version"):
        classify.model_from_bytes(bytes(future))
    corrupt = bytearray(data)
    corrupt[40] ^= 0x01
    with pytest.raises(ModelFileError):
        classify.model_from_bytes(bytes(corrupt))
    with pytest.raises(ModelFileError):
        classify.model_from_bytes(b"NOTAMODL" + data[8:])


def test_voting_members_seeded_independently():
    ds = clusters(gap=1.5)
    model = classify.train(ClassifierSpec("majority_voting", seed=3), ds)
    kinds = [m["spec"]["kind"] for m in model.params["members"]]
    assert kinds == ["naive_bayes", "cart", "random_tree"]
    s = model.scores(ds.X)
    assert set(np.unique(s)) <= {0.0, 1 / 3, 2 / 3, 1.0}
