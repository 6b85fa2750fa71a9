import numpy as np
import pytest

from base.errors import LabelError, ShapeError
from base.features import extract_features
from base.forest import ForestConfig, _majority, forest_oob_accuracy, forest_predict, train_forest
from base.rng import make_rng
from base.signal_core import SignalWindow


def _blobs(n=120, d=20, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    X = rng.normal(size=(n, d)) + 3.0 * y[:, None]
    return X, y


class TestForest:
    def test_separable_data(self):
        X, y = _blobs()
        model = train_forest(X, y, ForestConfig(n_trees=25), make_rng(0, "forest"))
        assert len(model.trees) == 25
        assert (forest_predict(model, X) == y).mean() == 1.0
        assert forest_oob_accuracy(model, X, y) > 0.9

    def test_same_stream_same_forest(self):
        X, y = _blobs(seed=1)
        X_test, _ = _blobs(n=30, seed=2)
        a = train_forest(X, y, ForestConfig(n_trees=10), make_rng(3))
        b = train_forest(X, y, ForestConfig(n_trees=10), make_rng(3))
        np.testing.assert_array_equal(a.in_bag, b.in_bag)
        np.testing.assert_array_equal(forest_predict(a, X_test), forest_predict(b, X_test))

    def test_accepts_feature_vectors(self):
        rng = np.random.default_rng(0)
        windows = [SignalWindow(rng.standard_normal((3, 300)) * (1 + 4 * (i % 2))) for i in range(20)]
        vectors = [extract_features(w) for w in windows]
        labels = [i % 2 for i in range(20)]
        model = train_forest(vectors, labels, ForestConfig(n_trees=5), make_rng(0))
        assert forest_predict(model, vectors).shape == (20,)

    def test_no_bootstrap_uses_every_row(self):
        X, y = _blobs(n=30)
        model = train_forest(X, y, ForestConfig(n_trees=3, bootstrap=False), make_rng(0))
        assert model.in_bag.all()
        with pytest.raises(ValueError, match="in-bag"):
            forest_oob_accuracy(model, X, y)

    def test_single_class_rejected(self):
        with pytest.raises(LabelError, match="2 classes"):
            train_forest(np.zeros((4, 20)), [1, 1, 1, 1])

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            train_forest(np.zeros((4, 20)), [0, 1, 0])

    def test_feature_count_mismatch(self):
        X, y = _blobs(n=30)
        model = train_forest(X, y, ForestConfig(n_trees=2), make_rng(0))
        with pytest.raises(ShapeError, match="20 features"):
            forest_predict(model, np.zeros((2, 19)))

    def test_majority_ties_to_smallest_class(self):
        votes = np.array([[2, 0], [1, 0], [1, 3], [2, 3]])
        predictions, counts = _majority(votes, 4)
        assert predictions.tolist() == [1, 0]
        assert counts[0].tolist() == [0, 2, 2, 0]


class TestForestBehaviour:
    def test_monotone_feature_map_leaves_predictions_unchanged(self):
        X, y = _blobs(seed=4)
        X_test, _ = _blobs(n=40, seed=5)
        a = train_forest(X, y, ForestConfig(n_trees=15), make_rng(7))
        b = train_forest(4.0 * X, y, ForestConfig(n_trees=15), make_rng(7))
        np.testing.assert_array_equal(forest_predict(a, X_test), forest_predict(b, 4.0 * X_test))

    def test_oob_accuracy_is_chance_on_permuted_labels(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(300, 20))
        y = rng.permutation(np.arange(300) % 2)
        model = train_forest(X, y, ForestConfig(n_trees=60), make_rng(8))
        assert 0.35 <= forest_oob_accuracy(model, X, y) <= 0.65
