import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from base.metrics import cohen_kappa, confusion, macro_f1


def _pairs(matrix):
    """Expand a confusion matrix (rows true, columns predicted) into label arrays"""
    y_true, y_pred = [], []
    for i, row in enumerate(matrix):
        for j, count in enumerate(row):
            y_true += [i] * count
            y_pred += [j] * count
    return np.array(y_true), np.array(y_pred)


def _hand_f1(matrix):
    m = np.asarray(matrix, dtype=float)
    scores = []
    for k in range(len(m)):
        tp = m[k, k]
        p = tp / m[:, k].sum() if m[:, k].sum() else 0.0
        r = tp / m[k, :].sum() if m[k, :].sum() else 0.0
        scores.append(2 * p * r / (p + r) if p + r else 0.0)
    return float(np.mean(scores))


def _hand_kappa(matrix):
    m = np.asarray(matrix, dtype=float)
    n = m.sum()
    p_o = np.trace(m) / n
    p_e = float((m.sum(axis=0) * m.sum(axis=1)).sum()) / n**2
    return (p_o - p_e) / (1 - p_e)


CRAFTED = [
    [[5, 0], [0, 5]],
    [[3, 2], [1, 4]],
    [[10, 0, 0], [0, 8, 2], [3, 0, 7]],
    [[2, 1, 1], [0, 0, 4], [1, 1, 6]],
    [[4, 4], [4, 4]],
    [[1, 0, 0, 0], [0, 2, 1, 0], [0, 0, 3, 0], [2, 0, 0, 5]],
]


class TestMacroF1:
    @pytest.mark.parametrize("matrix", CRAFTED)
    def test_matches_hand_computation(self, matrix):
        y_true, y_pred = _pairs(matrix)
        assert macro_f1(y_true, y_pred) == pytest.approx(_hand_f1(matrix), abs=1e-12)

    def test_perfect(self):
        assert macro_f1([0, 1, 2, 2], [0, 1, 2, 2]) == 1.0

    def test_absent_class_not_counted(self):
        # class 2 appears nowhere, so it does not drag the mean down
        assert macro_f1([0, 1], [0, 1], n_classes=3) == 1.0

    def test_predicted_only_class_counts_zero(self):
        assert macro_f1([0, 0], [0, 1]) == pytest.approx((2 / 3 + 0) / 2)

    def test_rejects_out_of_range_and_empty(self):
        with pytest.raises(ValueError):
            macro_f1([0, 3], [0, 1], n_classes=3)
        with pytest.raises(ValueError):
            macro_f1([], [])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=60))
    def test_bounded_and_label_permutation_invariant(self, pairs):
        y_true = np.array([a for a, _ in pairs])
        y_pred = np.array([b for _, b in pairs])
        score = macro_f1(y_true, y_pred)
        assert 0.0 <= score <= 1.0
        relabel = np.array([3, 0, 4, 1, 2])
        assert macro_f1(relabel[y_true], relabel[y_pred]) == pytest.approx(score)


class TestKappa:
    @pytest.mark.parametrize("matrix", CRAFTED)
    def test_matches_hand_computation(self, matrix):
        y_true, y_pred = _pairs(matrix)
        assert cohen_kappa(y_true, y_pred) == pytest.approx(_hand_kappa(matrix), abs=1e-12)

    def test_single_shared_label_is_zero(self):
        assert cohen_kappa([1, 1, 1], [1, 1, 1]) == 0.0

    def test_chance_predictions_near_zero(self):
        rng = np.random.default_rng(0)
        y_true = rng.integers(0, 4, size=20_000)
        y_pred = rng.integers(0, 4, size=20_000)
        assert abs(cohen_kappa(y_true, y_pred)) < 0.05

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=2, max_size=60))
    def test_symmetric(self, pairs):
        y_true = [a for a, _ in pairs]
        y_pred = [b for _, b in pairs]
        assert cohen_kappa(y_true, y_pred) == pytest.approx(cohen_kappa(y_pred, y_true))


class TestConfusion:
    def test_fixed_shape(self):
        m = confusion([0, 1, 1], [0, 0, 1], n_classes=4)
        assert m.shape == (4, 4)
        assert m[1, 0] == 1 and m[1, 1] == 1 and m.sum() == 3
