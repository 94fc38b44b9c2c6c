import numpy as np
import pytest

from lorax import (
    AccuracyMatrix,
    DataError,
    MultiRealMap,
    UndefinedMetricError,
    average_accuracy,
    average_accuracy_final,
    backward_transfer,
    metrics_summary,
    multi_real_correct,
)
from lorax.metrics import task_accuracy, task_accuracy_counts

from oracles import metric_oracle

HAND = np.array([[0.8, 0.6], [np.nan, 0.9]])


def test_hand_case():
    m = AccuracyMatrix.from_values(HAND)
    assert average_accuracy(m) == pytest.approx(0.775, abs=1e-12)
    assert average_accuracy_final(m) == pytest.approx(0.75, abs=1e-12)
    assert backward_transfer(m) == pytest.approx(-0.2, abs=1e-12)


def test_all_ones():
    m = AccuracyMatrix.from_values(np.triu(np.ones((3, 3))))
    assert average_accuracy(m) == 1.0
    assert average_accuracy_final(m) == 1.0
    assert backward_transfer(m) == 0.0


def test_single_task():
    m = AccuracyMatrix.from_values([[0.9]])
    assert average_accuracy(m) == pytest.approx(0.9)
    assert average_accuracy_final(m) == pytest.approx(0.9)
    with pytest.raises(UndefinedMetricError):
        backward_transfer(m)
    summary = metrics_summary(m)
    assert summary["BWT"] is None and summary["n"] == 1


def _random_matrix(rng, n):
    vals = np.full((n, n), np.nan)
    for i in range(n):
        for j in range(i, n):
            vals[i, j] = rng.random()
    return vals


def test_oracle_agreement_random_matrices():
    rng = np.random.default_rng(7)
    for _ in range(200):
        n = int(rng.integers(1, 8))
        vals = _random_matrix(rng, n)
        m = AccuracyMatrix.from_values(vals)
        aa, aaf, bwt = metric_oracle(np.nan_to_num(vals))
        assert abs(average_accuracy(m) - aa) < 1e-12
        assert abs(average_accuracy_final(m) - aaf) < 1e-12
        if n >= 2:
            assert abs(backward_transfer(m) - bwt) < 1e-12


def test_incomplete_matrix_rejected():
    m = AccuracyMatrix(2)
    m.set_value(0, 0, 0.5)
    with pytest.raises(DataError):
        average_accuracy(m)


def test_entry_rules():
    m = AccuracyMatrix(3)
    with pytest.raises(DataError):
        m.set_value(2, 0, 0.5)  # episode precedes task
    with pytest.raises(DataError):
        m.set_value(0, 1, 1.5)
    m.set_counts(0, 1, 47, 50)
    assert m.value(0, 1) == 47 / 50
    assert m.counts(0, 1) == (47, 50)


def test_permutation_sensitivity():
    rng = np.random.default_rng(1)
    vals = _random_matrix(rng, 4)
    base = average_accuracy(AccuracyMatrix.from_values(vals))
    perm = [1, 0, 2, 3]
    swapped = np.full((4, 4), np.nan)
    for i in range(4):
        for j in range(4):
            pi, pj = perm[i], perm[j]
            if pj >= pi:
                swapped[i, j] = vals[pi, pj]
    swapped_vals = np.where(np.isnan(swapped), _random_matrix(rng, 4), swapped)
    for i in range(4):
        for j in range(i, 4):
            if np.isnan(swapped_vals[i, j]):
                swapped_vals[i, j] = rng.random()
    m2 = AccuracyMatrix.from_values(np.triu(swapped_vals))
    assert average_accuracy(m2) != pytest.approx(base, abs=1e-9)


def test_multi_real_rules():
    mmap = MultiRealMap(frozenset({0, 2}))
    assert multi_real_correct(0, 2, mmap)   # both authentic
    assert multi_real_correct(2, 0, mmap)
    assert multi_real_correct(1, 1, mmap)   # exact match always correct
    assert not multi_real_correct(1, 0, mmap)  # fake as real
    assert not multi_real_correct(0, 1, mmap)  # real as fake


def test_multi_real_dominates_strict():
    rng = np.random.default_rng(5)
    mmap = MultiRealMap(frozenset({0, 2, 4}))
    for _ in range(30):
        labels = rng.integers(0, 6, size=40)
        preds = rng.integers(0, 6, size=40)
        strict = float(np.mean(preds == labels))
        multi = task_accuracy(lambda X: preds, np.zeros((40, 1)), labels, mmap)
        assert multi >= strict


def test_task_accuracy_counts_exact():
    mmap = MultiRealMap(frozenset({0}))
    labels = np.array([0, 1, 1, 0])
    preds = np.array([0, 1, 0, 1])
    correct, total = task_accuracy_counts(lambda X: preds, np.zeros((4, 1)), labels, mmap)
    assert (correct, total) == (2, 4)


def test_csv_round_trip():
    m = AccuracyMatrix(3)
    for i in range(3):
        for j in range(i, 3):
            m.set_counts(i, j, 7 + i + j, 13)
    text = m.to_csv()
    back = AccuracyMatrix.from_csv(text)
    assert np.array_equal(np.nan_to_num(back.values), np.nan_to_num(m.values))
    assert back.to_csv() == text
