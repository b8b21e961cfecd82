import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from drkit import metrics as M
from oracles import qwk_direct


def test_confusion_examples():
    assert np.array_equal(M.confusion([0, 1, 2, 3, 4], [0, 1, 2, 3, 4]), np.eye(5, dtype=np.int64))
    assert np.array_equal(M.confusion([], []), np.zeros((5, 5), dtype=np.int64))
    cm = M.confusion([0, 4], [4, 0])
    assert cm[0, 4] == 1 and cm[4, 0] == 1 and cm.sum() == 2
    with pytest.raises(ValueError):
        M.confusion([5], [0])
    with pytest.raises(ValueError):
        M.confusion([0, 1], [0])


def test_kappa_examples():
    assert M.quadratic_weighted_kappa(np.diag([3, 1, 4, 1, 5])) == 1.0
    assert M.quadratic_weighted_kappa([[0, 1], [1, 0]]) == -1.0
    assert M.quadratic_weighted_kappa(np.diag([7, 0, 0, 0, 0])) == 1.0
    with pytest.raises(ValueError):
        M.quadratic_weighted_kappa(np.zeros((5, 5)))


def test_kappa_matches_direct_oracle(nprng):
    for _ in range(1000):
        cm = nprng.integers(0, 101, size=(5, 5))
        if cm.sum() == 0:
            continue
        assert abs(M.quadratic_weighted_kappa(cm) - qwk_direct(cm)) < 1e-12


def test_kappa_from_vectors_matches_oracle(nprng):
    for _ in range(200):
        y, p = nprng.integers(0, 5, size=50), nprng.integers(0, 5, size=50)
        assert abs(M.kappa_score(y, p) - qwk_direct(M.confusion(y, p))) < 1e-12


cms = hnp.arrays(np.int64, (5, 5), elements=st.integers(0, 30)).filter(lambda m: m.sum() > 0)


@given(cms)
def test_kappa_range_and_reversal(cm):
    k = M.quadratic_weighted_kappa(cm)
    assert -1.0 - 1e-12 <= k <= 1.0 + 1e-12
    rev = cm[::-1, ::-1]
    assert abs(M.quadratic_weighted_kappa(rev) - k) < 1e-12


@given(cms, st.integers(2, 7))
def test_kappa_scale_invariant(cm, factor):
    assert abs(M.quadratic_weighted_kappa(cm * factor) - M.quadratic_weighted_kappa(cm)) < 1e-12


def test_moving_mass_off_diagonal_decreases_kappa(nprng):
    """Holds for diagonal-dominant matrices, the regime of useful graders."""
    for _ in range(300):
        cm = nprng.integers(0, 4, size=(5, 5)) + np.diag(nprng.integers(20, 60, size=5))
        i = int(nprng.integers(0, 5))
        j = int(nprng.choice([c for c in range(5) if c != i]))
        moved = cm.copy()
        moved[i, i] -= 1
        moved[i, j] += 1
        assert M.quadratic_weighted_kappa(moved) < M.quadratic_weighted_kappa(cm)
        farther = j + (1 if j > i else -1)
        if 0 <= farther < 5:
            again = moved.copy()
            again[i, j] -= 1
            again[i, farther] += 1
            assert M.quadratic_weighted_kappa(again) < M.quadratic_weighted_kappa(moved)


def test_moving_mass_can_raise_kappa_near_chance():
    # the column marginal shift can outweigh the added disagreement when kappa is near 0
    cm = np.full((5, 5), 5)
    moved = cm.copy()
    moved[1, 1] -= 1
    moved[1, 0] += 1
    assert M.quadratic_weighted_kappa(cm) == 0.0
    assert M.quadratic_weighted_kappa(moved) > 0.0


def test_normalize_rows():
    np.testing.assert_array_equal(M.normalize_rows([[2, 2], [0, 4]]), [[0.5, 0.5], [0, 1]])
    np.testing.assert_array_equal(M.normalize_rows(np.zeros((3, 3))), np.zeros((3, 3)))


@given(hnp.arrays(np.int64, (5, 5), elements=st.integers(0, 9)))
def test_normalized_row_sums(cm):
    sums = M.normalize_rows(cm).sum(axis=1)
    assert all(abs(s) < 1e-12 or abs(s - 1) < 1e-12 for s in sums)


def test_mean_quadratic_distance():
    assert M.mean_quadratic_distance(np.eye(5)) == 0.0
    assert M.mean_quadratic_distance(M.confusion([0, 0], [2, 0])) == 2.0
