import numpy as np
import pytest

from rundiag import TelemetryError
from rundiag.memorization import FoldPair, mem_score, mt_hard, select_hard_subset


def test_select_count_and_order():
    scores = np.linspace(0, 1, 100)
    ids = select_hard_subset(scores, 0.05)
    assert len(ids) == 5
    np.testing.assert_array_equal(ids, [95, 96, 97, 98, 99])


def test_select_tie_plateau_matches_stable_sort_oracle():
    rng = np.random.default_rng(0)
    for _ in range(50):
        scores = rng.integers(0, 4, size=37).astype(float)  # heavy ties
        ids = select_hard_subset(scores, 0.1)
        ranked = sorted(range(37), key=lambda i: (-scores[i], i))
        expected = sorted(ranked[: int(np.ceil(0.1 * 37))])
        np.testing.assert_array_equal(ids, expected)


def test_select_rejects_bad_fraction():
    with pytest.raises(TelemetryError):
        select_hard_subset(np.ones(5), 0.0)
    with pytest.raises(TelemetryError):
        select_hard_subset(np.ones(5), 1.0)


def _fold(k, c_in, c_out):
    n = len(c_in)
    return FoldPair(k, np.arange(n), np.asarray(c_in, bool), np.asarray(c_out, bool))


def test_mt_hard_identical_vectors_zero():
    f = _fold(0, [1, 0, 1, 1], [1, 0, 1, 1])
    assert mt_hard([f]) == 0.0


def test_mt_hard_single_fold_arithmetic():
    c_in = [1] * 9 + [0]     # 0.9
    c_out = [1] * 6 + [0] * 4  # 0.6
    assert mt_hard([_fold(0, c_in, c_out)]) == pytest.approx(0.3)


def test_mt_hard_fifteen_fold_fixture():
    rng = np.random.default_rng(1)
    folds, gaps = [], []
    for k in range(15):
        n = int(rng.integers(5, 30))
        c_in = rng.random(n) < 0.8
        c_out = rng.random(n) < 0.5
        folds.append(_fold(k, c_in, c_out))
        gaps.append(sum(c_in) / n - sum(c_out) / n)
    assert mt_hard(folds) == pytest.approx(sum(gaps) / 15, abs=1e-12)


def test_mt_hard_antisymmetric_and_order_invariant():
    rng = np.random.default_rng(2)
    folds = [
        _fold(k, rng.random(12) < 0.7, rng.random(12) < 0.4) for k in range(6)
    ]
    swapped = [FoldPair(f.fold, f.hard_ids, f.correct_out, f.correct_in) for f in folds]
    assert mt_hard(folds) == pytest.approx(-mt_hard(swapped))
    shuffled = [folds[i] for i in rng.permutation(6)]
    assert mt_hard(folds) == pytest.approx(mt_hard(shuffled))
    assert -1.0 <= mt_hard(folds) <= 1.0


def test_empty_fold_rejected():
    with pytest.raises(TelemetryError, match="empty"):
        FoldPair(0, np.array([], dtype=int), np.array([], bool), np.array([], bool))
    with pytest.raises(TelemetryError, match="needs at least one fold"):
        mt_hard([])


def test_mem_score_cases():
    assert mem_score(1.0, 0.0) == 1.0
    assert mem_score(0.35, 0.35) == 0.0
    with pytest.raises(TelemetryError):
        mem_score(1.2, 0.0)


def test_mem_score_three_seed_bernoulli_fixture():
    rng = np.random.default_rng(3)
    seeds_in = rng.random(3) < 0.9
    seeds_out = rng.random(3) < 0.2
    p_in = sum(seeds_in) / 3
    p_out = sum(seeds_out) / 3
    got = mem_score(p_in, p_out)
    assert got == pytest.approx(p_in - p_out)
    assert abs(got) <= 1.0
