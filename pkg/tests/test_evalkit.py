import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aibe import evalkit
from conftest import unit_rows
from aibe.numkit import make_rng


def brute_force_nn(v, s, cands):
    out = []
    for row in v:
        best, best_c = -math.inf, None
        for c in sorted(cands):
            score = float(np.dot(row, s[c]))
            if score > best:
                best, best_c = score, c
        out.append(best_c)
    return np.array(out)


def test_nn_examples():
    s = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert evalkit.nn_classify(np.array([[0.9, 0.1]]), s, [0, 1]).tolist() == [0]
    assert evalkit.nn_classify(np.array([[2 ** -0.5, 2 ** -0.5]]), s, [1, 0]).tolist() == [0]
    assert evalkit.nn_classify(np.array([[0.9, 0.1]]), s, [1]).tolist() == [1]
    with pytest.raises(evalkit.EvaluationError):
        evalkit.nn_classify(np.ones((1, 2)), s, [])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_nn_matches_brute_force(seed):
    rng = make_rng(seed)
    v, s = unit_rows(rng, 10, 4), unit_rows(rng, 6, 4)
    cands = sorted(rng.choice(6, size=3, replace=False).tolist())
    assert np.array_equal(evalkit.nn_classify(v, s, cands), brute_force_nn(v, s, cands))


def test_mca_is_unweighted():
    truth = np.array([0] * 9 + [1])
    preds = np.array([0] * 9 + [0])
    per, score = evalkit.mca(preds, truth, [0, 1])
    assert per == {0: 1.0, 1: 0.0} and score == 0.5


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_mca_invariant_under_class_duplication(seed, k):
    rng = make_rng(seed)
    truth = rng.integers(0, 3, 30)
    truth[:3] = [0, 1, 2]
    preds = rng.integers(0, 3, 30)
    _, base = evalkit.mca(preds, truth, [0, 1, 2])
    dup = truth == 1
    _, again = evalkit.mca(np.concatenate([preds] + [preds[dup]] * k),
                           np.concatenate([truth] + [truth[dup]] * k), [0, 1, 2])
    assert math.isclose(base, again, abs_tol=1e-12)


def test_mca_tally_oracle(rng):
    truth = rng.integers(0, 4, 50)
    preds = np.where(rng.random(50) < 0.6, truth, rng.integers(0, 4, 50))
    classes = sorted(set(truth.tolist()))
    tallies = {c: [0, 0] for c in classes}
    for p, t in zip(preds, truth):
        tallies[t][0] += p == t
        tallies[t][1] += 1
    expect = sum(a / b for a, b in tallies.values()) / len(classes)
    assert math.isclose(evalkit.mca(preds, truth, classes)[1], expect, abs_tol=1e-12)


def test_mca_class_without_samples():
    with pytest.raises(evalkit.EvaluationError):
        evalkit.mca(np.array([0]), np.array([0]), [0, 1])


def test_harmonic_mean():
    assert evalkit.harmonic_mean(50, 50) == 50
    assert evalkit.harmonic_mean(100, 0) == 0
    with pytest.warns(UserWarning):
        assert evalkit.harmonic_mean(0, 0) == 0
    with pytest.raises(ValueError):
        evalkit.harmonic_mean(-1, 1)


def test_harmonic_mean_reference_value():
    assert abs(evalkit.harmonic_mean(72.4, 78.7) - 75.5) <= 0.1


def test_report_format():
    rep = evalkit.EvalReport("generalized", {0: 1.0, 3: 0.5}, 0.75, 1.0, 0.5, 2 / 3)
    lines = evalkit.format_report(rep).splitlines()
    assert lines[0] == "setting,generalized"
    assert lines[-2:] == ["0,1.0", "3,0.5"]
    assert evalkit.summary_lines(rep) == ["MCA_u 50.0", "MCA_s 100.0", "H 66.7"]
    assert evalkit.summary_lines(evalkit.EvalReport("conventional", {}, 1.0)) == ["MCA 100.0"]


def test_nearest_centroid_accuracy():
    v = np.array([[0.0], [0.1], [1.0], [0.9]])
    assert evalkit.nearest_centroid_accuracy(v, [0, 0, 1, 1]) == 1.0
    assert evalkit.nearest_centroid_accuracy(v, [0, 1, 0, 1]) == 0.5
