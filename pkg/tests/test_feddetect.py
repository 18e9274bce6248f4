from fractions import Fraction

import numpy as np
import pytest

from fedgansim import feddetect as fd
from fedgansim.errors import ValidationError


def test_average_path_values():
    assert fd.average_path(1) == 0.0
    assert fd.average_path(2) == 1.0
    # 2 H(3) - 2 * 3/4 with H(3) = 11/6
    assert fd.average_path(4) == pytest.approx(float(2 * Fraction(11, 6) - Fraction(3, 2)), abs=1e-15)
    assert fd.average_path(256) == pytest.approx(
        2 * sum(1 / k for k in range(1, 256)) - 2 * 255 / 256, abs=1e-12)


def test_single_value_and_ties_make_leaves():
    rng = np.random.default_rng(0)
    assert fd.build_tree([3.0], rng) == fd.Leaf(1)
    assert fd.build_tree([2.0] * 5, rng) == fd.Leaf(5)


def test_path_lengths():
    assert fd.path_length(fd.Leaf(1), 0.0) == 0.0
    assert fd.path_length(fd.Leaf(2), 0.0) == 1.0
    tree = fd.Node(5.0, fd.Node(1.0, fd.Leaf(1), fd.Leaf(1)), fd.Leaf(3))
    assert fd.path_length(tree, 0.0) == 2.0
    assert fd.path_length(tree, 9.0) == 1.0 + fd.average_path(3)


def test_split_isolates_far_value():
    rng = np.random.default_rng(7)
    hits = 0
    for _ in range(1000):
        tree = fd.build_tree([1.0, 2.0, 100.0], rng)
        hits += isinstance(tree.right, fd.Leaf) and tree.right.count == 1 and tree.split > 2.0
    assert hits >= 950


def test_splits_strictly_inside_range():
    rng = np.random.default_rng(0)
    for _ in range(200):
        tree = fd.build_tree([0.0, 1e-12], rng)
        assert 0.0 < tree.split < 1e-12


def test_score_is_half_at_average_depth():
    # every tree on n equal values is one leaf, so E(h) = C(n) exactly
    scores = fd.anomaly_scores([0.3] * 6, fd.ForestParams(n_trees=10))
    np.testing.assert_array_equal(scores, 0.5)


def test_score_monotone_in_depth():
    c = fd.average_path(4)
    depths = np.array([1.0, 1.5, 2.0, 3.0])
    s = 2.0 ** (-depths / c)
    assert np.all(np.diff(s) < 0)


def _distance_rank_top(values):
    return int(np.argmax(np.abs(values - np.median(values))))


def test_planted_outlier_wins():
    values = np.array([1.0, 1.02, 0.98, 9.0])
    wins = 0
    for seed in range(100):
        s = fd.anomaly_scores(values, fd.ForestParams(), np.random.default_rng(seed))
        top = int(np.argmax(s))
        unique = np.sum(s == s[top]) == 1
        wins += unique and top == 3 == _distance_rank_top(values)
    assert wins >= 95


def test_subsampling_size():
    s = fd.anomaly_scores(np.arange(300.0), fd.ForestParams(n_trees=5, subsample_size=16),
                          np.random.default_rng(0))
    assert s.shape == (300,) and np.all((s > 0) & (s < 1))


def test_scores_need_two_values():
    with pytest.raises(ValidationError):
        fd.anomaly_scores([1.0])


def test_warmup_leaves_state_unchanged():
    st = fd.DetectionState.initial(4, warmup=10)
    new, out = fd.detect_round(st, [0, 0, 0, 50.0], fd.ForestParams(), t=10)
    np.testing.assert_array_equal(new.weights, st.weights)
    assert out.flagged == frozenset() and out.scores is None


def test_first_flag_arithmetic():
    st = fd.DetectionState.initial(4, decay=0.9)
    np.testing.assert_array_equal(st.weights, 0.25)
    new = fd.decay_weights(st, {3})
    assert new.weights[3] == pytest.approx(0.225 / 0.975, abs=1e-15)
    assert new.weights[3] == pytest.approx(0.23077, abs=5e-6)
    np.testing.assert_allclose(new.weights[:3], 0.25 / 0.975, rtol=1e-15)
    assert new.weights[0] == pytest.approx(0.25641, abs=5e-6)
    assert list(new.flag_counts) == [0, 0, 0, 1]


def test_half_outliers_fail_gate():
    st = fd.DetectionState.initial(4, warmup=0)
    params = fd.ForestParams(score_threshold=0.55)
    new, out = fd.detect_round(st, [0.0, 0.0, 40.0, -40.0], params, t=1)
    assert out.outliers == frozenset({2, 3})
    assert out.flagged == frozenset()
    np.testing.assert_array_equal(new.weights, st.weights)


def test_equal_losses_flag_nothing():
    st = fd.DetectionState.initial(5, warmup=0)
    _, out = fd.detect_round(st, [-0.7] * 5, fd.ForestParams(), t=3)
    assert out.flagged == frozenset()


def test_telescoping_decay_exact():
    # client 0 flagged every round: after r flags its raw weight carries d^(1+2+...+r)
    d = 0.9
    st = fd.DetectionState.initial(4, decay=d)
    raw = np.full(4, 0.25)
    for r in range(1, 8):
        st = fd.decay_weights(st, {0})
        raw[0] *= d ** r
        expected = raw / raw.sum()
        np.testing.assert_allclose(st.weights, expected, rtol=1e-13)
        ratio = st.weights[0] / st.weights[1]
        assert ratio == pytest.approx(d ** (r * (r + 1) // 2), rel=1e-12)
        assert abs(st.weights.sum() - 1) <= 1e-9


def test_wrong_report_count():
    st = fd.DetectionState.initial(4, warmup=0)
    with pytest.raises(ValidationError):
        fd.detect_round(st, [0.0, 1.0, 2.0], fd.ForestParams(), t=1)


def test_replayable_randomness():
    st = fd.DetectionState.initial(4, warmup=0)
    a = fd.detect_round(st, [0.1, 0.2, 0.15, 3.0], fd.ForestParams(), 5, seed=1)[1]
    b = fd.detect_round(st, [0.1, 0.2, 0.15, 3.0], fd.ForestParams(), 5, seed=1)[1]
    np.testing.assert_array_equal(a.scores, b.scores)


def test_params_validation():
    with pytest.raises(ValidationError):
        fd.ForestParams(n_trees=0)
    with pytest.raises(ValidationError):
        fd.ForestParams(score_threshold=0.4)
    with pytest.raises(ValidationError):
        fd.DetectionState.initial(4, decay=1.0)
