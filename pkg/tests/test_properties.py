import numpy as np
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from fedgansim import checkpoint, dataset, feddetect, federation, pnm

finite = st.floats(-1e6, 1e6, allow_nan=False)


@st.composite
def weight_vectors(draw, n):
    raw = draw(st.lists(st.floats(0.01, 10.0), min_size=n, max_size=n))
    w = np.array(raw) / sum(raw)
    return w


@given(st.integers(1, 5).flatmap(lambda n: st.tuples(
    st.lists(hnp.arrays(np.float64, 3, elements=finite), min_size=n, max_size=n),
    weight_vectors(n))))
def test_fedavg_is_convex_combination(case):
    arrays, w = case
    out = federation.fed_avg([{"p": a} for a in arrays], w)["p"]
    stacked = np.stack(arrays)
    slack = 1e-9 * (1 + np.abs(stacked).max())
    assert np.all(out >= stacked.min(axis=0) - slack)
    assert np.all(out <= stacked.max(axis=0) + slack)


@given(hnp.arrays(np.float64, 4, elements=finite), weight_vectors(3))
def test_fedavg_identical_exact(a, w):
    out = federation.fed_avg([{"p": a}] * 3, w)["p"]
    np.testing.assert_array_equal(out, a)


@given(st.lists(st.integers(0, 3), max_size=30), st.floats(0.05, 0.99))
def test_decay_keeps_simplex(flag_seq, d):
    state = feddetect.DetectionState.initial(4, decay=d)
    for i in flag_seq:
        state = feddetect.decay_weights(state, {i})
        assert abs(state.weights.sum() - 1.0) <= 1e-9
        assert np.all(state.weights > 0)
    assert state.flag_counts.sum() == len(flag_seq)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=12), st.integers(0, 99))
def test_scores_in_unit_interval(values, seed):
    s = feddetect.anomaly_scores(values, feddetect.ForestParams(n_trees=10),
                                 np.random.default_rng(seed))
    assert np.all((s > 0) & (s < 1))


@given(st.integers(0, 200), st.integers(1, 9), st.integers(0, 5))
def test_shard_partition(n, k, seed):
    items = list(range(n))
    shards = dataset.shard(items, k, seed)
    assert len(shards) == k
    assert sorted(x for s in shards for x in s) == items
    sizes = [len(s) for s in shards]
    assert max(sizes) - min(sizes) <= 1


@given(st.dictionaries(st.from_regex(r"[a-z][a-z0-9_.]{0,8}", fullmatch=True),
                       hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=3, max_side=4)),
                       max_size=4))
def test_checkpoint_round_trip(params):
    back = checkpoint.loads(checkpoint.dumps(params))
    assert list(back) == list(params)
    for k in params:
        np.testing.assert_array_equal(back[k], params[k])


@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]))))
def test_pnm_round_trip(img):
    np.testing.assert_array_equal(pnm.decode(pnm.encode(img)), img)
    np.testing.assert_array_equal(pnm.to_bytes(pnm.to_unit(img)), img)
