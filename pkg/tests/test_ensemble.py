import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkvote.action_core import ActionChunk
from chunkvote.ensemble import (
    EnsembleConfig,
    HistoryBuffer,
    aggregate,
    candidates_for,
    dumps_record,
    naive_average,
    push_prediction,
    static_weighted,
    trace_record,
    vote_ensemble,
)
from chunkvote.errors import EmptyCandidates, MissingCurrent, NonMonotonicStep
from oracles import brute_mean, brute_vote


def chunk(step, n=5, value=None):
    acts = np.full((n, 7), float(step) if value is None else value)
    return ActionChunk(acts, step)


def test_buffer_eviction_and_order():
    buf = HistoryBuffer(1)
    for s in (1, 2, 3):
        push_prediction(buf, chunk(s))
    assert buf.steps == [2, 3]
    with pytest.raises(NonMonotonicStep):
        push_prediction(buf, chunk(3))
    fresh = HistoryBuffer(4)
    push_prediction(fresh, chunk(0))
    assert fresh.steps == [0]


def test_candidates():
    buf = HistoryBuffer(4)
    push_prediction(buf, chunk(0))
    acts, ages = candidates_for(buf, 0, 4)
    assert len(acts) == 1 and ages == [0]
    for s in range(1, 5):
        push_prediction(buf, chunk(s))
    acts, ages = candidates_for(buf, 4, 4)
    assert ages == [4, 3, 2, 1, 0] and [a[0] for a in acts] == [0, 1, 2, 3, 4]
    short = HistoryBuffer(4)
    for s in range(5):
        push_prediction(short, chunk(s, n=3))
    assert len(candidates_for(short, 4, 4)[0]) == 3
    with pytest.raises(MissingCurrent):
        candidates_for(buf, 9, 4)


def test_vote_unanimous():
    v = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 1.0])
    res = vote_ensemble([v] * 5)
    assert np.array_equal(res.action, v) and len(res.high) == 5


def test_vote_outlier_example():
    c = np.eye(7)[0]
    res = vote_ensemble([0.9 * c, 0.9 * c, -c, 0.9 * c, c], tau=0.5)
    assert res.high == [0, 1, 3, 4] and res.low == [2]
    np.testing.assert_allclose(res.action, [0.925, 0, 0, 0, 0, 0, 0], atol=1e-15)


def test_vote_tie_goes_low():
    cur = np.array([1.0, 0, 0, 0, 0, 0, 0])
    def at(sim):
        return np.array([sim, np.sqrt(1 - sim ** 2), 0, 0, 0, 0, 0])
    cands = [at(0.9), at(0.2), at(0.1), cur]
    res = vote_ensemble(cands, 0.5, binarize=False)
    np.testing.assert_allclose(res.similarities, [0.9, 0.2, 0.1, 1.0], atol=1e-12)
    assert res.high == [0, 3] and res.low == [1, 2]
    np.testing.assert_allclose(res.action, (cands[1] + cands[2]) / 2, atol=1e-15)
    hi = vote_ensemble(cands, 0.5, tie_break="high_set", binarize=False)
    np.testing.assert_allclose(hi.action, (cands[0] + cands[3]) / 2, atol=1e-15)


def test_naive_average_examples(rng):
    e = np.eye(7)[0]
    np.testing.assert_array_equal(naive_average([e, -e], binarize=False), np.zeros(7))
    cands = list(rng.standard_normal((5, 7)))
    np.testing.assert_allclose(naive_average(cands, binarize=False), brute_mean(cands), atol=1e-12)
    with pytest.raises(EmptyCandidates):
        naive_average([])


def test_static_weighted_examples(rng):
    a, b = rng.standard_normal(7), rng.standard_normal(7)
    w_old = np.exp(-1) / (1 + np.exp(-1))
    expected = w_old * a + (1 - w_old) * b
    np.testing.assert_allclose(static_weighted([a, b], 1.0, binarize=False), expected, atol=1e-12)
    cands = list(rng.standard_normal((5, 7)))
    np.testing.assert_allclose(static_weighted(cands, 0.0, binarize=False),
                               naive_average(cands, binarize=False), atol=1e-12)
    np.testing.assert_array_equal(static_weighted(cands, np.inf, binarize=False), cands[-1])
    np.testing.assert_allclose(static_weighted(cands, 50.0, binarize=False), cands[-1], atol=1e-12)


def test_config_validation():
    with pytest.raises(ValueError):
        EnsembleConfig(K=-1)
    with pytest.raises(ValueError):
        EnsembleConfig(tau=1.0)
    with pytest.raises(ValueError):
        EnsembleConfig(strategy="median")
    assert EnsembleConfig(K=4).full_committee(5) and not EnsembleConfig(K=5).full_committee(5)


def test_aggregate_none_is_current(rng):
    cands = list(rng.random((3, 7)))
    act, res = aggregate(cands, EnsembleConfig(strategy="none"))
    assert res is None and np.array_equal(act[:6], cands[-1][:6])


def test_trace_record_serializes(rng):
    rec = trace_record(3, list(rng.random((4, 7))), EnsembleConfig(strategy="naive_average"))
    back = json.loads(dumps_record(rec))
    assert back["t"] == 3 and len(back["similarities"]) == 4
    assert sorted(back["high"] + back["low"]) == [0, 1, 2, 3]


# ---------------------------------------------------------- properties

action = st.lists(st.floats(-10, 10, allow_nan=False), min_size=7, max_size=7).map(np.array)
committee = st.lists(action, min_size=1, max_size=8)
taus = st.floats(-0.95, 0.95)


@settings(max_examples=300, deadline=None)
@given(committee, taus)
def test_self_inclusion_and_partition(cands, tau):
    res = vote_ensemble(cands, tau)
    assert len(cands) - 1 in res.high
    assert sorted(res.high + res.low) == list(range(len(cands)))


@settings(max_examples=300, deadline=None)
@given(committee, taus)
def test_unanimity_equals_average(cands, tau):
    res = vote_ensemble(cands, tau)
    if len(res.high) == len(cands):
        np.testing.assert_array_equal(res.action, naive_average(cands))


@settings(max_examples=300, deadline=None)
@given(action.filter(lambda v: np.linalg.norm(v) > 1e-3), st.integers(3, 7), taus,
       st.floats(0.1, 10))
def test_outlier_excluded(base, m, tau, scale):
    cands = [base * (1 + 0.01 * k) for k in range(m - 1)] + [-scale * base, base]
    res = vote_ensemble(cands, tau)
    averaged = res.high if len(res.high) > len(res.low) else res.low
    assert m - 1 in res.low and m - 1 not in averaged


@settings(max_examples=300, deadline=None)
@given(committee, taus, st.lists(st.floats(1e-3, 1e3), min_size=8, max_size=8))
def test_positive_scale_membership(cands, tau, scales):
    before = vote_ensemble(cands, tau)
    scaled = [c * s for c, s in zip(cands, scales)]
    after = vote_ensemble(scaled, tau)
    assert before.high == after.high and before.low == after.low


@settings(max_examples=200, deadline=None)
@given(action)
def test_single_candidate(c):
    res = vote_ensemble([c], 0.5, binarize=False)
    assert res.high == [0] and res.low == []
    np.testing.assert_array_equal(res.action, c)


def test_vote_matches_brute_force():
    r = np.random.default_rng(42)
    for _ in range(1000):
        m = int(r.integers(1, 9))
        cur = r.standard_normal(7)
        cands = []
        for _ in range(m - 1):
            kind = r.integers(3)
            if kind == 0:
                cands.append(cur + 0.2 * r.standard_normal(7))
            elif kind == 1:
                cands.append(-r.uniform(0.5, 3) * cur + 0.2 * r.standard_normal(7))
            else:
                cands.append(r.standard_normal(7))
        cands.append(cur)
        tau = float(r.choice([0.5, r.uniform(-0.9, 0.9)]))
        tie_high = bool(r.integers(2))
        res = vote_ensemble(cands, tau, "high_set" if tie_high else "low_set")
        high, low, mean = brute_vote(cands, tau, tie_high)
        assert res.high == high and res.low == low
        np.testing.assert_allclose(res.action, mean, rtol=0, atol=1e-12)
