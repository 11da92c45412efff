import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chunkvote.action_core import (
    ActionChunk,
    NormalizationStats,
    binarize_gripper,
    compute_stats,
    cosine_similarity,
    denormalize_action,
    make_action,
    normalize_action,
)
from chunkvote.errors import (
    DegenerateDimension,
    EmptyDataset,
    LengthMismatch,
    OutOfRange,
    ShapeMismatch,
)
from oracles import brute_cosine, sorted_percentile


def _dataset_dx(values):
    data = np.zeros((len(values), 7))
    data[:, 0] = values
    data[:, 1:6] = np.linspace(-1, 1, len(values))[:, None]
    return data


def test_percentile_example_uniform_steps():
    data = _dataset_dx(np.linspace(-1, 1, 100))
    s = compute_stats(data)
    lo = sorted_percentile(data[:, 0], 1)
    hi = sorted_percentile(data[:, 0], 99)
    assert s.q_low[0] == pytest.approx(lo, abs=1e-12)
    assert s.q_high[0] == pytest.approx(hi, abs=1e-12)
    assert s.q_low[0] == pytest.approx(-0.98, abs=0.001)
    assert s.q_high[0] == pytest.approx(0.98, abs=0.001)


def test_percentile_two_values():
    s = compute_stats(_dataset_dx([-1.0, 1.0] * 50))
    assert s.q_low[0] == -1.0 and s.q_high[0] == 1.0


def test_repeated_action_is_degenerate():
    with pytest.raises(DegenerateDimension):
        compute_stats(np.tile(make_action(0.1, 0.2, 0.3, 0, 0, 0, 1), (20, 1)))


def test_empty_and_bad_shape():
    with pytest.raises(EmptyDataset):
        compute_stats([])
    with pytest.raises(ShapeMismatch):
        compute_stats(np.zeros((5, 6)))


@pytest.mark.parametrize("size", [2, 17, 1000, 10000])
def test_percentiles_match_sort_oracle(size, rng):
    data = rng.standard_normal((size, 7)) * rng.uniform(0.1, 5, 7)
    s = compute_stats(data)
    for d in range(6):
        assert s.q_low[d] == pytest.approx(sorted_percentile(data[:, d], 1), abs=1e-12)
        assert s.q_high[d] == pytest.approx(sorted_percentile(data[:, d], 99), abs=1e-12)


def test_normalize_endpoints_and_clip():
    s = NormalizationStats(-np.ones(6), np.ones(6))
    assert normalize_action(make_action(dx=-1.0), s)[0] == 0.0
    assert normalize_action(make_action(dx=1.0), s)[0] == 1.0
    assert normalize_action(make_action(dx=0.0), s)[0] == 0.5
    assert normalize_action(make_action(dx=6.0), s)[0] == 1.0
    assert normalize_action(make_action(g=0.3), s)[6] == 0.3


def test_symmetric_range():
    s = NormalizationStats.symmetric_bounds(0.3)
    out = normalize_action(make_action(0.3, -0.3, 0.0, 0.15), s)
    np.testing.assert_allclose(out[:4], [1.0, -1.0, 0.0, 0.5])


def test_denormalize_gripper_and_range():
    s = NormalizationStats(-np.ones(6), np.ones(6))
    assert denormalize_action(make_action(0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.7), s)[6] == 1.0
    assert denormalize_action(make_action(0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.2), s)[6] == 0.0
    with pytest.raises(OutOfRange):
        denormalize_action(make_action(dx=1.5), s)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=6, max_size=6),
       st.sampled_from(["unit", "symmetric"]))
def test_roundtrip_interior(fracs, rng_name):
    s = NormalizationStats(np.array([-2.0, -1, 0, 3, -0.5, -10]),
                           np.array([2.0, 1, 0.5, 4, 0.5, 10]), rng_name)
    a = np.append(s.q_low + np.array(fracs) * (s.q_high - s.q_low), 1.0)
    back = denormalize_action(normalize_action(a, s), s)
    np.testing.assert_allclose(back, a, rtol=0, atol=1e-9)


def test_stats_json_roundtrip():
    s = NormalizationStats(np.arange(6.0) - 3, np.arange(6.0) + 1, "symmetric")
    t = NormalizationStats.from_json(s.to_json())
    assert t.range == "symmetric"
    np.testing.assert_array_equal(t.q_low, s.q_low)
    assert json.loads(s.to_json())["q_high"][0] == 1.0


def test_stats_validation():
    with pytest.raises(DegenerateDimension):
        NormalizationStats(np.zeros(6), np.zeros(6))
    with pytest.raises(ShapeMismatch):
        NormalizationStats(np.zeros(5), np.ones(5))
    with pytest.raises(ValueError):
        NormalizationStats(np.zeros(6), np.ones(6), "other")


def test_cosine_examples():
    e0, e1 = np.eye(7)[0], np.eye(7)[1]
    assert cosine_similarity(e0, e0) == 1.0
    assert cosine_similarity(e0, e1) == 0.0
    assert cosine_similarity(e0, -e0) == -1.0
    assert cosine_similarity(np.zeros(7), np.zeros(7)) == 1.0
    assert cosine_similarity(np.zeros(7), e0) == 0.0
    with pytest.raises(LengthMismatch):
        cosine_similarity(np.ones(7), np.ones(6))


vectors = st.lists(st.floats(-100, 100, allow_nan=False), min_size=7, max_size=7)


@settings(max_examples=300, deadline=None)
@given(vectors, vectors, st.floats(1e-3, 1e3))
def test_cosine_properties(u, v, c):
    u, v = np.array(u), np.array(v)
    assert cosine_similarity(u, v) == pytest.approx(brute_cosine(u, v), abs=1e-12)
    if np.linalg.norm(u) > 1e-6:
        assert cosine_similarity(u, u) == pytest.approx(1.0, abs=1e-12)
        assert cosine_similarity(c * u, v) == pytest.approx(cosine_similarity(u, v), abs=1e-12)
    assert -1.0 <= cosine_similarity(u, v) <= 1.0


def test_chunk_and_binarize():
    c = ActionChunk(np.zeros((5, 7)), origin_step=3)
    assert c.size == 5 and len(c) == 5
    assert c.action_for(3) is not None and c.action_for(8) is None and c.action_for(2) is None
    with pytest.raises(ShapeMismatch):
        ActionChunk(np.zeros((0, 7)))
    np.testing.assert_array_equal(binarize_gripper(make_action(g=0.5))[6], 1.0)
    np.testing.assert_array_equal(binarize_gripper(make_action(g=0.49))[6], 0.0)
