import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupvenue.geo import LocationTrace
from groupvenue.social import (
    cosine,
    detect_meetings,
    group_social,
    normalize_rates,
    pair_social,
    social_matrix,
)

from conftest import T0, concat, shift, stay

unit = st.floats(0.0, 1.0)
vec = st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3)


def test_ten_minutes_together_is_one_meeting(origin):
    a = stay("a", origin, T0, 3)
    b = stay("b", origin, T0, 3)
    m = detect_meetings(a, b)
    assert m.count == 1
    assert m.rate == 1.0


def test_four_minutes_is_too_short(origin):
    a = stay("a", origin, T0, 5, step=60)
    b = stay("b", origin, T0, 5, step=60)
    assert detect_meetings(a, b).count == 0


def test_twenty_five_metres_apart_is_not_a_meeting(origin):
    a = stay("a", origin, T0, 3)
    b = stay("b", shift(origin, north_m=25), T0, 3)
    assert detect_meetings(a, b).count == 0


def test_unaligned_samples_do_not_meet(origin):
    a = stay("a", origin, T0, 3, step=600)
    b = stay("b", origin, T0 + 300, 3, step=600)
    assert detect_meetings(a, b).count == 0


def test_two_episodes_split_by_departure(origin):
    away = shift(origin, north_m=500)
    a = stay("a", origin, T0, 9)
    b = concat("b", stay("b", origin, T0, 3), stay("b", away, T0 + 900, 3), stay("b", origin, T0 + 1800, 3))
    m = detect_meetings(a, b)
    assert m.count == 2


def test_rate_counts_days_both_reported(origin):
    a = concat("a", stay("a", origin, T0, 3), stay("a", origin, T0 + 86400, 3))
    b = concat("b", stay("b", origin, T0, 3), stay("b", origin, T0 + 86400 + 40_000, 3))
    m = detect_meetings(a, b)
    assert (m.count, m.overlap_days, m.rate) == (1, 2, 0.5)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_meetings_symmetric(seed):
    rng = np.random.default_rng(seed)
    n = 60
    ta = T0 + np.cumsum(rng.integers(200, 400, n))
    tb = T0 + np.cumsum(rng.integers(200, 400, n))
    a = LocationTrace("a", ta, 40.0 + rng.normal(0, 1e-4, n), np.full(n, -105.0))
    b = LocationTrace("b", tb, 40.0 + rng.normal(0, 1e-4, n), np.full(n, -105.0))
    assert detect_meetings(a, b) == detect_meetings(b, a)


def test_pair_social_examples():
    assert pair_social(0.0, [0.5, 0.5], [0.5, 0.5]) == pytest.approx(0.2)
    assert pair_social(1.0, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.8)
    assert pair_social(0.0, [0.0, 0.0], [0.0, 0.0]) == 0.0


def test_group_social_examples():
    S3 = np.array([[0, 0.1, 0.2], [0.1, 0, 0.6], [0.2, 0.6, 0]])
    assert group_social(np.full((3, 3), 0.3)) == pytest.approx(0.3)
    assert group_social(S3) == pytest.approx(0.3)
    assert group_social([[0, 0.5], [0.5, 0]]) == 0.5
    with pytest.raises(ValueError):
        group_social([[0.0]])


@settings(max_examples=1000, deadline=None)
@given(unit, vec, vec)
def test_pair_social_bounded(rate, u, v):
    assert 0.0 <= pair_social(rate, u, v) <= 1.0


@settings(max_examples=200, deadline=None)
@given(unit, unit, vec, vec)
def test_pair_social_monotone_in_rate(r1, r2, u, v):
    lo, hi = sorted((r1, r2))
    assert pair_social(lo, u, v) <= pair_social(hi, u, v)


@settings(max_examples=200, deadline=None)
@given(unit, vec, vec, vec)
def test_pair_social_monotone_in_cosine(rate, u, v, w):
    (c1, x), (c2, y) = sorted([(cosine(u, v), v), (cosine(u, w), w)], key=lambda p: p[0])
    assert pair_social(rate, u, x) <= pair_social(rate, u, y) + 1e-15


@settings(max_examples=200, deadline=None)
@given(st.integers(3, 6), st.integers(0, 10**6))
def test_social_matrix_symmetric_and_group_value_is_pair_mean(m, seed):
    rng = np.random.default_rng(seed)
    users = [f"u{i}" for i in range(m)]
    fam = {u: rng.dirichlet(np.ones(4)) for u in users}
    rates = normalize_rates({frozenset((users[i], users[j])): float(rng.uniform())
                             for i in range(m) for j in range(i + 1, m)})
    S = social_matrix(users, rates, fam)
    assert np.array_equal(S, S.T)
    assert ((S >= 0) & (S <= 1)).all()
    pairs = [S[i, j] for i in range(m) for j in range(i + 1, m)]
    assert group_social(S) == pytest.approx(sum(pairs) / len(pairs), abs=1e-12)


def test_normalize_rates():
    assert normalize_rates({"a": 2.0, "b": 1.0}) == {"a": 1.0, "b": 0.5}
    assert normalize_rates({"a": 0.0}) == {"a": 0.0}
