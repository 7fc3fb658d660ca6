import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from groupvenue.clustering import LocationCluster
from groupvenue.consensus import (
    ConsensusConfig,
    GroupConsensus,
    GroupInput,
    LogRegConsensus,
    Strategy,
    aggregate,
    average,
    expertise_weighted,
    label_clusters,
    least_misery,
    max_satisfaction,
    predict_cluster,
    social_based,
    social_branch,
)
from groupvenue.data import GroupEvent, SuggestedVenue

from conftest import T0, shift

prefs_st = st.integers(1, 6).flatmap(
    lambda m: st.integers(1, 6).flatmap(
        lambda n: arrays(float, (m, n), elements=st.floats(0.0, 1.0, allow_subnormal=False))
    )
)

TWO = [[0.9, 0.1], [0.1, 0.9]]


def test_single_member_strategies_coincide():
    p = [[0.2, 0.5, 0.3]]
    for fn in (least_misery, average, max_satisfaction):
        assert fn(p).tolist() == [0.2, 0.5, 0.3]


def test_two_member_examples():
    assert average(TWO).tolist() == [0.5, 0.5]
    assert least_misery(TWO).tolist() == [0.1, 0.1]
    assert max_satisfaction(TWO).tolist() == [0.9, 0.9]


@pytest.mark.parametrize("g,branch", [(0.1, least_misery), (0.2, average), (0.61, max_satisfaction)])
def test_social_branches(g, branch):
    p = [[0.9, 0.2, 0.4], [0.1, 0.8, 0.5], [0.3, 0.3, 0.6]]
    assert np.array_equal(social_based(p, g), branch(p))


def test_config_validation():
    with pytest.raises(ValueError, match="beta <= alpha"):
        ConsensusConfig(alpha=0.2, beta=0.6)
    ConsensusConfig(alpha=0.3, beta=0.3)


def test_predict_cluster_examples():
    assert predict_cluster([0.2, 0.7, 0.1]) == 1
    assert predict_cluster([0.5, 0.5]) == 0
    with pytest.raises(ValueError):
        predict_cluster([])


@settings(max_examples=200, deadline=None)
@given(prefs_st)
def test_min_mean_max_ordering(P):
    assert (least_misery(P) <= average(P) + 1e-15).all()
    assert (average(P) <= max_satisfaction(P) + 1e-15).all()


@settings(max_examples=200, deadline=None)
@given(prefs_st, st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_social_based_is_bitwise_branch_output(P, g, a, b):
    beta, alpha = sorted((a, b))
    cfg = ConsensusConfig(alpha, beta)
    expected = {Strategy.LEAST_MISERY: least_misery, Strategy.AVERAGE: average,
                Strategy.MAX_SATISFACTION: max_satisfaction}[social_branch(g, cfg)](P)
    assert social_based(P, g, cfg).tobytes() == expected.tobytes()


@settings(max_examples=200, deadline=None)
@given(prefs_st, st.floats(0.01, 100.0), st.integers(0, 10**6))
def test_argmax_invariant_to_positive_scaling(P, c, seed):
    part = np.random.default_rng(seed).integers(0, 5, P.shape[0])
    for s in (Strategy.LEAST_MISERY, Strategy.AVERAGE, Strategy.MAX_SATISFACTION, Strategy.EXPERTISE):
        a = aggregate(s, P, participation=part, normalize=False)
        b = aggregate(s, P * c, participation=part, normalize=False)
        # scaling may merge near-ties through rounding; only compare clear winners
        top = np.sort(a)[::-1]
        assume(top.size == 1 or top[0] - top[1] > 1e-9 * max(top[0], 1e-300))
        assert predict_cluster(a) == predict_cluster(b)


@settings(max_examples=200, deadline=None)
@given(prefs_st, st.floats(0.0, 1.0), st.integers(0, 10**6))
def test_permutation_invariant_in_members(P, g, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(P.shape[0])
    part = rng.integers(0, 5, P.shape[0])
    for s in (Strategy.LEAST_MISERY, Strategy.AVERAGE, Strategy.MAX_SATISFACTION, Strategy.SOCIAL,
              Strategy.EXPERTISE):
        a = aggregate(s, P, social_g=g, participation=part)
        b = aggregate(s, P[perm], social_g=g, participation=part[perm])
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-15)


def test_expertise_weights_experienced_members():
    p = [[1.0, 0.0], [0.0, 1.0]]
    assert expertise_weighted(p, [3, 0]).tolist() == [0.8, 0.2]


@settings(max_examples=200, deadline=None)
@given(prefs_st, st.integers(0, 20))
def test_equal_participation_is_the_plain_mean_bitwise(P, k):
    # bitwise so argmax ties break the same way under both strategies
    assert expertise_weighted(P, np.full(P.shape[0], k)).tobytes() == average(P).tobytes()


def test_aggregate_normalises_and_requires_inputs():
    out = aggregate("average", TWO)
    assert out.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        aggregate("social", TWO)
    with pytest.raises(ValueError):
        aggregate("logreg", TWO)
    assert Strategy.parse("min") is Strategy.LEAST_MISERY


def test_logreg_consensus_learns_the_max_rule():
    rng = np.random.default_rng(0)
    inputs, targets = [], []
    for _ in range(300):
        P = rng.uniform(size=(int(rng.integers(3, 7)), 4))
        inputs.append(P)
        targets.append(int(np.argmax(P.max(axis=0))))
    model = LogRegConsensus().fit(inputs, targets)
    assert (model.predict(inputs) == np.array(targets)).mean() > 0.8
    wrapper = GroupConsensus("logreg").fit([GroupInput(P) for P in inputs], targets)
    assert wrapper.predict([GroupInput(inputs[0])])[0] == model.predict([inputs[0]])[0]


def test_group_consensus_social():
    est = GroupConsensus("social", alpha=0.6, beta=0.2).fit([])
    gi = GroupInput(np.array(TWO) * [[1, 0.5], [1, 0.5]], social_g=0.9)
    assert est.predict([gi]).tolist() == [0]
    assert est.get_params()["alpha"] == 0.6


def _event(origin, votes, clusters_at, final=None):
    venues = [SuggestedVenue(f"v{i}", f"V{i}", p, T0 + 600 * i) for i, p in enumerate(clusters_at)]
    return GroupEvent("e", "g", "a", ["a", "b", "c"], T0, venues, votes, final)


def test_label_clusters(origin):
    far = shift(origin, north_m=3000)
    clusters = [LocationCluster(0, origin), LocationCluster(1, far), LocationCluster(2, shift(origin, east_m=3000))]
    spots = [origin, far, shift(origin, east_m=3000), shift(origin, north_m=-10_000)]
    ev = _event(origin, {"a": {"v2"}, "b": {"v2"}, "c": {"v2"}}, spots, final="v3")
    assert label_clusters(ev, clusters) == (2, None)
    # one vote each on clusters 1 and 0: the earlier suggestion (v0, cluster 0) wins
    tie = _event(origin, {"a": {"v1"}, "b": {"v0"}}, spots, final="v1")
    assert label_clusters(tie, clusters) == (0, 1)
    none = _event(origin, {}, spots)
    assert label_clusters(none, clusters) == (None, None)
