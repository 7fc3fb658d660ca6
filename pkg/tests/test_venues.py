import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupvenue.clustering import LocationCluster
from groupvenue.geo import GeoPoint
from groupvenue.venues import (
    BaselineMode,
    CandidateList,
    CatalogProvider,
    FixtureProvider,
    HttpProvider,
    ProviderConfig,
    ProviderError,
    ProviderKind,
    Venue,
    baseline_lists,
    city_key,
    fetch_all,
    make_provider,
    rankscore,
    read_fixture,
    recommend_topn,
    stub_server,
    write_recommendations,
)

from conftest import shift

ORIGIN = GeoPoint(40.0, -105.0)


def venues(prefix, n, center=ORIGIN, checkins=None, ratings=None):
    out = []
    for i in range(n):
        out.append(Venue(f"{prefix}{i}", f"{prefix} {i}", shift(center, east_m=3 * i),
                         checkins[i] if checkins else 0, ratings[i] if ratings else None))
    return out


def test_fixture_provider_returns_stored_order_and_empty_for_missing(caplog):
    p = FixtureProvider({"g:0": venues("a", 3)})
    assert [v.venue_id for v in p.fetch("g:0").venues] == ["a0", "a1", "a2"]
    assert len(p.fetch("g:5")) == 0
    assert "no fixture entry" in caplog.text


def test_candidate_list_rejects_duplicates():
    v = venues("a", 1)
    with pytest.raises(ValueError):
        CandidateList(0, v + v)


def test_provider_config_validation():
    with pytest.raises(ValueError):
        ProviderConfig(limit=0)
    with pytest.raises(ValueError):
        ProviderConfig(radius=0)
    with pytest.raises(ValueError):
        ProviderConfig(kind="http")
    with pytest.raises(ValueError):
        Venue("x", "x", ORIGIN, checkins=-1)


def test_catalog_provider_searches_by_distance():
    far = shift(ORIGIN, north_m=5000)
    p = CatalogProvider({"city:x": venues("a", 3) + venues("b", 2, far)}, ProviderConfig(radius=500, limit=2))
    got = p.fetch("g:0", ORIGIN)
    assert [v.venue_id for v in got.venues] == ["a0", "a1"]
    assert [v.venue_id for v in p.fetch("g:1", far).venues] == ["b0", "b1"]
    assert p.city("x")[0].venue_id == "a0"


def test_fixture_round_trip_through_json():
    data = {"g:0": [v.to_dict() for v in venues("a", 2, ratings=[4.0, None])]}
    fx = read_fixture(io.StringIO(json.dumps(data)))
    assert fx["g:0"][0].rating == 4.0 and fx["g:0"][1].rating is None


def test_http_provider_against_stub():
    fixture = {"city:x": venues("a", 80)}
    with stub_server(fixture, token="secret") as url:
        cfg = ProviderConfig(ProviderKind.HTTP, radius=1000, limit=50, base_url=url)
        got = HttpProvider(cfg, token="secret").fetch("g:0", ORIGIN)
        assert len(got) == 50
        assert [v.venue_id for v in got.venues[:3]] == ["a0", "a1", "a2"]
        with pytest.raises(ProviderError):
            HttpProvider(ProviderConfig(ProviderKind.HTTP, base_url=url, retries=1), token="wrong").fetch("k", ORIGIN)


def test_http_provider_retries_transient_failures():
    with stub_server({"c": venues("a", 5)}, fail_first=2) as url:
        cfg = ProviderConfig(ProviderKind.HTTP, base_url=url, retries=3, backoff=0.01)
        assert len(HttpProvider(cfg).fetch("k", ORIGIN)) == 5
    with stub_server({"c": venues("a", 5)}, fail_first=5) as url:
        cfg = ProviderConfig(ProviderKind.HTTP, base_url=url, retries=2, backoff=0.01)
        with pytest.raises(ProviderError, match="after 2 attempts"):
            HttpProvider(cfg).fetch("k", ORIGIN)


def test_http_token_from_environment(monkeypatch):
    monkeypatch.setenv("VENUE_API_TOKEN", "t0k")
    with stub_server({"c": venues("a", 2)}, token="t0k") as url:
        p = make_provider(ProviderConfig(ProviderKind.HTTP, base_url=url))
        assert len(p.fetch("k", ORIGIN)) == 2


def test_concurrent_fetches_share_one_client():
    clusters = [LocationCluster(i, shift(ORIGIN, north_m=2000 * i)) for i in range(6)]
    fixture = {"c": [v for i in range(6) for v in venues(f"c{i}_", 4, clusters[i].centroid)]}
    with stub_server(fixture) as url:
        p = HttpProvider(ProviderConfig(ProviderKind.HTTP, base_url=url, radius=100))
        serial = fetch_all(p, clusters, threads=1)
        parallel = fetch_all(p, clusters, threads=4)
    assert [[v.venue_id for v in c.venues] for c in serial] == [[v.venue_id for v in c.venues] for c in parallel]
    assert [v.venue_id for v in serial[2].venues] == ["c2_0", "c2_1", "c2_2", "c2_3"]


def test_rankscore_examples():
    assert f"{rankscore(1, 50, 0.6):.6f}" == "0.600000"
    assert f"{rankscore(50, 50, 0.6):.6f}" == "0.012000"
    assert rankscore(7, 50, 0.0) == 0.0
    with pytest.raises(ValueError):
        rankscore(0, 50, 0.5)


def test_single_cluster_keeps_provider_order():
    cl = CandidateList(0, venues("a", 12, checkins=list(range(12))))
    out = recommend_topn([cl], [0.7], 20)
    assert [v.venue_id for v, _ in out] == [v.venue_id for v in cl.venues]


def test_zero_scored_cluster_sorts_last():
    a = CandidateList(0, venues("a", 5))
    b = CandidateList(1, venues("b", 5, checkins=[900] * 5))
    out = [v.venue_id for v, _ in recommend_topn([a, b], [1.0, 0.0], 10)]
    assert out[:5] == ["a0", "a1", "a2", "a3", "a4"]


def test_duplicate_keeps_best_score():
    shared = venues("s", 1)[0]
    a = CandidateList(0, [shared] + venues("a", 49))
    b = CandidateList(1, venues("b", 49) + [shared])
    out = recommend_topn([a, b], [0.5, 0.5], 200)
    ids = [v.venue_id for v, _ in out]
    assert ids.count("s0") == 1
    assert dict((v.venue_id, s) for v, s in out)["s0"] == pytest.approx(0.5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=1, max_size=4), st.integers(0, 10**6), st.integers(1, 60))
def test_ranking_invariants(sizes, seed, n):
    rng = np.random.default_rng(seed)
    lists = [CandidateList(k, venues(f"c{k}_", m, checkins=rng.integers(0, 50, m).tolist()))
             for k, m in enumerate(sizes)]
    p = rng.dirichlet(np.ones(len(sizes)))
    out = recommend_topn(lists, p, n)
    ids = [v.venue_id for v, _ in out]
    assert len(ids) <= n and len(ids) == len(set(ids))
    for cl in lists:
        pos = [ids.index(v.venue_id) for v in cl.venues if v.venue_id in ids]
        assert pos == sorted(pos)
    assert out == recommend_topn(lists, p, n)


def test_baselines():
    rated = venues("r", 3, checkins=[10, 90, 500], ratings=[4.5, 4.5, 3.0])
    assert [v.venue_id for v in baseline_lists("highest_rating", rated)] == ["r1", "r0", "r2"]
    pop = venues("p", 3, checkins=[1, 2, 3])
    assert [v.venue_id for v in baseline_lists(BaselineMode.MOST_POPULAR, pop)] == ["p2", "p1", "p0"]
    assert baseline_lists("provider_order", pop, 2) == pop[:2]
    one = CandidateList(0, venues("e", 6, checkins=[5, 0, 9, 1, 1, 3]))
    assert baseline_lists("equal_weighted", [one]) == one.venues


def test_recommendation_csv():
    buf = io.StringIO()
    write_recommendations([("e1", [(venues("a", 1)[0], 0.6)])], buf)
    assert buf.getvalue() == "event_id,rank,venue_id,score\ne1,1,a0,0.600000\n"
    assert city_key("x") == "city:x"
