import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groupvenue.geo import (
    DayClass,
    DensityClass,
    DensityGrid,
    GeoPoint,
    LocationTrace,
    TraceParseError,
    day_class,
    density_class,
    haversine,
    haversine_m,
    mobility_48h,
    parse_timestamp,
    parse_traces,
    read_density_grid,
    write_density_grid,
    write_traces,
)

from conftest import shift

lat_st = st.floats(-89.0, 89.0)
lon_st = st.floats(-179.0, 179.0)
north_lat = st.floats(0.0, 89.0)


def test_haversine_examples():
    assert haversine(GeoPoint(40.0, -105.0), GeoPoint(40.0, -105.0)) == 0.0
    assert haversine(GeoPoint(0.0, 0.0), GeoPoint(0.0, 1.0)) == pytest.approx(111_195, abs=1)
    assert haversine(GeoPoint(40.0, -105.0), GeoPoint(40.00018, -105.0)) == pytest.approx(20.0, abs=0.1)


@pytest.mark.parametrize("lat,lon", [(91.0, 0.0), (0.0, 181.0), (float("nan"), 0.0), (0.0, float("inf"))])
def test_geopoint_rejects_bad_coordinates(lat, lon):
    with pytest.raises(ValueError):
        GeoPoint(lat, lon)


@given(lat_st, lon_st, lat_st, lon_st)
def test_haversine_symmetric(a, b, c, d):
    assert abs(haversine_m(a, b, c, d) - haversine_m(c, d, a, b)) < 1e-9


@given(north_lat, lon_st, north_lat, lon_st, north_lat, lon_st)
def test_haversine_triangle_inequality(a1, o1, a2, o2, a3, o3):
    ab = haversine_m(a1, o1, a2, o2)
    bc = haversine_m(a2, o2, a3, o3)
    ac = haversine_m(a1, o1, a3, o3)
    assert ac <= ab + bc + 1e-6


CSV = "user_id,timestamp_iso8601,lat,lon\n"


def test_parse_three_rows_one_user():
    text = CSV + "u1,2017-06-01T00:00:00Z,40.0,-105.0\nu1,2017-06-01T00:05:00Z,40.1,-105.0\nu1,2017-06-01T00:10:00Z,40.2,-105.0\n"
    res = parse_traces(io.StringIO(text))
    assert list(res.traces) == ["u1"]
    assert len(res.traces["u1"]) == 3
    assert res.rejected == []


def test_parse_sorts_out_of_order_rows():
    text = CSV + "u1,2017-06-01T00:10:00Z,40.2,-105.0\nu1,2017-06-01T00:00:00Z,40.0,-105.0\n"
    tr = parse_traces(io.StringIO(text)).traces["u1"]
    assert list(tr.timestamps) == sorted(tr.timestamps)
    assert tr.lat[0] == 40.0


def test_parse_reports_out_of_range_row_and_keeps_the_rest():
    text = CSV + "u1,2017-06-01T00:00:00Z,99,-105.0\nu1,2017-06-01T00:05:00Z,40.0,-105.0\n"
    res = parse_traces(io.StringIO(text))
    assert len(res.traces["u1"]) == 1
    assert [r.lineno for r in res.rejected] == [2]


def test_parse_malformed_row_names_the_line():
    text = CSV + "u1,2017-06-01T00:00:00Z,40.0\n"
    with pytest.raises(TraceParseError, match="line 2"):
        parse_traces(io.StringIO(text))


def test_parse_accepts_offset_timestamps():
    assert parse_timestamp("2017-06-01T02:00:00+02:00") == parse_timestamp("2017-06-01T00:00:00Z")
    text = CSV + "u1,2017-06-01T02:00:00+02:00,40.0,-105.0\n"
    assert parse_traces(io.StringIO(text)).traces["u1"].timestamps[0] == 1496275200


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 10**9), lat_st, lon_st), min_size=1, max_size=30,
                unique_by=lambda r: r[0]))
def test_parse_of_written_traces_is_identity(rows):
    ts, lat, lon = zip(*rows)
    tr = LocationTrace("u", ts, lat, lon)
    buf = io.StringIO()
    write_traces([tr], buf)
    assert parse_traces(io.StringIO(buf.getvalue())).traces["u"] == tr


def test_mobility_examples(origin):
    t = 1_000_000
    empty = LocationTrace("u", [], [], [])
    assert mobility_48h(empty, t) == 0.0
    pts = [origin, shift(origin, north_m=100), shift(origin, north_m=200)]
    tr = LocationTrace("u", [t - 300, t - 200, t - 100], [p.lat for p in pts], [p.lon for p in pts])
    assert mobility_48h(tr, t) == pytest.approx(200.0, abs=0.01)
    early = LocationTrace("u", [10, 20, 30], [p.lat for p in pts], [p.lon for p in pts])
    assert mobility_48h(early, t) == 0.0


def test_mobility_window_is_closed_and_drops_straddling_legs(origin):
    t = 1_000_000
    far = shift(origin, north_m=1000)
    tr = LocationTrace("u", [t - 48 * 3600 - 1, t - 48 * 3600, t], [far.lat, origin.lat, far.lat],
                       [far.lon, origin.lon, far.lon])
    assert mobility_48h(tr, t) == pytest.approx(1000.0, abs=0.01)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=2, max_size=20), st.floats(-500, 500))
def test_mobility_monotone_when_appending_in_window(offsets, extra):
    t = 2_000_000
    n = len(offsets)
    ts = t - 3600 - 60 * np.arange(n)[::-1]
    lat = 40.0 + np.asarray(offsets) / 111_000
    base = LocationTrace("u", ts, lat, np.full(n, -105.0))
    more = LocationTrace("u", np.r_[ts, t], np.r_[lat, 40.0 + extra / 111_000], np.full(n + 1, -105.0))
    assert mobility_48h(more, t) >= mobility_48h(base, t)


def test_day_class_examples():
    assert day_class(parse_timestamp("2017-06-10T12:00:00Z")) is DayClass.WEEKEND
    assert day_class(parse_timestamp("2017-06-12T12:00:00Z")) is DayClass.WEEKDAY
    assert day_class(parse_timestamp("2017-06-10T02:00:00Z"), -10800) is DayClass.WEEKDAY


def test_density_lookup():
    grid = DensityGrid(0.01, {(4000, -10500): DensityClass.HIGH})
    assert density_class(grid, GeoPoint(40.005, -104.995)) is DensityClass.HIGH
    assert density_class(grid, GeoPoint(41.0, -104.995)) is DensityClass.LOW
    # boundary points bin to the floor cell, which is the cell starting there
    assert grid.bin(40.0, -105.0) == (4000, -10500)
    assert density_class(grid, GeoPoint(40.0, -105.0)) is DensityClass.HIGH
    assert density_class(grid, GeoPoint(40.01, -105.0)) is DensityClass.LOW


def test_density_grid_round_trip():
    grid = DensityGrid(0.01, {(1, 2): DensityClass.HIGH, (3, -4): DensityClass.LOW})
    buf = io.StringIO()
    write_density_grid(grid, buf)
    again = read_density_grid(io.StringIO(buf.getvalue()))
    assert again.cells == grid.cells
