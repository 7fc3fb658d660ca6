import numpy as np
import pytest

from groupvenue.geo import EARTH_RADIUS_M, GeoPoint, LocationTrace

M_PER_DEG = EARTH_RADIUS_M * np.pi / 180.0
T0 = 1496275200  # 2017-06-01T00:00:00Z, a Thursday


def shift(p: GeoPoint, north_m=0.0, east_m=0.0) -> GeoPoint:
    """Point ``north_m``/``east_m`` metres away using the local metric."""
    lat = p.lat + north_m / M_PER_DEG
    lon = p.lon + east_m / (M_PER_DEG * np.cos(np.radians(p.lat)))
    return GeoPoint(float(lat), float(lon))


def stay(user, center: GeoPoint, start, n, step=300, jitter=0.0, rng=None):
    """Trace of ``n`` samples every ``step`` seconds around ``center``."""
    ts = start + step * np.arange(n)
    lat = np.full(n, center.lat)
    lon = np.full(n, center.lon)
    if jitter:
        rng = rng or np.random.default_rng(0)
        lat = lat + rng.normal(0, jitter, n) / M_PER_DEG
        lon = lon + rng.normal(0, jitter, n) / (M_PER_DEG * np.cos(np.radians(center.lat)))
    return LocationTrace(user, ts, lat, lon)


def concat(user, *traces):
    return LocationTrace(
        user,
        np.concatenate([t.timestamps for t in traces]),
        np.concatenate([t.lat for t in traces]),
        np.concatenate([t.lon for t in traces]),
    )


@pytest.fixture
def origin():
    return GeoPoint(40.0, -105.0)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
