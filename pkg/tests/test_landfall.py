import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ewbench.grid import GridSpec, LandMask
from ewbench.landfall import (
    LandfallEvent,
    LandfallPair,
    align_track,
    dedupe_landfalls,
    detect_landfalls,
    filter_landfalls,
    landfall_metrics,
    read_landfalls,
    write_landfalls,
)
from ewbench.tc import CandidateCenter, Track

T0 = np.datetime64("2022-09-28T00:00:00", "s")
H6 = np.timedelta64(6, "h")
MASK_SPEC = GridSpec(15, -75, 0.1, 0.1, 101, 101)


def coast_mask(coast_lon=-69.5):
    _, lon2d = MASK_SPEC.mesh()
    return LandMask(MASK_SPEC, lon2d > coast_lon + 1e-9)


def make_track(points, storm_id="s1", source="forecast", start=T0, step=H6):
    pts = [
        CandidateCenter(start + k * step, lat, lon, p, True, w)
        for k, (lat, lon, p, w) in enumerate(points)
    ]
    return Track(storm_id, source, pts)


def dense_oracle(a, b, landmask, factor=10):
    """First land sample along a->b at a tenth of the mask spacing."""
    step = min(landmask.spec.dlat, landmask.spec.dlon) / factor
    n = int(np.ceil(np.hypot(b[0] - a[0], b[1] - a[1]) / step))
    for k in range(n + 1):
        f = k / n
        lat = a[0] + f * (b[0] - a[0])
        lon = a[1] + f * (b[1] - a[1])
        i = int(round((lat - landmask.spec.lat0) / landmask.spec.dlat))
        j = int(round((lon - landmask.spec.lon0) / landmask.spec.dlon))
        if 0 <= i < landmask.spec.nlat and 0 <= j < landmask.spec.nlon and landmask.mask[i, j]:
            return f
    return None


class TestDetect:
    def test_straight_coast(self):
        mask = coast_mask()
        tr = make_track([(20.0, -70.0, 990.0, 40.0), (20.0, -69.0, 1000.0, 30.0)])
        (ev,) = detect_landfalls(tr, mask)
        frac = dense_oracle((20.0, -70.0), (20.0, -69.0), mask)
        assert abs(ev.lon - (-69.5)) <= MASK_SPEC.dlon
        assert abs(ev.lon - (-70.0 + frac)) <= MASK_SPEC.dlon / 10
        hours = (ev.time - T0) / np.timedelta64(1, "h")
        assert hours == pytest.approx(6 * frac, abs=6 * 0.1)
        assert ev.mslp_hpa == pytest.approx(990 + 10 * (ev.lon + 70.0), abs=1e-6)
        assert ev.wind_ms == pytest.approx(40 - 10 * (ev.lon + 70.0), abs=1e-6)
        assert ev.ordinal == 1

    def test_all_ocean(self):
        tr = make_track([(20.0, -74.0, 990, 40), (21.0, -73.0, 990, 40), (22.0, -72.0, 990, 40)])
        assert detect_landfalls(tr, coast_mask()) == []

    def test_island_inside_segment(self):
        m = np.zeros(MASK_SPEC.shape, bool)
        m[50:55, 50:55] = True  # 20.0-20.4N, 70.0-69.6W
        mask = LandMask(MASK_SPEC, m)
        tr = make_track([(20.2, -71.0, 990, 40), (20.2, -68.5, 990, 40)])
        events = detect_landfalls(tr, mask)
        assert len(events) == 1
        frac = dense_oracle((20.2, -71.0), (20.2, -68.5), mask)
        assert abs(events[0].lon - (-71.0 + 2.5 * frac)) <= MASK_SPEC.dlon

    def test_reversed_track(self):
        tr = make_track([(20.0, -69.0, 990, 40), (20.0, -70.0, 990, 40)])
        assert detect_landfalls(tr, coast_mask()) == []

    def test_multiple_landfalls_numbered(self):
        m = np.zeros(MASK_SPEC.shape, bool)
        m[:, 20:30] = True
        m[:, 60:70] = True
        tr = make_track([(20.0, -74.0, 990, 40), (20.0, -71.0, 990, 40), (20.0, -68.5, 990, 40)])
        events = detect_landfalls(tr, LandMask(MASK_SPEC, m))
        assert [e.ordinal for e in events] == [1, 2]

    def test_short_track(self):
        with pytest.raises(ValueError):
            detect_landfalls(make_track([(20.0, -70.0, 990, 40)]), coast_mask())

    @settings(max_examples=40, deadline=None)
    @given(
        st.floats(16, 24), st.floats(-74, -70.5), st.floats(16, 24), st.floats(-69.4, -66),
        st.integers(1, 5),
    )
    def test_densify_invariance(self, lat0, lon0, lat1, lon1, k):
        mask = coast_mask()
        tr = make_track([(lat0, lon0, 990.0, 40.0), (lat1, lon1, 1000.0, 30.0)])
        fracs = np.linspace(0, 1, k + 2)
        dense = make_track(
            [(lat0 + f * (lat1 - lat0), lon0 + f * (lon1 - lon0), 990 + 10 * f, 40 - 10 * f) for f in fracs],
            step=np.timedelta64(6 * 3600 // (k + 1), "s"),
        )
        (ev,) = detect_landfalls(tr, mask)
        (ev2,) = detect_landfalls(dense, mask)
        assert abs(ev.lon - ev2.lon) <= MASK_SPEC.dlon
        assert abs(ev.lat - ev2.lat) <= MASK_SPEC.dlat
        assert T0 <= ev.time <= T0 + H6


def event(storm, hours, lat=20.0, lon=-70.0, p=990.0, w=40.0, ordinal=1, source="forecast"):
    return LandfallEvent(storm, source, T0 + np.timedelta64(int(hours * 3600), "s"), lat, lon, p, w, ordinal)


class TestFilter:
    def test_outside_window(self):
        assert filter_landfalls([event("f", 30)], [event("t", 0, source="analysis")], T0 - 24 * H6) == []

    def test_within_window(self):
        pairs = filter_landfalls([event("f", 6)], [event("t", 0, source="analysis")], T0 - 4 * H6)
        assert len(pairs) == 1 and pairs[0].dt_hours == 6.0

    def test_dedupe_within_50km(self):
        a = event("f", 0, lon=-70.0)
        b = event("f", 12, lon=-70.0 + 20 / 111.195 / np.cos(np.deg2rad(20)), ordinal=2)
        c = event("f", 24, lon=-69.0, ordinal=3)
        assert dedupe_landfalls([a, b, c]) == [a, c]

    def test_spin_up_window_half_open(self):
        init = T0 - 24 * H6
        target = [event("t", 0, source="analysis")]
        fc = [event("f", 3)]
        assert filter_landfalls(fc, target, init, first_valid={"f": T0}) != []
        assert filter_landfalls(fc, target, init, first_valid={"f": T0 + np.timedelta64(1, "s")}) == []

    def test_first_vs_next(self):
        target = [event("t", 0, lon=-80, source="analysis"), event("t", 48, lon=-70, ordinal=2, source="analysis")]
        fc = [event("f", 50)]
        init = T0 + np.timedelta64(24, "h")
        assert filter_landfalls(fc, target, init, mode="first") == []
        (pair,) = filter_landfalls(fc, target, init, mode="next")
        assert pair.target.ordinal == 2

    def test_only_first_forecast_landfall(self):
        fc = [event("f", 2), event("f", 20, lon=-60, ordinal=2)]
        (pair,) = filter_landfalls(fc, [event("t", 0, source="analysis")], T0 - H6)
        assert pair.forecast.ordinal == 1

    def test_one_to_one(self):
        fc = [event("f1", 10), event("f2", 3), event("f3", -5)]
        pairs = filter_landfalls(fc, [event("t", 0, source="analysis")], T0 - 10 * H6)
        assert len(pairs) == 1 and pairs[0].forecast.storm_id == "f2"

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            filter_landfalls([], [], T0, mode="all")


class TestMetrics:
    def test_identical(self):
        e = event("f", 0)
        assert landfall_metrics([LandfallPair(e, e)]) == (0.0, 0.0, 0.0, 0.0)

    def test_late_and_east(self):
        pair = LandfallPair(event("f", 6, lat=0.0, lon=1.0), event("t", 0, lat=0.0, lon=0.0))
        m = landfall_metrics([pair])
        assert m.time_me_hours == 6.0
        assert m.displacement_km == pytest.approx(111.195, abs=5e-4)

    def test_pressure_mae(self):
        pairs = [
            LandfallPair(event("a", 0, p=990), event("t", 0, p=980)),
            LandfallPair(event("b", 0, p=1000), event("u", 0, p=1005)),
        ]
        assert landfall_metrics(pairs).pressure_mae_hpa == 7.5

    def test_empty(self):
        assert landfall_metrics([]) == (None, None, None, None)


def test_align_three_hourly_analysis():
    pts = [(20.0 + 0.1 * k, -75.0 + 0.3 * k, 1000.0 - k, 20.0 + k) for k in range(9)]
    analysis = make_track(pts, source="analysis", step=np.timedelta64(3, "h"))
    times = T0 + np.arange(-1, 6) * H6
    aligned = align_track(analysis, times)
    np.testing.assert_array_equal(aligned.times, T0 + np.arange(0, 5) * H6)
    assert [p.mslp_hpa for p in aligned.points] == [1000.0, 998.0, 996.0, 994.0, 992.0]
    mid = align_track(analysis, [T0 + np.timedelta64(90, "m")]).points[0]
    assert mid.lat == pytest.approx(20.05) and mid.peak_wind_ms == pytest.approx(20.5)


def test_csv_round_trip(tmp_path):
    evs = [event("f", 3.5), event("g", 7, lat=21.25, lon=-68.0, ordinal=2)]
    path = write_landfalls(evs, tmp_path / "lf.csv")
    assert path.read_text().splitlines()[0] == "storm_id,source,ordinal,time,lat,lon,mslp_hpa,wind_ms"
    assert read_landfalls(path) == evs
