import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ewbench.climatology import (
    CadenceError,
    PercentileClimatology,
    build_event_case,
    build_percentile_climatology,
    calendar_index,
    detect_freeze_days,
    detect_heatwave_days,
    detect_marginal_regions,
    grow_bounding_box,
    longest_runs,
    weighted_quantile,
)
from ewbench.container import load_cube, write_cube
from ewbench.grid import FieldCube, GridSpec, LandMask, cell_area_km2

SIX_H = np.timedelta64(6 * 3600, "s")


def six_hourly(start, n):
    return np.datetime64(start, "s") + np.arange(n) * SIX_H


def cube_from_samples(samples, spec=None, start="2021-06-20T00:00:00"):
    """samples: (ntime,) or (ntime, nlat, nlon) temperatures."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None, None]
    if spec is None:
        spec = GridSpec(40, -100, 1, 1, samples.shape[1], samples.shape[2])
    return FieldCube("t2m", "K", spec, six_hourly(start, samples.shape[0]), samples)


def flat_climatology(spec, value, percentile=0.85):
    return PercentileClimatology(spec, percentile, np.full((365, 4) + spec.shape, float(value)))


def oracle_weighted_quantile(samples, q):
    """Brute force over an explicit (value, weight) list; ties pool their weight."""
    pooled = {}
    for v, w in samples:
        pooled[v] = pooled.get(v, 0.0) + w
    total = sum(pooled.values())
    points = []
    acc = 0.0
    for v, w in sorted(pooled.items()):
        points.append(((acc + w / 2) / total, v))
        acc += w
    if q <= points[0][0]:
        return points[0][1]
    if q >= points[-1][0]:
        return points[-1][1]
    for (p0, v0), (p1, v1) in zip(points, points[1:]):
        if p0 <= q <= p1:
            return v0 + (q - p0) / (p1 - p0) * (v1 - v0)
    raise AssertionError


def oracle_longest_run(flags, max_gap):
    best = 0
    start = None
    last = None
    for d, f in enumerate(flags):
        if not f:
            continue
        if start is not None and d - last - 1 <= max_gap:
            last = d
        else:
            start = last = d
        best = max(best, last - start + 1)
    return best


class TestWeightedQuantile:
    def test_constant(self):
        assert weighted_quantile(np.full(7, 300.0), np.linspace(0.1, 1, 7), 0.85) == 300.0

    def test_two_masses(self):
        values = np.array([290.0] * 20 + [310.0] * 20)
        weights = np.concatenate([np.linspace(0.05, 1, 20)] * 2)
        expected = oracle_weighted_quantile(list(zip(values, weights)), 0.85)
        assert expected == 310.0
        assert weighted_quantile(values, weights, 0.85) == expected

    def test_median_symmetric(self):
        assert weighted_quantile(np.array([301.0, 299.0, 300.0]), np.ones(3), 0.5) == 300.0

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.tuples(st.floats(200, 330), st.floats(0.01, 1.0)), min_size=1, max_size=30),
        st.floats(0.01, 0.99),
    )
    def test_matches_oracle_and_symmetry(self, samples, q):
        values = np.array([v for v, _ in samples])
        weights = np.array([w for _, w in samples])
        got = weighted_quantile(values, weights, q)
        assert got == pytest.approx(oracle_weighted_quantile(samples, q), abs=1e-9)
        flipped = weighted_quantile(-values, weights, 1 - q)
        assert got == pytest.approx(-flipped, abs=1e-9)


class TestCalendar:
    def test_leap_day_folds_to_feb_28(self):
        doy, _ = calendar_index(np.array(["2020-02-28T00", "2020-02-29T06", "2020-03-01T00"], dtype="datetime64[s]"))
        assert doy[0] == doy[1] == 58
        assert doy[2] == 59
        assert calendar_index(np.array(["2021-03-01T00"], dtype="datetime64[s]"))[0][0] == 59
        assert calendar_index(np.array(["2020-12-31T18"], dtype="datetime64[s]"))[0][0] == 364

    def test_off_synoptic_hour(self):
        with pytest.raises(CadenceError):
            calendar_index(np.array(["2020-01-01T03"], dtype="datetime64[s]"))


class TestBuildClimatology:
    spec = GridSpec(40, -100, 1, 1, 1, 2)

    def _history(self, year_values):
        n_per_year = 365 * 4
        blocks = [np.full((n_per_year,) + self.spec.shape, v) for v in year_values]
        samples = np.concatenate(blocks)
        return cube_from_samples(samples, self.spec, start="2001-01-01T00:00:00")

    def test_constant(self):
        clim = build_percentile_climatology(self._history([300.0, 300.0]), 0.85)
        assert np.all(clim.values == 300.0)

    def test_two_masses_from_history(self):
        clim = build_percentile_climatology(self._history([290.0, 310.0]), 0.85)
        # each window holds identical weight from both years
        samples = [(290.0, 1.0), (310.0, 1.0)]
        assert oracle_weighted_quantile(samples * 10, 0.85) == 310.0
        assert np.all(clim.values == 310.0)

    def test_sign_flip_symmetry(self):
        rng = np.random.default_rng(0)
        n = 2 * 365 * 4 + 4
        samples = 290 + 5 * rng.standard_normal((n,) + self.spec.shape)
        hist = cube_from_samples(samples, self.spec, start="2001-01-01T00:00:00")
        neg = cube_from_samples(-samples, self.spec, start="2001-01-01T00:00:00")
        hi = build_percentile_climatology(hist, 0.85)
        lo = build_percentile_climatology(neg, 0.15)
        np.testing.assert_allclose(hi.values, -lo.values, atol=1e-9)

    def test_window_weights(self):
        # a single warm day: its weight decays linearly with day distance
        n = 2 * 365 * 4
        samples = np.zeros((n,) + self.spec.shape)
        samples[100 * 4] = 1.0  # doy 100, 00 UTC, first year
        hist = cube_from_samples(samples, self.spec, start="2001-01-01T00:00:00")
        clim = build_percentile_climatology(hist, 0.99)
        assert clim.values[100, 0, 0, 0] > 0
        assert clim.values[100, 1, 0, 0] == 0  # other synoptic hours unaffected
        assert clim.values[100 + 21, 0, 0, 0] == 0  # weight reaches zero at 21 days

    def test_errors(self):
        with pytest.raises(ValueError):
            build_percentile_climatology(self._history([300.0]), 0.85)
        with pytest.raises(ValueError):
            build_percentile_climatology(self._history([300.0, 300.0]), 1.0)

    def test_serialises_as_container(self, tmp_path):
        rng = np.random.default_rng(1)
        clim = PercentileClimatology(self.spec, 0.85, 300 + rng.random((365, 4) + self.spec.shape).astype(np.float32))
        write_cube(clim.to_cube(), tmp_path / "clim")
        cube = load_cube(tmp_path / "clim.json")
        assert cube.ntime == 365 * 4
        back = PercentileClimatology.from_cube(cube)
        assert back.percentile == 0.85
        np.testing.assert_array_equal(back.values, clim.values)


def day_pattern(days):
    """Expand per-day labels into 6-hourly samples around a 300 K threshold.

    'H' = every sample hot, 'C' = every sample cool, 'h' = one hot sample (18 h below).
    """
    out = []
    for d in days:
        if d == "H":
            out += [302.0] * 4
        elif d == "C":
            out += [298.0] * 4
        elif d == "h":
            out += [298.0, 298.0, 298.0, 301.0]
        else:
            raise ValueError(d)
    return np.array(out)


class TestHeatwaveRuns:
    def _run(self, pattern):
        cube = cube_from_samples(day_pattern(pattern))
        return int(detect_heatwave_days(cube, flat_climatology(cube.spec, 300.0))[0, 0])

    def test_five_days(self):
        assert self._run("CHHHHHC") == 5

    def test_gap_day_bridged(self):
        assert self._run("HHCH") == 4
        assert oracle_longest_run([1, 1, 0, 1], 1) == 4

    def test_eighteen_hour_dip(self):
        assert self._run("HHhH") == 4

    def test_two_day_gap_splits(self):
        assert self._run("HHCCH") == 2

    def test_all_cool(self):
        assert self._run("CCCCC") == 0

    def test_threshold_is_strict(self):
        cube = cube_from_samples(np.full(12, 300.0))
        assert detect_heatwave_days(cube, flat_climatology(cube.spec, 300.0))[0, 0] == 0

    def test_cadence_mismatch(self):
        spec = GridSpec(40, -100, 1, 1, 1, 1)
        times = np.datetime64("2021-06-20T00", "s") + np.arange(8) * np.timedelta64(3 * 3600, "s")
        cube = FieldCube("t2m", "K", spec, times, np.full((8, 1, 1), 305.0))
        with pytest.raises(CadenceError):
            detect_heatwave_days(cube, flat_climatology(spec, 300.0))

    def test_ocean_points_zeroed(self):
        spec = GridSpec(40, -100, 1, 1, 1, 2)
        samples = np.repeat(day_pattern("HHHH")[:, None, None], 2, axis=2)
        cube = cube_from_samples(samples, spec)
        land = LandMask(spec, np.array([[True, False]]))
        np.testing.assert_array_equal(detect_heatwave_days(cube, flat_climatology(spec, 300.0), land), [[4, 0]])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.booleans(), min_size=1, max_size=40), st.integers(0, 3))
    def test_run_merging_matches_oracle(self, flags, gap):
        arr = np.array(flags)[:, None]
        stats = longest_runs(arr, np.arange(len(flags)), max_gap_days=gap)
        assert stats.length[0] == oracle_longest_run(flags, gap)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.0, 5.0))
    def test_warming_monotonicity(self, seed, delta):
        rng = np.random.default_rng(seed)
        spec = GridSpec(40, -100, 1, 1, 3, 3)
        samples = 300 + 3 * rng.standard_normal((40,) + spec.shape)
        clim85 = flat_climatology(spec, 301.0)
        clim15 = flat_climatology(spec, 272.0, 0.15)
        base = cube_from_samples(samples, spec)
        warm = cube_from_samples(samples + delta, spec)
        assert np.all(detect_heatwave_days(warm, clim85) >= detect_heatwave_days(base, clim85))
        cold = cube_from_samples(samples - 29, spec)
        cold_warm = cube_from_samples(samples - 29 + delta, spec)
        assert np.all(detect_freeze_days(cold_warm, clim15) <= detect_freeze_days(cold, clim15))


class TestFreeze:
    @pytest.mark.parametrize(
        "temp,clim,qualifies",
        [(270.0, 272.0, True), (272.0, 271.0, False), (275.0, 276.0, False)],
    )
    def test_both_conditions(self, temp, clim, qualifies):
        cube = cube_from_samples(np.full(12, temp))
        runs = detect_freeze_days(cube, flat_climatology(cube.spec, clim, 0.15))
        assert runs[0, 0] == (3 if qualifies else 0)


def simulate_box_growth(seed, qualifying_points, all_points, step=1.0, cell=1.0):
    """Degree-space simulation: boxes as coordinate bounds, edges as point lists."""
    lat_s, lon_s = seed
    lat_lo, lat_hi, lon_lo, lon_hi = lat_s - 0.5, lat_s + 0.5, lon_s - 0.5, lon_s + 0.5
    lat_all = sorted({p[0] for p in all_points})
    lon_all = sorted({p[1] for p in all_points})

    def inside(p):
        return lat_lo - 1e-9 <= p[0] <= lat_hi + 1e-9 and lon_lo - 1e-9 <= p[1] <= lon_hi + 1e-9

    def edge_ok(points):
        pts = [p for p in points if inside(p)]
        return bool(pts) and sum(p in qualifying_points for p in pts) >= 0.5 * len(pts)

    while True:
        moved = False
        top = max(p[0] for p in all_points if inside(p))
        if edge_ok([p for p in all_points if p[0] == top]) and lat_hi + step <= lat_all[-1] + 0.5 + 1e-9:
            lat_hi += step
            moved = True
        bottom = min(p[0] for p in all_points if inside(p))
        if edge_ok([p for p in all_points if p[0] == bottom]) and lat_lo - step >= lat_all[0] - 0.5 - 1e-9:
            lat_lo -= step
            moved = True
        east = max(p[1] for p in all_points if inside(p))
        if edge_ok([p for p in all_points if p[1] == east]) and lon_hi + step <= lon_all[-1] + 0.5 + 1e-9:
            lon_hi += step
            moved = True
        west = min(p[1] for p in all_points if inside(p))
        if edge_ok([p for p in all_points if p[1] == west]) and lon_lo - step >= lon_all[0] - 0.5 - 1e-9:
            lon_lo -= step
            moved = True
        if not moved:
            return lat_lo, lat_hi, lon_lo, lon_hi


class TestBoundingBox:
    spec = GridSpec(30, -110, 1, 1, 21, 21)

    def test_block_gets_one_degree_halo(self):
        runs = np.zeros(self.spec.shape, int)
        runs[8:13, 8:13] = 4  # 5x5 block, lats 38..42, lons -102..-98
        region = grow_bounding_box((40.0, -100.0), runs, self.spec)
        lat2d, lon2d = self.spec.mesh()
        points = list(zip(lat2d.ravel().tolist(), lon2d.ravel().tolist()))
        qualifying = {p for p, r in zip(points, runs.ravel()) if r >= 3}
        expected = simulate_box_growth((40.0, -100.0), qualifying, points)
        assert expected == (36.5, 43.5, -103.5, -96.5)
        assert (region.lat_min, region.lat_max, region.lon_min, region.lon_max) == pytest.approx(expected)

    def test_single_point_on_degree_grid(self):
        runs = np.zeros(self.spec.shape, int)
        runs[10, 10] = 3
        region = grow_bounding_box((40.0, -100.0), runs, self.spec)
        # the one-point seed box has a fully qualifying edge, so it grows once
        assert (region.lat_min, region.lat_max) == (38.5, 41.5)

    def test_single_point_on_fine_grid_rejected(self):
        spec = GridSpec(30, -110, 0.25, 0.25, 81, 81)
        runs = np.zeros(spec.shape, int)
        runs[40, 40] = 5
        with pytest.raises(ValueError, match="majority"):
            grow_bounding_box((40.0, -100.0), runs, spec)

    def test_seed_must_qualify(self):
        with pytest.raises(ValueError):
            grow_bounding_box((40.0, -100.0), np.zeros(self.spec.shape), self.spec)

    def test_global_field_capped(self):
        runs = np.full(self.spec.shape, 5)
        region = grow_bounding_box((40.0, -100.0), runs, self.spec)
        assert (region.lat_min, region.lat_max) == (29.5, 50.5)
        assert (region.lon_min, region.lon_max) == (-110.5, -89.5)

    def test_land_only_edges(self):
        runs = np.zeros(self.spec.shape, int)
        runs[8:13, 8:13] = 4
        land = np.ones(self.spec.shape, bool)
        land[:, 13:] = False  # ocean east of the block: east edge has no land
        runs[:, 13:] = 9  # ocean values must not matter
        region = grow_bounding_box((40.0, -100.0), runs, self.spec, landmask=LandMask(self.spec, land))
        assert region.lon_max == pytest.approx(-96.5)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(-5, 5), st.integers(-5, 5))
    def test_contains_seed_and_translates(self, seed, di, dj):
        rng = np.random.default_rng(seed)
        runs = np.zeros(self.spec.shape, int)
        r0, c0 = rng.integers(6, 15, size=2)
        h = rng.integers(1, 5, size=4)
        runs[r0 - h[0]:r0 + h[1], c0 - h[2]:c0 + h[3]] = 3
        runs[r0, c0] = 3
        noise = rng.random(self.spec.shape) < 0.1
        runs[noise] = 3
        seed_pt = (float(self.spec.lats[r0]), float(self.spec.lons[c0]))
        region = grow_bounding_box(seed_pt, runs, self.spec)
        assert region.contains(*seed_pt)
        moved = GridSpec(self.spec.lat0 + di, self.spec.lon0 + dj, 1, 1, 21, 21)
        region2 = grow_bounding_box((seed_pt[0] + di, seed_pt[1] + dj), runs, moved)
        assert region2.lat_min == pytest.approx(region.lat_min + di)
        assert region2.lat_max == pytest.approx(region.lat_max + di)
        assert region2.lon_min == pytest.approx(region.lon_min + dj)
        assert region2.lon_max == pytest.approx(region.lon_max + dj)


def test_build_event_case_heat():
    spec = GridSpec(38, -102, 1, 1, 5, 5)
    pattern = day_pattern("CCHHHHCC")
    samples = np.repeat(np.repeat(pattern[:, None, None], 5, 1), 5, 2)
    cube = cube_from_samples(samples, spec)
    case = build_event_case("hw1", "heat_wave", cube, flat_climatology(spec, 300.0), (40.0, -100.0))
    assert case.start == np.datetime64("2021-06-22T00:00:00")
    assert case.end == np.datetime64("2021-06-26T00:00:00")
    assert case.region.lat_min == 37.5 and case.region.lat_max == 42.5


class TestMarginal:
    def test_median_field_covers_land(self):
        spec = GridSpec(30, -110, 1, 1, 10, 20)
        land = np.zeros(spec.shape, bool)
        land[:, :12] = True
        cube = cube_from_samples(np.full((24,) + spec.shape, 290.0), spec)
        cases = detect_marginal_regions(
            cube, flat_climatology(spec, 285.0, 0.16), flat_climatology(spec, 295.0, 0.84), LandMask(spec, land)
        )
        assert len(cases) == 1
        np.testing.assert_array_equal(cases[0].day_counts > 0, land)
        assert cases[0].end - cases[0].start == np.timedelta64(6, "D")

    @pytest.mark.parametrize("ncell,accepted", [(10, False), (17, True)])
    def test_area_threshold(self, ncell, accepted):
        spec = GridSpec(-5, 0, 1, 1, 11, 30)
        temps = np.full((24,) + spec.shape, 280.0)
        temps[:, 5, :ncell] = 290.0  # equatorial strip inside the band
        cube = cube_from_samples(temps, spec)
        area = sum(cell_area_km2(0.0, spec) for _ in range(ncell))
        assert (area > 200_000) == accepted
        cases = detect_marginal_regions(cube, flat_climatology(spec, 285.0), flat_climatology(spec, 295.0))
        assert (len(cases) == 1) == accepted

    def test_band_violation_resets(self):
        spec = GridSpec(-5, 0, 1, 1, 11, 30)
        temps = np.full((28,) + spec.shape, 290.0)  # 7 days
        temps[2 * 4 + 1, :, :] = 295.0 + 1e-3  # day 3 touches clim84 + eps
        cube = cube_from_samples(temps, spec)
        cases = detect_marginal_regions(cube, flat_climatology(spec, 285.0), flat_climatology(spec, 295.0))
        assert cases == []

    def test_antarctica_excluded(self):
        spec = GridSpec(-80, 0, 1, 1, 40, 60)
        cube = cube_from_samples(np.full((24,) + spec.shape, 290.0), spec)
        cases = detect_marginal_regions(cube, flat_climatology(spec, 285.0), flat_climatology(spec, 295.0))
        assert len(cases) == 1
        assert cases[0].region.lat_min >= -60.5
