"""Percentile climatologies and temperature-extreme detection.

Climatologies are indexed by (day of year, synoptic hour) on a 365-day
calendar; Feb 29 samples fold into the Feb 28 bucket. Days are UTC calendar
days throughout.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .grid import (
    FieldCube,
    GridSpec,
    LandMask,
    Region,
    cell_areas,
    connected_components,
)

FREEZING_K = 273.15
SYNOPTIC_STEP_S = 6 * 3600
N_DOY = 365
N_HOURS = 4
CLIMATOLOGY_YEAR = 2001  # any non-leap year; labels the serialized time axis

EVENT_TYPES = ("heat_wave", "freeze", "marginal")


class CadenceError(ValueError):
    """Input cube is not on the 6-hourly synoptic cadence."""


def calendar_index(times) -> tuple[np.ndarray, np.ndarray]:
    """(day-of-year index 0..364, synoptic hour index 0..3) for each time."""
    times = np.asarray(times, dtype="datetime64[s]")
    days = times.astype("datetime64[D]")
    years = times.astype("datetime64[Y]")
    doy = (days - years.astype("datetime64[D]")).astype(np.int64)
    year = years.astype(np.int64) + 1970
    leap = (year % 4 == 0) & ((year % 100 != 0) | (year % 400 == 0))
    # Feb 29 is index 59 in leap years; fold it onto Feb 28 and close the gap
    doy = np.where(leap & (doy >= 59), doy - 1, doy)
    seconds = (times - days).astype(np.int64)
    if np.any(seconds % SYNOPTIC_STEP_S):
        raise CadenceError("times must fall on 00/06/12/18 UTC")
    return doy, seconds // SYNOPTIC_STEP_S


def _check_cadence(cube: FieldCube) -> None:
    step = cube.cadence_seconds()
    if cube.ntime > 1 and step != SYNOPTIC_STEP_S:
        raise CadenceError(f"{cube.variable}: expected 6-hourly cadence, got {step} s")
    calendar_index(cube.times)


def weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> np.ndarray:
    """Weighted quantile along axis 0 by cumulative-weight interpolation.

    Each distinct sorted value sits at the midpoint of its cumulative weight
    share, ``(C_k - w_k / 2) / W``, with tied samples pooled into one mass so
    the result does not depend on input order. The quantile linearly
    interpolates between neighbouring values and clamps to the extremes
    outside that range. Midpoint placement keeps ``q_p(x) == -q_{1-p}(-x)``.

    Args:
        values: (n, ...) samples.
        weights: (n,) non-negative weights shared by every column.
        q: quantile in (0, 1).
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    keep = weights > 0
    values = values[keep]
    weights = weights[keep]
    n = values.shape[0]
    if n == 0:
        raise ValueError("no samples with positive weight")
    flat = values.reshape(n, -1)
    order = np.argsort(flat, axis=0, kind="stable")
    v = np.take_along_axis(flat, order, axis=0)
    w = weights[order]
    cw = np.cumsum(w, axis=0)
    rank = np.arange(n)[:, None]
    starts = np.ones(v.shape, dtype=bool)
    starts[1:] = v[1:] != v[:-1]
    ends = np.ones(v.shape, dtype=bool)
    ends[:-1] = starts[1:]
    first = np.maximum.accumulate(np.where(starts, rank, 0), axis=0)
    last = np.minimum.accumulate(np.where(ends, rank, n - 1)[::-1], axis=0)[::-1]
    group_lo = np.take_along_axis(cw - w, first, axis=0)
    group_hi = np.take_along_axis(cw, last, axis=0)
    pos = 0.5 * (group_lo + group_hi) / cw[-1]
    k = (pos <= q).sum(axis=0)
    lo = np.clip(k - 1, 0, n - 1)
    hi = np.clip(k, 0, n - 1)
    cols = np.arange(flat.shape[1])
    p_lo = pos[lo, cols]
    p_hi = pos[hi, cols]
    v_lo = v[lo, cols]
    v_hi = v[hi, cols]
    span = p_hi - p_lo
    frac = np.where(span > 0, (q - p_lo) / np.where(span > 0, span, 1.0), 0.0)
    frac = np.clip(frac, 0.0, 1.0)
    out = v_lo + frac * (v_hi - v_lo)
    return out.reshape(values.shape[1:])


@dataclass(frozen=True)
class PercentileClimatology:
    """Percentile thresholds per (day of year, synoptic hour, lat, lon), in K."""

    spec: GridSpec
    percentile: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (N_DOY, N_HOURS) + self.spec.shape:
            raise ValueError(f"climatology shape {values.shape} is not (365, 4, nlat, nlon)")
        if not np.isfinite(values).all():
            raise ValueError("climatology values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def thresholds(self, times) -> np.ndarray:
        """Threshold grids matching ``times``: (ntime, nlat, nlon)."""
        doy, hour = calendar_index(times)
        return self.values[doy, hour]

    def to_cube(self, variable: str = "t2m") -> FieldCube:
        start = np.datetime64(f"{CLIMATOLOGY_YEAR}-01-01T00:00:00", "s")
        times = start + np.arange(N_DOY * N_HOURS) * np.timedelta64(SYNOPTIC_STEP_S, "s")
        return FieldCube(
            variable=f"{variable}_q{self.percentile!r}",
            units="K",
            spec=self.spec,
            times=times,
            values=self.values.reshape(N_DOY * N_HOURS, 1, *self.spec.shape).astype(np.float32),
        )

    @classmethod
    def from_cube(cls, cube: FieldCube) -> "PercentileClimatology":
        if cube.ntime != N_DOY * N_HOURS:
            raise ValueError("climatology cube must hold 365 x 4 times")
        _, _, tag = cube.variable.rpartition("_q")
        try:
            percentile = float(tag)
        except ValueError as exc:
            raise ValueError(f"cannot read percentile from variable {cube.variable!r}") from exc
        values = np.asarray(cube.values[:, 0], dtype=float).reshape(N_DOY, N_HOURS, *cube.spec.shape)
        return cls(cube.spec, percentile, values)


def build_percentile_climatology(
    history: FieldCube,
    percentile: float,
    half_window_days: int = 21,
) -> PercentileClimatology:
    """Percentile climatology with a linearly decaying day-of-year window.

    Every sample at the same synoptic hour within ``half_window_days`` of the
    target day contributes with weight ``max(0, 1 - |d| / half_window_days)``
    where ``d`` is the circular day-of-year distance.

    Raises:
        ValueError: percentile outside (0, 1) or less than two years of data.
        CadenceError: history not on 00/06/12/18 UTC.
    """
    if not 0.0 < percentile < 1.0:
        raise ValueError("percentile must lie strictly between 0 and 1")
    if half_window_days < 1:
        raise ValueError("half_window_days must be at least 1")
    doy, hour = calendar_index(history.times)
    span = history.times[-1] - history.times[0]
    if span < np.timedelta64(730 * 86400 - SYNOPTIC_STEP_S, "s"):
        raise ValueError("climatology needs at least two full years of history")
    data = history.surface()
    if not np.isfinite(data).all():
        raise ValueError("history contains missing values")

    out = np.empty((N_DOY, N_HOURS) + history.spec.shape)
    for h in range(N_HOURS):
        sel = hour == h
        doy_h = doy[sel]
        vals_h = data[sel]
        if doy_h.size == 0:
            raise ValueError(f"no history samples at synoptic hour {6 * h:02d} UTC")
        for d in range(N_DOY):
            dist = np.abs(doy_h - d)
            dist = np.minimum(dist, N_DOY - dist)
            w = 1.0 - dist / half_window_days
            near = w > 0
            out[d, h] = weighted_quantile(vals_h[near], w[near], percentile)
    return PercentileClimatology(history.spec, percentile, out)


class RunStats(NamedTuple):
    """Longest merged run per gridpoint; ``start``/``end`` are day indices (-1 if none)."""

    days: np.ndarray
    length: np.ndarray
    start: np.ndarray
    end: np.ndarray


def daily_any(flags: np.ndarray, times) -> tuple[np.ndarray, np.ndarray]:
    """Collapse per-sample flags to per-UTC-day ``any``."""
    day = np.asarray(times, dtype="datetime64[s]").astype("datetime64[D]")
    days, starts = np.unique(day, return_index=True)
    return days, np.logical_or.reduceat(flags, starts, axis=0)


def daily_all(flags: np.ndarray, times) -> tuple[np.ndarray, np.ndarray]:
    day = np.asarray(times, dtype="datetime64[s]").astype("datetime64[D]")
    days, starts = np.unique(day, return_index=True)
    return days, np.logical_and.reduceat(flags, starts, axis=0)


def longest_runs(flags: np.ndarray, days: np.ndarray, max_gap_days: int = 1) -> RunStats:
    """Longest run of qualifying days, bridging up to ``max_gap_days`` missed days.

    Bridged days count toward the run length; runs begin and end on
    qualifying days. Ties keep the earliest run.
    """
    flags = np.asarray(flags, dtype=bool)
    ndays = flags.shape[0]
    shape = flags.shape[1:]
    best_len = np.zeros(shape, dtype=np.int64)
    best_start = np.full(shape, -1, dtype=np.int64)
    cur_start = np.full(shape, -1, dtype=np.int64)
    last_true = np.full(shape, -(10**9), dtype=np.int64)
    for d in range(ndays):
        f = flags[d]
        extend = f & (cur_start >= 0) & (d - last_true - 1 <= max_gap_days)
        fresh = f & ~extend
        cur_start = np.where(fresh, d, cur_start)
        last_true = np.where(f, d, last_true)
        length = np.where(f, last_true - cur_start + 1, 0)
        better = length > best_len
        best_len = np.where(better, length, best_len)
        best_start = np.where(better, cur_start, best_start)
    best_end = np.where(best_len > 0, best_start + best_len - 1, -1)
    return RunStats(days, best_len, best_start, best_end)


def _validate_pair(temp: FieldCube, clim: PercentileClimatology) -> None:
    _check_cadence(temp)
    if temp.spec != clim.spec:
        raise ValueError("temperature cube and climatology are not co-gridded")


def _apply_land(stats: RunStats, landmask: LandMask | None) -> RunStats:
    if landmask is None:
        return stats
    land = landmask.mask
    return RunStats(
        stats.days,
        np.where(land, stats.length, 0),
        np.where(land, stats.start, -1),
        np.where(land, stats.end, -1),
    )


def heatwave_runs(
    temp: FieldCube,
    clim85: PercentileClimatology,
    max_gap_days: int = 1,
    landmask: LandMask | None = None,
) -> RunStats:
    _validate_pair(temp, clim85)
    hot = temp.surface() > clim85.thresholds(temp.times)
    days, flags = daily_any(hot, temp.times)
    return _apply_land(longest_runs(flags, days, max_gap_days), landmask)


def freeze_runs(
    temp: FieldCube,
    clim15: PercentileClimatology,
    max_gap_days: int = 1,
    landmask: LandMask | None = None,
    freezing_k: float = FREEZING_K,
) -> RunStats:
    _validate_pair(temp, clim15)
    t = temp.surface()
    cold = (t < freezing_k) & (t < clim15.thresholds(temp.times))
    days, flags = daily_any(cold, temp.times)
    return _apply_land(longest_runs(flags, days, max_gap_days), landmask)


def detect_heatwave_days(
    temp: FieldCube,
    clim85: PercentileClimatology,
    landmask: LandMask | None = None,
) -> np.ndarray:
    """Longest heat-wave run (days) per gridpoint.

    A day qualifies when any 6-hourly sample exceeds the climatological
    threshold; a single missed day between qualifying days is bridged.
    Ocean points are zero when ``landmask`` is given.
    """
    return heatwave_runs(temp, clim85, landmask=landmask).length


def detect_freeze_days(
    temp: FieldCube,
    clim15: PercentileClimatology,
    landmask: LandMask | None = None,
) -> np.ndarray:
    """Longest freeze run (days) per gridpoint.

    A day qualifies when some sample is both below 273.15 K and below the
    low-percentile threshold.
    """
    return freeze_runs(temp, clim15, landmask=landmask).length


def _edge_fraction(qual: np.ndarray, valid: np.ndarray) -> float:
    n = valid.sum()
    if n == 0:
        return 0.0
    return float((qual & valid).sum()) / float(n)


def grow_bounding_box(
    seed: tuple[float, float],
    run_lengths: np.ndarray,
    spec: GridSpec,
    min_run: int = 3,
    landmask: LandMask | None = None,
    step_deg: float = 1.0,
) -> Region:
    """Grow a box from the 1x1 degree box at ``seed`` over qualifying gridpoints.

    Edges are visited N, S, E, W each pass; an edge moves out by
    ``step_deg`` when at least half of the (land) gridpoints on its current
    boundary row or column have a run of ``min_run`` days or more. Growth
    stops when no edge moves or every moving edge has reached the grid
    limit. The returned bounds are the outer cell edges.

    Raises:
        ValueError: seed off the grid, seed not qualifying, or the seed box
            lacks a qualifying majority.
    """
    runs = np.asarray(run_lengths)
    if runs.shape != spec.shape:
        raise ValueError("run_lengths do not match the grid")
    r0, c0 = (int(x) for x in spec.index_of(*seed))
    if not spec.contains_index(r0, c0):
        raise ValueError(f"seed {seed} lies outside the grid")
    valid = np.ones(spec.shape, bool) if landmask is None else landmask.mask
    qual = (runs >= min_run) & valid
    if not qual[r0, c0]:
        raise ValueError(f"seed {seed} does not have a {min_run}-day run")

    half_r = int(np.floor(0.5 / spec.dlat + 1e-9))
    half_c = int(np.floor(0.5 / spec.dlon + 1e-9))
    step_r = max(1, int(round(step_deg / spec.dlat)))
    step_c = max(1, int(round(step_deg / spec.dlon)))
    lo_r = max(0, r0 - half_r)
    hi_r = min(spec.nlat - 1, r0 + half_r)
    lo_c = max(0, c0 - half_c)
    hi_c = min(spec.nlon - 1, c0 + half_c)

    box_valid = valid[lo_r:hi_r + 1, lo_c:hi_c + 1]
    box_qual = qual[lo_r:hi_r + 1, lo_c:hi_c + 1]
    if not box_qual.sum() > 0.5 * box_valid.sum():
        raise ValueError("seed box does not have a qualifying majority")

    while True:
        moved = False
        # north
        if _edge_fraction(qual[hi_r, lo_c:hi_c + 1], valid[hi_r, lo_c:hi_c + 1]) >= 0.5:
            new = min(spec.nlat - 1, hi_r + step_r)
            moved |= new != hi_r
            hi_r = new
        # south
        if _edge_fraction(qual[lo_r, lo_c:hi_c + 1], valid[lo_r, lo_c:hi_c + 1]) >= 0.5:
            new = max(0, lo_r - step_r)
            moved |= new != lo_r
            lo_r = new
        # east
        if _edge_fraction(qual[lo_r:hi_r + 1, hi_c], valid[lo_r:hi_r + 1, hi_c]) >= 0.5:
            new = min(spec.nlon - 1, hi_c + step_c)
            moved |= new != hi_c
            hi_c = new
        # west
        if _edge_fraction(qual[lo_r:hi_r + 1, lo_c], valid[lo_r:hi_r + 1, lo_c]) >= 0.5:
            new = max(0, lo_c - step_c)
            moved |= new != lo_c
            lo_c = new
        if not moved:
            break

    lats = spec.lats
    lons = spec.lons_unwrapped
    return Region(
        lat_min=float(lats[lo_r] - spec.dlat / 2),
        lat_max=float(lats[hi_r] + spec.dlat / 2),
        lon_min=float(lons[lo_c] - spec.dlon / 2),
        lon_max=float(lons[hi_c] + spec.dlon / 2),
    )


@dataclass(frozen=True)
class EventCase:
    """A detected temperature event.

    ``start`` is 00 UTC of the first event day and ``end`` is 00 UTC of the
    day after the last one. ``day_counts`` holds per-gridpoint run lengths
    (days) on ``spec``, zero outside the event.
    """

    case_id: str
    event_type: str
    region: Region
    start: np.datetime64
    end: np.datetime64
    spec: GridSpec
    day_counts: np.ndarray

    def __post_init__(self):
        if self.event_type not in EVENT_TYPES:
            raise ValueError(f"unknown event type {self.event_type!r}")
        if self.event_type in ("heat_wave", "freeze") and self.end < self.start + np.timedelta64(3, "D"):
            raise ValueError("heat and freeze events last at least three days")

    def as_dict(self) -> dict:
        from .container import format_time

        return {
            "case_id": self.case_id,
            "event_type": self.event_type,
            "region": self.region.as_dict(),
            "start": format_time(self.start),
            "end": format_time(self.end),
            "max_day_count": int(np.max(self.day_counts)) if self.day_counts.size else 0,
        }


def event_window(
    stats: RunStats,
    region_mask: np.ndarray,
    min_run: int = 3,
) -> tuple[np.datetime64, np.datetime64] | None:
    """First and one-past-last day on which most region points are inside a qualifying run.

    Returns ``None`` when no day reaches a majority.
    """
    region_mask = np.asarray(region_mask, bool)
    n = region_mask.sum()
    if n == 0:
        return None
    qualifying = (stats.length >= min_run) & region_mask
    d = np.arange(stats.days.size)[:, None, None]
    inside = qualifying[None] & (d >= stats.start[None]) & (d <= stats.end[None])
    frac = inside.reshape(stats.days.size, -1).sum(axis=1) / n
    hits = np.nonzero(frac > 0.5)[0]
    if hits.size == 0:
        return None
    start = stats.days[hits[0]].astype("datetime64[s]")
    end = (stats.days[hits[-1]] + np.timedelta64(1, "D")).astype("datetime64[s]")
    return start, end


def build_event_case(
    case_id: str,
    event_type: str,
    temp: FieldCube,
    clim: PercentileClimatology,
    seed: tuple[float, float],
    landmask: LandMask | None = None,
    min_run: int = 3,
) -> EventCase:
    """Detect a heat wave or freeze around ``seed`` and package it as a case."""
    if event_type == "heat_wave":
        stats = heatwave_runs(temp, clim, landmask=landmask)
    elif event_type == "freeze":
        stats = freeze_runs(temp, clim, landmask=landmask)
    else:
        raise ValueError("build_event_case handles heat_wave and freeze only")
    region = grow_bounding_box(seed, stats.length, temp.spec, min_run, landmask)
    mask = region.mask(temp.spec)
    if landmask is not None:
        mask &= landmask.mask
    window = event_window(stats, mask, min_run)
    if window is None:
        raise ValueError("no day with a qualifying majority inside the grown box")
    counts = np.where(mask, stats.length, 0)
    return EventCase(case_id, event_type, region, window[0], window[1], temp.spec, counts)


def detect_marginal_regions(
    temp: FieldCube,
    clim16: PercentileClimatology,
    clim84: PercentileClimatology,
    landmask: LandMask | None = None,
    min_days: int = 5,
    min_area_km2: float = 200_000.0,
    south_limit: float = -60.0,
) -> list[EventCase]:
    """Large regions that stay inside the 16th-84th percentile band.

    A gridpoint-day qualifies when every sample that day lies within
    [clim16, clim84]. Gridpoints with ``min_days`` consecutive qualifying days
    form 8-connected components; components larger than ``min_area_km2``
    (strictly) become cases. Ocean points (with ``landmask``) and points
    south of ``south_limit`` are excluded.
    """
    _validate_pair(temp, clim16)
    _validate_pair(temp, clim84)
    t = temp.surface()
    inside = (t >= clim16.thresholds(temp.times)) & (t <= clim84.thresholds(temp.times))
    days, flags = daily_all(inside, temp.times)
    stats = longest_runs(flags, days, max_gap_days=0)
    eligible = temp.spec.lats[:, None] >= south_limit
    eligible = np.broadcast_to(eligible, temp.spec.shape)
    if landmask is not None:
        eligible = eligible & landmask.mask
    persistent = (stats.length >= min_days) & eligible
    labels, _ = connected_components(persistent, connectivity=8, spec=temp.spec)
    areas = cell_areas(temp.spec)

    cases = []
    lats = temp.spec.lats
    lons = temp.spec.lons_unwrapped
    for k in range(1, labels.max() + 1):
        member = labels == k
        if not areas[member].sum() > min_area_km2:
            continue
        rows = np.nonzero(member.any(axis=1))[0]
        cols = np.nonzero(member.any(axis=0))[0]
        region = Region(
            lat_min=float(lats[rows[0]] - temp.spec.dlat / 2),
            lat_max=float(lats[rows[-1]] + temp.spec.dlat / 2),
            lon_min=float(lons[cols[0]] - temp.spec.dlon / 2),
            lon_max=float(lons[cols[-1]] + temp.spec.dlon / 2),
        )
        start = days[stats.start[member].min()].astype("datetime64[s]")
        end = (days[stats.end[member].max()] + np.timedelta64(1, "D")).astype("datetime64[s]")
        day_str = str(days[stats.start[member].min()]).replace("-", "")
        cases.append(
            EventCase(
                case_id=f"marginal_{day_str}_{len(cases) + 1:03d}",
                event_type="marginal",
                region=region,
                start=start,
                end=end,
                spec=temp.spec,
                day_counts=np.where(member, stats.length, 0),
            )
        )
    return cases
