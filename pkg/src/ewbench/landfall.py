"""TC landfall detection, filtering and scoring.

A landfall is the first ocean-to-land transition along a straight track
segment between two consecutive track points. The segment is sampled at
half the land-mask cell size and the crossing is then refined by
bisection; time and intensity are interpolated linearly to the crossing.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .container import format_time, parse_time
from .grid import LandMask, haversine_km, wrap_lon
from .tc import CandidateCenter, Track

LANDFALL_COLUMNS = ("storm_id", "source", "ordinal", "time", "lat", "lon", "mslp_hpa", "wind_ms")
DEDUPE_KM = 50.0
MATCH_WINDOW_H = 24.0
MODES = ("first", "next")
_BISECT_STEPS = 40


@dataclass(frozen=True)
class LandfallEvent:
    storm_id: str
    source: str
    time: np.datetime64
    lat: float
    lon: float
    mslp_hpa: float
    wind_ms: float
    ordinal: int

    def __post_init__(self):
        object.__setattr__(self, "time", np.datetime64(self.time, "s"))
        object.__setattr__(self, "lon", float(wrap_lon(self.lon)))


def _segment_point(a: CandidateCenter, b: CandidateCenter, frac: float) -> tuple[float, float]:
    dlon = wrap_lon(b.lon - a.lon)
    return a.lat + frac * (b.lat - a.lat), wrap_lon(a.lon + frac * dlon)


def _crossing_fraction(a: CandidateCenter, b: CandidateCenter, landmask: LandMask) -> float | None:
    """Fraction along a->b of the first ocean-to-land transition, or None."""
    step = 0.5 * min(landmask.spec.dlat, landmask.spec.dlon)
    length = math.hypot(b.lat - a.lat, wrap_lon(b.lon - a.lon))
    n = max(1, int(math.ceil(length / step)))
    fracs = np.linspace(0.0, 1.0, n + 1)
    lat, lon = _segment_point(a, b, fracs)
    land = landmask.is_land(lat, lon)
    hits = np.nonzero(~land[:-1] & land[1:])[0]
    if hits.size == 0:
        return None
    lo, hi = float(fracs[hits[0]]), float(fracs[hits[0] + 1])
    for _ in range(_BISECT_STEPS):
        mid = 0.5 * (lo + hi)
        if landmask.is_land(*_segment_point(a, b, mid)):
            hi = mid
        else:
            lo = mid
    return hi


def _interp_event(track: Track, a: CandidateCenter, b: CandidateCenter, frac: float, ordinal: int) -> LandfallEvent:
    lat, lon = _segment_point(a, b, frac)
    dt = (b.time - a.time).astype("timedelta64[s]").astype(np.int64)
    t = a.time + np.timedelta64(int(round(frac * dt)), "s")
    return LandfallEvent(
        storm_id=track.storm_id,
        source=track.source,
        time=t,
        lat=float(lat),
        lon=float(lon),
        mslp_hpa=a.mslp_hpa + frac * (b.mslp_hpa - a.mslp_hpa),
        wind_ms=a.peak_wind_ms + frac * (b.peak_wind_ms - a.peak_wind_ms),
        ordinal=ordinal,
    )


def detect_landfalls(track: Track, landmask: LandMask) -> list[LandfallEvent]:
    """All landfalls along ``track``, at most one per segment, numbered from 1.

    Small islands should be removed from ``landmask`` beforehand (see
    :meth:`LandMask.without_small_features`).

    Raises:
        ValueError: the track has fewer than two points.
    """
    if len(track) < 2:
        raise ValueError("landfall detection needs at least two track points")
    events = []
    for a, b in zip(track.points, track.points[1:]):
        frac = _crossing_fraction(a, b, landmask)
        if frac is not None:
            events.append(_interp_event(track, a, b, frac, len(events) + 1))
    return events


def dedupe_landfalls(events: Sequence[LandfallEvent], radius_km: float = DEDUPE_KM) -> list[LandfallEvent]:
    """Drop landfalls within ``radius_km`` of an earlier kept landfall of the same track."""
    kept: list[LandfallEvent] = []
    for ev in sorted(events, key=lambda e: (e.storm_id, e.time)):
        if any(k.storm_id == ev.storm_id and haversine_km(k.lat, k.lon, ev.lat, ev.lon) < radius_km for k in kept):
            continue
        kept.append(ev)
    return kept


def drop_spin_up(events: Sequence[LandfallEvent], init_time, first_valid) -> list[LandfallEvent]:
    """Drop landfalls in the half-open window [init_time, first_valid)."""
    init = np.datetime64(init_time, "s")
    first = np.datetime64(first_valid, "s")
    return [e for e in events if not (init <= e.time < first)]


class LandfallPair(NamedTuple):
    forecast: LandfallEvent
    target: LandfallEvent

    @property
    def dt_hours(self) -> float:
        return float((self.forecast.time - self.target.time) / np.timedelta64(1, "h"))


def filter_landfalls(
    forecast: Sequence[LandfallEvent],
    target: Sequence[LandfallEvent],
    init_time,
    first_valid: Mapping[str, np.datetime64] | None = None,
    mode: str = "first",
    window_hours: float = MATCH_WINDOW_H,
) -> list[LandfallPair]:
    """Pair forecast and target landfalls.

    Steps: drop secondary landfalls within 50 km of an earlier one (both
    sides); drop landfalls in [init, first valid time of the forecast track);
    select the target landfall (``first``: the target's first landfall,
    ``next``: its first landfall at or after the forecast track starts) and
    the first landfall of each forecast track; pair when the times differ
    by at most ``window_hours``. Each target landfall is used at most once,
    going to the closest forecast in time.

    Args:
        first_valid: first valid time of each forecast track, by storm id;
            defaults to ``init_time``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    init = np.datetime64(init_time, "s")
    window = np.timedelta64(int(round(window_hours * 3600)), "s")
    target = sorted(dedupe_landfalls(target), key=lambda e: e.time)
    by_storm: dict[str, list[LandfallEvent]] = {}
    for ev in dedupe_landfalls(forecast):
        by_storm.setdefault(ev.storm_id, []).append(ev)

    proposals = []
    for storm_id in sorted(by_storm):
        start = np.datetime64((first_valid or {}).get(storm_id, init), "s")
        fc = drop_spin_up(sorted(by_storm[storm_id], key=lambda e: e.time), init, start)
        tg = drop_spin_up(target, init, start)
        if not fc or not tg:
            continue
        if mode == "first":
            chosen = tg[0] if tg[0] is target[0] else None
        else:
            later = [e for e in tg if e.time >= start]
            chosen = later[0] if later else None
        if chosen is None:
            continue
        f = fc[0]
        if abs(f.time - chosen.time) <= window:
            proposals.append(LandfallPair(f, chosen))

    pairs = []
    used = set()
    for p in sorted(proposals, key=lambda p: (abs(p.dt_hours), p.forecast.storm_id)):
        key = (p.target.storm_id, p.target.ordinal, p.target.time)
        if key in used:
            continue
        used.add(key)
        pairs.append(p)
    return sorted(pairs, key=lambda p: p.forecast.storm_id)


class LandfallMetrics(NamedTuple):
    pressure_mae_hpa: float | None
    wind_mae_ms: float | None
    time_me_hours: float | None
    displacement_km: float | None


def landfall_metrics(pairs: Sequence[LandfallPair]) -> LandfallMetrics:
    """Intensity MAE, signed timing error and mean displacement over pairs.

    All four values are None for an empty pair list.
    """
    if not pairs:
        return LandfallMetrics(None, None, None, None)
    n = len(pairs)
    return LandfallMetrics(
        pressure_mae_hpa=math.fsum(abs(p.forecast.mslp_hpa - p.target.mslp_hpa) for p in pairs) / n,
        wind_mae_ms=math.fsum(abs(p.forecast.wind_ms - p.target.wind_ms) for p in pairs) / n,
        time_me_hours=math.fsum(p.dt_hours for p in pairs) / n,
        displacement_km=math.fsum(
            haversine_km(p.forecast.lat, p.forecast.lon, p.target.lat, p.target.lon) for p in pairs
        ) / n,
    )


def align_track(track: Track, valid_times: Iterable) -> Track:
    """Resample ``track`` to ``valid_times`` by linear interpolation.

    Times outside the track's span are skipped. Used to bring 3-hourly
    analysis tracks onto a model's 6-hourly output times.
    """
    pts = track.points
    times = track.times
    out = []
    for t in sorted({np.datetime64(v, "s") for v in valid_times}):
        if len(times) == 0 or t < times[0] or t > times[-1]:
            continue
        k = int(np.searchsorted(times, t))
        if times[k] == t:
            out.append(pts[k])
            continue
        a, b = pts[k - 1], pts[k]
        frac = float((t - a.time) / (b.time - a.time))
        lat, lon = _segment_point(a, b, frac)
        out.append(
            CandidateCenter(
                time=t,
                lat=float(lat),
                lon=float(lon),
                mslp_hpa=a.mslp_hpa + frac * (b.mslp_hpa - a.mslp_hpa),
                warm_core=a.warm_core and b.warm_core,
                peak_wind_ms=a.peak_wind_ms + frac * (b.peak_wind_ms - a.peak_wind_ms),
            )
        )
    return Track(track.storm_id, track.source, tuple(out))


def landfalls_to_csv(events: Iterable[LandfallEvent]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LANDFALL_COLUMNS)
    for e in events:
        w.writerow([e.storm_id, e.source, e.ordinal, format_time(e.time), repr(e.lat), repr(e.lon),
                    repr(e.mslp_hpa), repr(e.wind_ms)])
    return buf.getvalue()


def write_landfalls(events: Iterable[LandfallEvent], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(landfalls_to_csv(events), encoding="utf-8")
    return path


def read_landfalls(path) -> list[LandfallEvent]:
    reader = csv.DictReader(io.StringIO(Path(path).read_text(encoding="utf-8")))
    if tuple(reader.fieldnames or ()) != LANDFALL_COLUMNS:
        raise ValueError(f"{path}: expected columns {LANDFALL_COLUMNS}")
    return [
        LandfallEvent(
            storm_id=r["storm_id"],
            source=r["source"],
            time=parse_time(r["time"]),
            lat=float(r["lat"]),
            lon=float(r["lon"]),
            mslp_hpa=float(r["mslp_hpa"]),
            wind_ms=float(r["wind_ms"]),
            ordinal=int(r["ordinal"]),
        )
        for r in reader
    ]
