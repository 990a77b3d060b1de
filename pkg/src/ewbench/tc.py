"""Tropical-cyclone candidate detection and track stitching.

Candidates are MSLP minima that pass a closed-contour pressure test and a
warm-core thickness test. Tracks are built by greedy nearest-neighbour
association through time. Distances in parameters are great-circle
degrees (GCD).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage

from .container import format_time, parse_time
from .grid import GridSpec, destination_point, great_circle_degrees, wrap_lon

TRACK_COLUMNS = ("storm_id", "source", "time", "lat", "lon", "mslp_hpa", "peak_wind_ms")
SOURCES = ("forecast", "analysis")


@dataclass(frozen=True)
class TcParams:
    max_center_pressure: float = 1020.0
    warm_core_thickness_drop: float = -6.0
    warm_core_radius: float = 6.5
    warm_core_anchor_radius: float = 1.0
    require_closed_contours: bool = True
    min_pressure_gradient: float = 200.0
    gradient_radius: float = 5.5
    max_distance_from_reference: float = 5.0
    min_candidate_separation: float = 1.0
    max_track_gap: float = 48.0
    min_valid_wind_timesteps: int = 10
    valid_wind_threshold: float = 10.0
    max_abs_latitude: float = 50.0
    peak_wind_radius: float = 2.0
    max_step_distance: float = 8.0
    n_rays: int = 8

    def __post_init__(self):
        for name in (
            "warm_core_radius",
            "warm_core_anchor_radius",
            "gradient_radius",
            "max_distance_from_reference",
            "min_candidate_separation",
            "max_track_gap",
            "peak_wind_radius",
            "max_step_distance",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.warm_core_thickness_drop > 0:
            raise ValueError("warm_core_thickness_drop is a drop and must be <= 0")
        if self.n_rays < 1:
            raise ValueError("n_rays must be at least 1")


@dataclass(frozen=True)
class CandidateCenter:
    time: np.datetime64
    lat: float
    lon: float
    mslp_hpa: float
    warm_core: bool
    peak_wind_ms: float

    def __post_init__(self):
        object.__setattr__(self, "time", np.datetime64(self.time, "s"))
        object.__setattr__(self, "lon", float(wrap_lon(self.lon)))


def _check_center(spec: GridSpec, center) -> tuple[int, int]:
    row, col = spec.index_of(*center)
    if not spec.contains_index(row, col):
        raise ValueError(f"centre {center} is outside the grid")
    return int(row), int(col)


def _ray_offsets(spec: GridSpec, radius: float) -> np.ndarray:
    step = min(spec.dlat, spec.dlon)
    n = int(math.floor(radius / step + 1e-9))
    return step * np.arange(1, n + 1)


def closed_contour_check(
    field: np.ndarray,
    spec: GridSpec,
    center,
    delta: float,
    radius: float,
    direction: str = "rise",
    n_rays: int = 8,
) -> bool:
    """Whether ``field`` changes by ``delta`` on every ray from ``center``.

    Rays start at the nearest gridpoint to ``center`` and are sampled at
    the grid spacing (nearest-gridpoint lookup) out to ``radius`` GCD. A ray
    passes once some sample differs from the centre value by at least
    ``|delta|`` in ``direction``; a ray leaving the grid first fails.

    Raises:
        ValueError: ``center`` is off the grid, or an unknown direction.
    """
    if direction not in ("rise", "drop"):
        raise ValueError("direction must be 'rise' or 'drop'")
    r0, c0 = _check_center(spec, center)
    delta = abs(delta)
    if delta == 0:
        return True
    f = np.asarray(field, dtype=float)
    f0 = f[r0, c0]
    lat0, lon0 = float(spec.lats[r0]), float(spec.lons[c0])
    dists = _ray_offsets(spec, radius)
    if dists.size == 0:
        return False
    for k in range(n_rays):
        lat, lon = destination_point(lat0, lon0, 360.0 * k / n_rays, dists)
        rows, cols = spec.index_of(lat, lon)
        inside = spec.contains_index(rows, cols)
        if not inside.all():
            stop = int(np.argmin(inside))
            rows, cols = rows[:stop], cols[:stop]
        vals = f[rows, cols]
        change = vals - f0 if direction == "rise" else f0 - vals
        if not np.any(change >= delta):
            return False
    return True


def _within(spec: GridSpec, center, radius: float) -> tuple[np.ndarray, np.ndarray]:
    """Row/col indices of gridpoints within ``radius`` GCD of ``center``."""
    lat_c, lon_c = center
    lats = spec.lats
    band = np.nonzero(np.abs(lats - lat_c) <= radius + spec.dlat)[0]
    if band.size == 0:
        return np.zeros(0, int), np.zeros(0, int)
    lat2d = lats[band][:, None]
    lon2d = spec.lons[None, :]
    d = great_circle_degrees(lat2d, lon2d, lat_c, lon_c)
    r, c = np.nonzero(d <= radius + 1e-9)
    return band[r], c


def peak_wind(u10: np.ndarray, v10: np.ndarray, spec: GridSpec, center, radius: float = 2.0) -> float:
    """Maximum 10 m wind speed within ``radius`` GCD of ``center``."""
    rows, cols = _within(spec, center, radius)
    if rows.size == 0:
        return 0.0
    return float(np.max(np.hypot(u10[rows, cols], v10[rows, cols])))


def local_minima(field: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Points no higher than any of their eight neighbours.

    Perfectly flat 3x3 neighbourhoods are excluded so that a uniform
    environment does not produce a candidate at every gridpoint.
    """
    padded = np.pad(field, ((1, 1), (0, 0)), mode="edge")
    padded = np.pad(padded, ((0, 0), (1, 1)), mode="wrap" if spec.is_global else "edge")
    low = ndimage.minimum_filter(padded, size=3, mode="nearest")[1:-1, 1:-1]
    high = ndimage.maximum_filter(padded, size=3, mode="nearest")[1:-1, 1:-1]
    return (field <= low) & (field < high)


def _separate(points: list[tuple[float, float, float, int, int]], min_sep: float) -> list:
    """Keep the deepest of any minima closer than ``min_sep``."""
    kept = []
    for p in sorted(points):
        if all(great_circle_degrees(p[1], p[2], q[1], q[2]) >= min_sep for q in kept):
            kept.append(p)
    return kept


def find_candidates(
    mslp: np.ndarray,
    z300: np.ndarray,
    z500: np.ndarray,
    u10: np.ndarray,
    v10: np.ndarray,
    spec: GridSpec,
    time,
    params: TcParams = TcParams(),
    reference_point: tuple[float, float] | None = None,
) -> list[CandidateCenter]:
    """TC centre candidates at one valid time.

    Pipeline: 3x3 MSLP minima at or below ``max_center_pressure`` and within
    ``max_abs_latitude``; separation (deepest wins); reference-distance
    filter; closed pressure contour; warm core, anchored at the thickness
    maximum within ``warm_core_anchor_radius`` of the pressure minimum.

    Args:
        mslp: sea-level pressure, hPa.
        z300, z500: geopotential height, m.
        u10, v10: 10 m wind components, m/s.
    """
    fields = [np.asarray(a, dtype=float) for a in (mslp, z300, z500, u10, v10)]
    if any(a.shape != spec.shape for a in fields):
        raise ValueError("candidate fields must share the grid shape")
    mslp, z300, z500, u10, v10 = fields
    lat2d = np.broadcast_to(spec.lats[:, None], spec.shape)
    ok = local_minima(mslp, spec) & (mslp <= params.max_center_pressure)
    ok &= np.abs(lat2d) <= params.max_abs_latitude
    rows, cols = np.nonzero(ok)
    points = [
        (float(mslp[r, c]), float(spec.lats[r]), float(spec.lons[c]), int(r), int(c)) for r, c in zip(rows, cols)
    ]
    points = _separate(points, params.min_candidate_separation)
    if reference_point is not None:
        points = [
            p for p in points
            if great_circle_degrees(p[1], p[2], *reference_point) <= params.max_distance_from_reference
        ]

    thickness = z300 - z500
    out = []
    for p_hpa, lat, lon, r, c in points:
        if params.require_closed_contours and not closed_contour_check(
            mslp, spec, (lat, lon), params.min_pressure_gradient / 100.0, params.gradient_radius, "rise", params.n_rays
        ):
            continue
        ar, ac = _within(spec, (lat, lon), params.warm_core_anchor_radius)
        k = int(np.argmax(thickness[ar, ac]))
        anchor = (float(spec.lats[ar[k]]), float(spec.lons[ac[k]]))
        warm = closed_contour_check(
            thickness, spec, anchor, params.warm_core_thickness_drop, params.warm_core_radius, "drop", params.n_rays
        )
        if params.require_closed_contours and not warm:
            continue
        out.append(
            CandidateCenter(
                time=time,
                lat=lat,
                lon=lon,
                mslp_hpa=p_hpa,
                warm_core=warm,
                peak_wind_ms=peak_wind(u10, v10, spec, (lat, lon), params.peak_wind_radius),
            )
        )
    return out


@dataclass(frozen=True)
class Track:
    storm_id: str
    source: str
    points: tuple[CandidateCenter, ...]

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"source must be one of {SOURCES}")
        object.__setattr__(self, "points", tuple(self.points))
        times = [p.time for p in self.points]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError(f"track {self.storm_id}: times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def times(self) -> np.ndarray:
        return np.array([p.time for p in self.points], dtype="datetime64[s]")

    @property
    def lats(self) -> np.ndarray:
        return np.array([p.lat for p in self.points])

    @property
    def lons(self) -> np.ndarray:
        return np.array([p.lon for p in self.points])

    def windy_steps(self, threshold: float = 10.0) -> int:
        return sum(p.peak_wind_ms >= threshold for p in self.points)

    def is_valid(self, params: TcParams = TcParams()) -> bool:
        return self.windy_steps(params.valid_wind_threshold) >= params.min_valid_wind_timesteps

    def position_at(self, time) -> tuple[float, float] | None:
        """Linear lat/lon interpolation; None outside the track's time span."""
        t = np.datetime64(time, "s")
        times = self.times
        if len(times) == 0 or t < times[0] or t > times[-1]:
            return None
        k = int(np.searchsorted(times, t))
        if times[k] == t:
            return self.points[k].lat, self.points[k].lon
        a, b = self.points[k - 1], self.points[k]
        w = (t - a.time) / (b.time - a.time)
        dlon = wrap_lon(b.lon - a.lon)
        return a.lat + w * (b.lat - a.lat), float(wrap_lon(a.lon + w * dlon))


def _group_by_time(candidates: Iterable) -> list[tuple[np.datetime64, list[CandidateCenter]]]:
    groups: dict = {}
    for item in candidates:
        if isinstance(item, CandidateCenter):
            groups.setdefault(item.time, []).append(item)
        else:
            for c in item:
                groups.setdefault(c.time, []).append(c)
    return sorted(groups.items(), key=lambda kv: kv[0])


def _cand_key(c: CandidateCenter) -> tuple:
    return (c.mslp_hpa, c.lat, c.lon)


def stitch_tracks(
    candidates_by_time: Iterable,
    params: TcParams = TcParams(),
    reference_track: Track | None = None,
    source: str = "forecast",
    keep_invalid: bool = False,
) -> list[Track]:
    """Greedy nearest-neighbour stitching of candidates into tracks.

    At each time, open tracks (last point no more than ``max_track_gap``
    hours earlier) and new candidates within ``max_step_distance`` GCD are
    paired in order of increasing distance, ties going to the deeper, then
    the more southerly and westerly candidate. Unpaired candidates start new
    tracks. With ``reference_track``, candidates more than
    ``max_distance_from_reference`` from its interpolated position (or
    outside its time span) are dropped first.

    Args:
        candidates_by_time: lists of candidates per time, or a flat iterable.
        keep_invalid: also return tracks failing the wind-validity rule.

    Returns:
        Tracks ordered by start time, ids ``<source>-001`` onwards.
    """
    gap = np.timedelta64(int(round(params.max_track_gap * 3600)), "s")
    open_tracks: list[list[CandidateCenter]] = []
    closed: list[list[CandidateCenter]] = []
    for t, cands in _group_by_time(candidates_by_time):
        if reference_track is not None:
            ref = reference_track.position_at(t)
            cands = [
                c for c in cands
                if ref is not None and great_circle_degrees(c.lat, c.lon, *ref) <= params.max_distance_from_reference
            ]
        cands = sorted(cands, key=_cand_key)
        still_open = []
        for tr in open_tracks:
            (still_open if t - tr[-1].time <= gap else closed).append(tr)
        open_tracks = still_open

        pairs = []
        for i, tr in enumerate(open_tracks):
            last = tr[-1]
            for j, c in enumerate(cands):
                d = float(great_circle_degrees(last.lat, last.lon, c.lat, c.lon))
                if d <= params.max_step_distance:
                    pairs.append((d,) + _cand_key(c) + (i, j))
        used_t, used_c = set(), set()
        for *_, i, j in sorted(pairs):
            if i in used_t or j in used_c:
                continue
            open_tracks[i].append(cands[j])
            used_t.add(i)
            used_c.add(j)
        for j, c in enumerate(cands):
            if j not in used_c:
                open_tracks.append([c])

    everything = closed + open_tracks
    everything.sort(key=lambda tr: (tr[0].time,) + _cand_key(tr[0]))
    tracks = []
    for pts in everything:
        tr = Track("", source, tuple(pts))
        if keep_invalid or tr.is_valid(params):
            tracks.append(Track(f"{source}-{len(tracks) + 1:03d}", source, tr.points))
    return tracks


def tracks_to_csv(tracks: Iterable[Track]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACK_COLUMNS)
    for tr in tracks:
        for p in tr.points:
            w.writerow([tr.storm_id, tr.source, format_time(p.time), repr(p.lat), repr(p.lon),
                        repr(p.mslp_hpa), repr(p.peak_wind_ms)])
    return buf.getvalue()


def write_tracks(tracks: Iterable[Track], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(tracks_to_csv(tracks), encoding="utf-8")
    return path


def read_tracks(path) -> list[Track]:
    """Tracks from CSV, in order of first appearance of each storm id.

    Rows of one storm may be interleaved with others; they are sorted by
    time within the storm.
    """
    reader = csv.DictReader(io.StringIO(Path(path).read_text(encoding="utf-8")))
    if tuple(reader.fieldnames or ()) != TRACK_COLUMNS:
        raise ValueError(f"{path}: expected columns {TRACK_COLUMNS}")
    rows: dict[tuple[str, str], list[CandidateCenter]] = {}
    for row in reader:
        key = (row["storm_id"], row["source"])
        rows.setdefault(key, []).append(
            CandidateCenter(
                time=parse_time(row["time"]),
                lat=float(row["lat"]),
                lon=float(row["lon"]),
                mslp_hpa=float(row["mslp_hpa"]),
                warm_core=True,
                peak_wind_ms=float(row["peak_wind_ms"]),
            )
        )
    return [Track(sid, src, tuple(sorted(pts, key=lambda p: p.time))) for (sid, src), pts in rows.items()]

