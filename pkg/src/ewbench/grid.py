"""Regular lat/lon grids, field cubes, geodesy helpers and raster kernels.

Everything in this module is shared by the event detectors. Longitudes are
kept in the canonical range [-180, 180); grid index space is contiguous even
when the physical longitudes cross the antimeridian.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage

EARTH_RADIUS_KM = 6371.0


def wrap_lon(lon):
    """Map longitudes onto [-180, 180)."""
    wrapped = (np.asarray(lon, dtype=float) + 180.0) % 360.0 - 180.0
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class GridSpec:
    """Uniform lat/lon grid.

    ``lat0``/``lon0`` locate the first row/column centre; rows increase
    northward by ``dlat`` and columns eastward by ``dlon``.
    """

    lat0: float
    lon0: float
    dlat: float
    dlon: float
    nlat: int
    nlon: int

    def __post_init__(self):
        if self.dlat <= 0 or self.dlon <= 0:
            raise ValueError("grid spacing must be positive")
        if self.nlat < 1 or self.nlon < 1:
            raise ValueError("grid must have at least one point")
        # pole-to-pole grids with points on both poles have (nlat - 1) * dlat = 180
        if (self.nlat - 1) * self.dlat > 180.0 + 1e-9:
            raise ValueError("latitude extent exceeds 180 degrees")
        lat_max = self.lat0 + (self.nlat - 1) * self.dlat
        if self.lat0 < -90.0 - 1e-9 or lat_max > 90.0 + 1e-9:
            raise ValueError("latitudes must lie in [-90, 90]")
        object.__setattr__(self, "lon0", wrap_lon(self.lon0))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nlat, self.nlon)

    @property
    def lats(self) -> np.ndarray:
        return self.lat0 + self.dlat * np.arange(self.nlat)

    @property
    def lons(self) -> np.ndarray:
        return wrap_lon(self.lon0 + self.dlon * np.arange(self.nlon))

    @property
    def lons_unwrapped(self) -> np.ndarray:
        """Monotone longitudes starting at ``lon0`` (may exceed 180)."""
        return self.lon0 + self.dlon * np.arange(self.nlon)

    @property
    def is_global(self) -> bool:
        """True when the columns close around the full circle."""
        return abs(self.nlon * self.dlon - 360.0) < 1e-6 * self.dlon

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """2-D (lat, lon) arrays of gridpoint centres."""
        return np.meshgrid(self.lats, self.lons, indexing="ij")

    def row_of(self, lat) -> np.ndarray:
        return np.rint((np.asarray(lat, dtype=float) - self.lat0) / self.dlat).astype(int)

    def col_of(self, lon) -> np.ndarray:
        offset = (np.asarray(lon, dtype=float) - self.lon0) % 360.0
        if self.is_global:
            return np.rint(offset / self.dlon).astype(int) % self.nlon
        # split the uncovered arc: points west of lon0 get negative columns
        span = (self.nlon - 1) * self.dlon
        offset = np.where(offset > span + (360.0 - span) / 2.0, offset - 360.0, offset)
        return np.rint(offset / self.dlon).astype(int)

    def index_of(self, lat, lon) -> tuple[np.ndarray, np.ndarray]:
        """Nearest gridpoint (row, col); may fall outside the grid."""
        return self.row_of(lat), self.col_of(lon)

    def contains_index(self, row, col) -> np.ndarray:
        row = np.asarray(row)
        col = np.asarray(col)
        return (row >= 0) & (row < self.nlat) & (col >= 0) & (col < self.nlon)

    def subset(self, region: "Region") -> tuple[slice, slice]:
        """Row/column slices of the gridpoints inside ``region``."""
        rows = np.nonzero(region.contains_lat(self.lats))[0]
        cols = np.nonzero(region.contains_lon(self.lons))[0]
        if rows.size == 0 or cols.size == 0:
            raise ValueError(f"region {region} encloses no gridpoint")
        if np.any(np.diff(cols) != 1):
            raise ValueError("region longitudes are not contiguous on this grid")
        return slice(rows[0], rows[-1] + 1), slice(cols[0], cols[-1] + 1)

    def subgrid(self, rows: slice, cols: slice) -> "GridSpec":
        r0 = rows.start or 0
        c0 = cols.start or 0
        r1 = self.nlat if rows.stop is None else rows.stop
        c1 = self.nlon if cols.stop is None else cols.stop
        return GridSpec(
            lat0=self.lat0 + r0 * self.dlat,
            lon0=self.lon0 + c0 * self.dlon,
            dlat=self.dlat,
            dlon=self.dlon,
            nlat=r1 - r0,
            nlon=c1 - c0,
        )


@dataclass(frozen=True)
class Region:
    """Rectangular lat/lon box; bounds are inclusive.

    ``lon_min > lon_max`` denotes a box that crosses the antimeridian.
    """

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not self.lat_min < self.lat_max:
            raise ValueError("lat_min must be below lat_max")

    def contains_lat(self, lat) -> np.ndarray:
        lat = np.asarray(lat, dtype=float)
        eps = 1e-9
        return (lat >= self.lat_min - eps) & (lat <= self.lat_max + eps)

    def contains_lon(self, lon) -> np.ndarray:
        eps = 1e-9
        lon = wrap_lon(lon)
        lo = wrap_lon(self.lon_min)
        hi = wrap_lon(self.lon_max)
        if self.lon_max - self.lon_min >= 360.0:
            return np.ones(np.shape(lon), dtype=bool)
        if lo <= hi:
            return (lon >= lo - eps) & (lon <= hi + eps)
        return (lon >= lo - eps) | (lon <= hi + eps)

    def contains(self, lat, lon) -> np.ndarray:
        return self.contains_lat(lat) & self.contains_lon(lon)

    def mask(self, spec: GridSpec) -> np.ndarray:
        return self.contains_lat(spec.lats)[:, None] & self.contains_lon(spec.lons)[None, :]

    def as_dict(self) -> dict:
        return {
            "lat_min": self.lat_min,
            "lat_max": self.lat_max,
            "lon_min": self.lon_min,
            "lon_max": self.lon_max,
        }


@dataclass(frozen=True)
class FieldCube:
    """One physical variable on a (time, level, lat, lon) grid.

    ``times`` are ``datetime64[s]`` UTC instants. ``levels`` holds pressure
    levels in hPa, or is empty for single-level fields (``nlevel`` = 1).
    """

    variable: str
    units: str
    spec: GridSpec
    times: np.ndarray
    values: np.ndarray
    levels: np.ndarray = field(default_factory=lambda: np.empty(0))
    fill_value: float | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype="datetime64[s]").reshape(-1)
        levels = np.asarray(self.levels, dtype=float).reshape(-1)
        values = np.asarray(self.values)
        if values.ndim == 3:
            values = values[:, None, :, :]
        nlevel = max(1, levels.size)
        expected = (times.size, nlevel, self.spec.nlat, self.spec.nlon)
        if values.shape != expected:
            raise ValueError(f"values shape {values.shape} does not match {expected}")
        if times.size > 1 and np.any(np.diff(times) <= np.timedelta64(0, "s")):
            raise ValueError("times must be strictly increasing")
        if levels.size > 1 and np.any(np.diff(levels) >= 0):
            raise ValueError("pressure levels must be strictly descending")
        if self.fill_value is None and np.issubdtype(values.dtype, np.floating) and np.isnan(values).any():
            raise ValueError("NaN values require a declared fill_value")
        values = values.copy()
        values.setflags(write=False)
        times.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", values)

    @property
    def ntime(self) -> int:
        return self.times.size

    @property
    def nlevel(self) -> int:
        return self.values.shape[1]

    def field2d(self, time_index: int = 0, level_index: int = 0) -> np.ndarray:
        return np.asarray(self.values[time_index, level_index], dtype=float)

    def surface(self) -> np.ndarray:
        """(time, lat, lon) view of a single-level cube as float64."""
        return np.asarray(self.values[:, 0], dtype=float)

    def level_index(self, level_hpa: float) -> int:
        hits = np.nonzero(np.isclose(self.levels, level_hpa))[0]
        if hits.size == 0:
            raise KeyError(f"level {level_hpa} hPa not present in {self.variable}")
        return int(hits[0])

    def cadence_seconds(self) -> int | None:
        if self.ntime < 2:
            return None
        steps = np.diff(self.times).astype(np.int64)
        if np.any(steps != steps[0]):
            return None
        return int(steps[0])

    def subset_region(self, region: Region) -> "FieldCube":
        rows, cols = self.spec.subset(region)
        return FieldCube(
            variable=self.variable,
            units=self.units,
            spec=self.spec.subgrid(rows, cols),
            times=self.times,
            values=self.values[:, :, rows, cols],
            levels=self.levels,
            fill_value=self.fill_value,
        )

    def subset_times(self, start, end) -> "FieldCube":
        start = np.datetime64(start, "s")
        end = np.datetime64(end, "s")
        keep = (self.times >= start) & (self.times <= end)
        return FieldCube(
            variable=self.variable,
            units=self.units,
            spec=self.spec,
            times=self.times[keep],
            values=self.values[keep],
            levels=self.levels,
            fill_value=self.fill_value,
        )


@dataclass(frozen=True)
class LandMask:
    spec: GridSpec
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != self.spec.shape:
            raise ValueError(f"mask shape {mask.shape} does not match grid {self.spec.shape}")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    def is_land(self, lat, lon) -> np.ndarray:
        """Nearest-cell lookup; points off the grid count as ocean."""
        row, col = self.spec.index_of(lat, lon)
        inside = self.spec.contains_index(row, col)
        out = np.zeros(np.shape(row), dtype=bool)
        out[inside] = self.mask[np.asarray(row)[inside], np.asarray(col)[inside]]
        return out

    def subset(self, rows: slice, cols: slice) -> "LandMask":
        return LandMask(self.spec.subgrid(rows, cols), self.mask[rows, cols])

    def without_small_features(self, min_cells: int = 4) -> "LandMask":
        """Drop land components smaller than ``min_cells`` (atolls, skerries)."""
        labels, sizes = connected_components(self.mask, connectivity=8, spec=self.spec)
        keep = np.concatenate([[False], sizes >= min_cells])
        return LandMask(self.spec, keep[labels])


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance on a sphere of radius 6371 km."""
    phi1 = np.deg2rad(lat1)
    phi2 = np.deg2rad(lat2)
    dphi = phi2 - phi1
    dlam = np.deg2rad(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    h = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlam / 2.0) ** 2
    d = 2.0 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    if np.ndim(d) == 0:
        return float(d)
    return d


def great_circle_degrees(lat1, lon1, lat2, lon2):
    """Central angle between two points, in degrees."""
    return np.rad2deg(np.asarray(haversine_km(lat1, lon1, lat2, lon2)) / EARTH_RADIUS_KM)


def destination_point(lat, lon, bearing_deg, distance_deg):
    """Point reached from (lat, lon) along ``bearing_deg`` after ``distance_deg`` of arc."""
    phi1 = np.deg2rad(lat)
    lam1 = np.deg2rad(lon)
    theta = np.deg2rad(bearing_deg)
    delta = np.deg2rad(distance_deg)
    sin_phi2 = np.sin(phi1) * np.cos(delta) + np.cos(phi1) * np.sin(delta) * np.cos(theta)
    phi2 = np.arcsin(np.clip(sin_phi2, -1.0, 1.0))
    lam2 = lam1 + np.arctan2(
        np.sin(theta) * np.sin(delta) * np.cos(phi1),
        np.cos(delta) - np.sin(phi1) * sin_phi2,
    )
    return np.rad2deg(phi2), wrap_lon(np.rad2deg(lam2))


def cell_area_km2(lat, spec: GridSpec):
    """Area of a grid cell centred at ``lat``: R² dφ dλ cos φ."""
    lat = np.asarray(lat, dtype=float)
    coslat = np.cos(np.deg2rad(lat))
    coslat = np.where(np.abs(lat) >= 90.0, 0.0, np.clip(coslat, 0.0, None))
    area = EARTH_RADIUS_KM**2 * np.deg2rad(spec.dlat) * np.deg2rad(spec.dlon) * coslat
    if np.ndim(area) == 0:
        return float(area)
    return area


def cell_areas(spec: GridSpec) -> np.ndarray:
    """(nlat, nlon) array of cell areas in km²."""
    return np.broadcast_to(cell_area_km2(spec.lats, spec)[:, None], spec.shape)


def _union_find_root(parent: np.ndarray, a: int) -> int:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def connected_components(
    mask: np.ndarray,
    connectivity: int = 8,
    spec: GridSpec | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Label connected regions of a boolean grid.

    Labels are 1..n numbered in raster order of each component's first cell;
    0 marks background. When ``spec`` spans the globe the first and last
    columns are treated as neighbours.

    Returns:
        ``(labels, sizes)`` where ``sizes[k - 1]`` is the cell count of label k.
    """
    mask = np.asarray(mask, dtype=bool)
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    structure = ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)
    labels, n = ndimage.label(mask, structure=structure)
    if n == 0:
        return labels, np.zeros(0, dtype=np.int64)

    if spec is not None and spec.is_global and mask.shape[1] > 2:
        parent = np.arange(n + 1)
        west = labels[:, 0]
        east = labels[:, -1]
        offsets = (0,) if connectivity == 4 else (-1, 0, 1)
        nrow = mask.shape[0]
        for off in offsets:
            lo = max(0, -off)
            hi = nrow - max(0, off)
            a = west[lo:hi]
            b = east[lo + off:hi + off]
            both = (a > 0) & (b > 0)
            for la, lb in zip(a[both], b[both]):
                ra = _union_find_root(parent, int(la))
                rb = _union_find_root(parent, int(lb))
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
        roots = np.array([_union_find_root(parent, k) for k in range(n + 1)])
        labels = roots[labels]

    # renumber by first raster occurrence
    flat = labels.ravel()
    present = flat > 0
    uniq, first = np.unique(flat[present], return_index=True)
    order = np.argsort(np.nonzero(present)[0][first], kind="stable")
    lut = np.zeros(int(flat.max()) + 1, dtype=np.int64)
    lut[uniq[order]] = np.arange(1, uniq.size + 1)
    labels = lut[labels]
    sizes = np.bincount(labels.ravel(), minlength=uniq.size + 1)[1:]
    return labels, sizes


def laplacian(
    field: np.ndarray,
    spec: GridSpec | None = None,
    metric: str = "index",
) -> np.ndarray:
    """Five-point Laplacian of a 2-D field.

    Edges replicate the nearest interior value; on global grids the longitude
    axis wraps instead.

    Args:
        field: (nlat, nlon) array.
        spec: grid description; required for the physical metrics and for
            longitude wrapping.
        metric: ``"index"`` divides by one gridpoint squared; ``"km"`` and
            ``"m"`` use the physical spacing, with the zonal spacing shrinking
            as cos(latitude) row by row.
    """
    f = np.asarray(field, dtype=float)
    if f.ndim != 2 or f.shape[0] < 3 or f.shape[1] < 3:
        raise ValueError("laplacian needs a 2-D grid of at least 3x3")
    lon_mode = "wrap" if spec is not None and spec.is_global else "edge"
    padded = np.pad(f, ((1, 1), (0, 0)), mode="edge")
    padded = np.pad(padded, ((0, 0), (1, 1)), mode=lon_mode)
    centre = padded[1:-1, 1:-1]
    d2y = padded[2:, 1:-1] - 2.0 * centre + padded[:-2, 1:-1]
    d2x = padded[1:-1, 2:] - 2.0 * centre + padded[1:-1, :-2]
    if metric == "index":
        return d2x + d2y
    if spec is None:
        raise ValueError("physical metrics need a GridSpec")
    scale = {"km": EARTH_RADIUS_KM, "m": EARTH_RADIUS_KM * 1000.0}[metric]
    dy = scale * np.deg2rad(spec.dlat)
    dx = scale * np.deg2rad(spec.dlon) * np.cos(np.deg2rad(spec.lats))
    dx = np.maximum(dx, 1e-12 * scale)[:, None]
    return d2x / dx**2 + d2y / dy**2


def _weighted_center(lat: np.ndarray, lon: np.ndarray, w: np.ndarray) -> tuple[float, float]:
    total = w.sum()
    if not total > 0:
        raise ValueError("center_of_mass needs at least one positive cell")
    lam = np.deg2rad(lon)
    s = float((w * np.sin(lam)).sum())
    c = float((w * np.cos(lam)).sum())
    return float((w * lat).sum() / total), float(wrap_lon(np.rad2deg(np.arctan2(s, c))))


def center_of_mass(
    weights: np.ndarray,
    spec: GridSpec,
    area_weighted: bool = True,
) -> tuple[float, float]:
    """Weighted centre of a mask or weight grid.

    Latitude is an ordinary weighted mean; longitude is a circular mean so
    that blobs straddling the antimeridian stay together.
    """
    w = np.asarray(weights, dtype=float)
    if w.shape != spec.shape:
        raise ValueError("weights do not match grid")
    rows, cols = np.nonzero(w > 0)
    return center_of_cells(rows, cols, spec, w[rows, cols], area_weighted)


def center_of_cells(rows, cols, spec: GridSpec, weights=None, area_weighted: bool = True) -> tuple[float, float]:
    """:func:`center_of_mass` for a sparse set of cells given by index."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    w = np.ones(rows.shape) if weights is None else np.asarray(weights, dtype=float)
    lat = spec.lats[rows]
    if area_weighted:
        w = w * cell_area_km2(lat, spec)
    return _weighted_center(lat, spec.lons[cols], w)


def nearest_indices(spec: GridSpec, lats: Sequence[float], lons: Sequence[float]):
    """Vectorised nearest-gridpoint lookup returning (rows, cols, inside)."""
    rows, cols = spec.index_of(np.asarray(lats, dtype=float), np.asarray(lons, dtype=float))
    return rows, cols, spec.contains_index(rows, cols)


def mask_bounds(mask: np.ndarray, spec: GridSpec) -> Region | None:
    """Smallest box holding every True cell centre, or None for an empty mask.

    On global grids the box starts after the widest empty longitude arc, so
    it may cross the antimeridian. A box one cell tall or wide is padded by
    half a cell on each side to keep its bounds strictly ordered.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != spec.shape:
        raise ValueError("mask does not match grid")
    rows = np.nonzero(mask.any(axis=1))[0]
    if rows.size == 0:
        return None
    occupied = np.nonzero(mask.any(axis=0))[0]
    lons = spec.lons_unwrapped
    if spec.is_global and occupied.size > 1:
        gaps = np.diff(np.concatenate([occupied, [occupied[0] + spec.nlon]]))
        k = int(np.argmax(gaps))
        lon_min, lon_max = lons[occupied[(k + 1) % occupied.size]], lons[occupied[k]]
    else:
        lon_min, lon_max = lons[occupied[0]], lons[occupied[-1]]
    lat_min, lat_max = float(spec.lats[rows[0]]), float(spec.lats[rows[-1]])
    if lat_min == lat_max:
        lat_min, lat_max = lat_min - 0.5 * spec.dlat, lat_max + 0.5 * spec.dlat
    if occupied.size == 1:
        lon_min, lon_max = lon_min - 0.5 * spec.dlon, lon_max + 0.5 * spec.dlon
    return Region(lat_min, lat_max, float(wrap_lon(lon_min)), float(wrap_lon(lon_max)))
