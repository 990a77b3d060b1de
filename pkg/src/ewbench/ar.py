"""Integrated vapour transport and atmospheric-river object detection.

IVT is integrated from the lowest supplied level up to 200 hPa. AR objects
are 8-connected groups of high-IVT gridpoints that sit near a strong IVT
curvature signal, are large enough, and are centred outside the tropics.
Each object records where it overlaps land, which drives the landfall
products.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .container import format_time, parse_time
from .grid import (
    FieldCube,
    GridSpec,
    LandMask,
    Region,
    center_of_cells,
    connected_components,
    haversine_km,
    laplacian,
    mask_bounds,
)
from .metrics import iou

GRAVITY = 9.80665
TOP_LEVEL_HPA = 200.0


@dataclass(frozen=True)
class IvtField:
    """IVT at one valid time, kg m⁻¹ s⁻¹.

    The components keep the sign of the moisture flux (eastward and
    northward positive); ``ivt`` is their magnitude.
    """

    spec: GridSpec
    time: np.datetime64
    ivt_u: np.ndarray
    ivt_v: np.ndarray
    ivt: np.ndarray = field(init=False)

    def __post_init__(self):
        u = np.asarray(self.ivt_u, dtype=float)
        v = np.asarray(self.ivt_v, dtype=float)
        if u.shape != self.spec.shape or v.shape != self.spec.shape:
            raise ValueError("IVT components do not match grid")
        object.__setattr__(self, "time", np.datetime64(self.time, "s"))
        object.__setattr__(self, "ivt_u", u)
        object.__setattr__(self, "ivt_v", v)
        object.__setattr__(self, "ivt", np.hypot(u, v))

    @classmethod
    def from_magnitude(cls, spec: GridSpec, time, ivt: np.ndarray) -> "IvtField":
        """Field with all transport in the eastward component."""
        ivt = np.asarray(ivt, dtype=float)
        if np.any(ivt < 0):
            raise ValueError("IVT magnitude must be non-negative")
        return cls(spec, time, ivt, np.zeros_like(ivt))


def _check_profile_cubes(q: FieldCube, u: FieldCube, v: FieldCube) -> None:
    for other in (u, v):
        if other.spec != q.spec:
            raise ValueError("humidity and wind grids differ")
        if other.levels.shape != q.levels.shape or np.any(other.levels != q.levels):
            raise ValueError("humidity and wind level axes differ")
        if other.times.shape != q.times.shape or np.any(other.times != q.times):
            raise ValueError("humidity and wind time axes differ")


def _trapezoid_weights(levels_hpa: np.ndarray) -> np.ndarray:
    """Per-level weights (Pa) so that sum(w * f) is the trapezoid integral."""
    p = levels_hpa * 100.0
    dp = p[:-1] - p[1:]
    w = np.zeros_like(p)
    w[:-1] += 0.5 * dp
    w[1:] += 0.5 * dp
    return w


def compute_ivt(q: FieldCube, u: FieldCube, v: FieldCube, time_index: int = 0) -> IvtField:
    """IVT from specific humidity (kg/kg) and winds (m/s) on pressure levels.

    Levels must descend from the surface; levels above 200 hPa are ignored.

    Raises:
        ValueError: mismatched axes, or fewer than three levels up to 200 hPa.
    """
    _check_profile_cubes(q, u, v)
    levels = q.levels
    if levels.size < 3:
        raise ValueError("IVT needs at least three pressure levels")
    keep = levels >= TOP_LEVEL_HPA
    if keep.sum() < 3:
        raise ValueError("IVT needs at least three pressure levels at or below 200 hPa")
    w = _trapezoid_weights(levels[keep])[:, None, None]
    qk = q.values[time_index, keep].astype(float)
    ivt_u = (w * qk * u.values[time_index, keep]).sum(axis=0) / GRAVITY
    ivt_v = (w * qk * v.values[time_index, keep]).sum(axis=0) / GRAVITY
    return IvtField(q.spec, q.times[time_index], ivt_u, ivt_v)


def ivt_series(q: FieldCube, u: FieldCube, v: FieldCube) -> list[IvtField]:
    """:func:`compute_ivt` at every valid time."""
    return [compute_ivt(q, u, v, k) for k in range(q.ntime)]


@dataclass(frozen=True)
class ArParams:
    ivt_threshold: float = 400.0
    laplacian_threshold: float = 2.5
    laplacian_search_radius: float = 8.0
    min_points: int = 500
    tropics_exclusion_lat: float = 20.0
    laplacian_metric: str = "index"

    def __post_init__(self):
        for name in ("ivt_threshold", "laplacian_threshold", "laplacian_search_radius", "min_points", "tropics_exclusion_lat"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ArObject:
    """One detected AR at one valid time.

    Members are flat raster indices into ``spec``; ``land_members`` is the
    subset over land.
    """

    object_id: str
    time: np.datetime64
    spec: GridSpec
    members: np.ndarray
    land_members: np.ndarray
    center: tuple[float, float]
    land_center: tuple[float, float] | None

    @property
    def size(self) -> int:
        return int(self.members.size)

    def _to_mask(self, flat: np.ndarray) -> np.ndarray:
        m = np.zeros(self.spec.nlat * self.spec.nlon, dtype=bool)
        m[flat] = True
        return m.reshape(self.spec.shape)

    @property
    def mask(self) -> np.ndarray:
        return self._to_mask(self.members)

    @property
    def land_mask(self) -> np.ndarray:
        return self._to_mask(self.land_members)

    @property
    def intersects_land(self) -> bool:
        return self.land_members.size > 0

    def bbox(self) -> Region:
        """Smallest box of member cell centres; may cross the antimeridian."""
        return mask_bounds(self.mask, self.spec)


def _land_on_grid(landmask: LandMask | None, spec: GridSpec) -> np.ndarray:
    if landmask is None:
        return np.zeros(spec.shape, dtype=bool)
    if landmask.spec == spec:
        return landmask.mask
    lat2d, lon2d = spec.mesh()
    return landmask.is_land(lat2d, lon2d)


def near_strong_curvature(ivt: np.ndarray, spec: GridSpec, params: ArParams) -> np.ndarray:
    """Points within the search radius of a point with |∇²IVT| over threshold.

    Distances are Euclidean in gridpoint units; on global grids the search
    wraps across the antimeridian.
    """
    lap = laplacian(ivt, spec, metric=params.laplacian_metric)
    strong = np.abs(lap) >= params.laplacian_threshold
    if not strong.any():
        return strong
    pad = int(np.ceil(params.laplacian_search_radius))
    wrap = spec.is_global and pad > 0
    if wrap:
        strong = np.pad(strong, ((0, 0), (pad, pad)), mode="wrap")
    dist = ndimage.distance_transform_edt(~strong)
    near = dist <= params.laplacian_search_radius
    if wrap:
        near = near[:, pad:-pad]
    return near


def ar_candidates(field: IvtField, params: ArParams) -> np.ndarray:
    """Boolean mask of points meeting both the IVT and the curvature condition."""
    return (field.ivt >= params.ivt_threshold) & near_strong_curvature(field.ivt, field.spec, params)


def detect_ar_objects(
    field: IvtField,
    params: ArParams = ArParams(),
    landmask: LandMask | None = None,
) -> list[ArObject]:
    """AR objects at one valid time, in raster order of their first cell."""
    spec = field.spec
    candidates = ar_candidates(field, params)
    labels, sizes = connected_components(candidates, connectivity=8, spec=spec)
    big = np.nonzero(sizes >= params.min_points)[0] + 1
    if big.size == 0:
        return []
    land = _land_on_grid(landmask, spec).ravel()
    flat_labels = labels.ravel()
    order = np.argsort(flat_labels, kind="stable")
    bounds = np.searchsorted(flat_labels[order], np.arange(1, sizes.size + 2))
    stamp = str(np.datetime_as_string(field.time, unit="h")).replace("-", "").replace("T", "")

    objects = []
    for k in big:
        members = np.sort(order[bounds[k - 1]:bounds[k]])
        rows, cols = np.divmod(members, spec.nlon)
        center = center_of_cells(rows, cols, spec)
        if abs(center[0]) < params.tropics_exclusion_lat:
            continue
        land_members = members[land[members]]
        land_center = None
        if land_members.size:
            lr, lc = np.divmod(land_members, spec.nlon)
            land_center = center_of_cells(lr, lc, spec)
        objects.append(
            ArObject(
                object_id=f"AR{stamp}-{len(objects) + 1:03d}",
                time=field.time,
                spec=spec,
                members=members,
                land_members=land_members,
                center=center,
                land_center=land_center,
            )
        )
    return objects


class ArLeadTime(NamedTuple):
    """Lead of an AR landfall signal; ``lead_hours`` is None when there is no signal."""

    lead_hours: float | None
    forecast_first_land: np.datetime64 | None
    target_first_land: np.datetime64 | None


def _first_land_time(objects: Mapping, region: Region | None) -> np.datetime64 | None:
    for t in sorted(objects, key=lambda x: np.datetime64(x, "s")):
        for obj in objects[t]:
            land = obj.land_mask
            if region is not None:
                land = land & region.mask(obj.spec)
            if land.any():
                return np.datetime64(t, "s")
    return None


def ar_landfall_lead_time(
    forecast_objects: Mapping,
    target_objects: Mapping,
    init_time,
    region: Region | None = None,
) -> ArLeadTime:
    """Lead between forecast initialisation and the target's first landfall.

    Both mappings are valid time -> list of :class:`ArObject`. The forecast
    has a signal when any of its objects overlaps land (inside ``region``
    when given) at any valid time; the lead is then the target's first land
    time minus ``init_time``.

    Raises:
        ValueError: empty target sequence, or an initialisation at or after
            the target landfall.
    """
    if not target_objects:
        raise ValueError("empty target sequence")
    init = np.datetime64(init_time, "s")
    target_first = _first_land_time(target_objects, region)
    if target_first is None:
        return ArLeadTime(None, None, None)
    if init >= target_first:
        raise ValueError("forecast initialised at or after the target landfall")
    forecast_first = _first_land_time(forecast_objects, region)
    if forecast_first is None:
        return ArLeadTime(None, None, target_first)
    lead = (target_first - init) / np.timedelta64(1, "h")
    return ArLeadTime(float(lead), forecast_first, target_first)


class ArComparison(NamedTuple):
    displacement_km: float | None
    iou: float | None


def ar_displacement_and_iou(forecast: ArObject, target: ArObject) -> ArComparison:
    """Landfall displacement and overlap of two AR objects on the same grid.

    Both values are None when either object misses land.
    """
    if forecast.spec != target.spec:
        raise ValueError("AR objects are on different grids")
    if forecast.land_center is None or target.land_center is None:
        return ArComparison(None, None)
    d = float(haversine_km(*forecast.land_center, *target.land_center))
    return ArComparison(d, iou(forecast.land_mask, target.land_mask))


def union_mask(objects: Iterable[ArObject], spec: GridSpec, land_only: bool = False) -> np.ndarray:
    """Union of object members (or their land parts) as a grid mask."""
    out = np.zeros(spec.shape, dtype=bool)
    for obj in objects:
        out |= obj.land_mask if land_only else obj.mask
    return out


def run_length_encode(flat: np.ndarray) -> list[list[int]]:
    """Sorted flat indices -> [[start, length], ...]."""
    flat = np.asarray(flat, dtype=np.int64)
    if flat.size == 0:
        return []
    breaks = np.nonzero(np.diff(flat) != 1)[0] + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [flat.size]])
    return [[int(flat[s]), int(e - s)] for s, e in zip(starts, ends)]


def run_length_decode(runs: Sequence[Sequence[int]]) -> np.ndarray:
    if not runs:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([np.arange(s, s + n, dtype=np.int64) for s, n in runs])


def ar_object_to_json(obj: ArObject) -> dict:
    box = obj.bbox()
    return {
        "id": obj.object_id,
        "time": format_time(obj.time),
        "size": obj.size,
        "center": list(obj.center),
        "land_center": None if obj.land_center is None else list(obj.land_center),
        "bbox": [box.lat_min, box.lat_max, box.lon_min, box.lon_max],
        "member_runlength_encoding": run_length_encode(obj.members),
        "land_runlength_encoding": run_length_encode(obj.land_members),
    }


def write_ar_objects(objects: Iterable[ArObject], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(ar_object_to_json(o)) + "\n" for o in objects), encoding="utf-8")
    return path


def read_ar_objects(path, spec: GridSpec) -> list[ArObject]:
    """Read objects written by :func:`write_ar_objects` on grid ``spec``."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        members = run_length_decode(rec["member_runlength_encoding"])
        if members.size != rec["size"]:
            raise ValueError(f"object {rec['id']}: size {rec['size']} but {members.size} encoded members")
        land_center = rec["land_center"]
        out.append(
            ArObject(
                object_id=rec["id"],
                time=parse_time(rec["time"]),
                spec=spec,
                members=members,
                land_members=run_length_decode(rec["land_runlength_encoding"]),
                center=tuple(rec["center"]),
                land_center=None if land_center is None else tuple(land_center),
            )
        )
    return out
