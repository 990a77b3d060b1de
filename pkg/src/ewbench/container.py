"""Reader and writer for the EWB container format.

A container is a JSON header ``<name>.json`` plus a raw payload of
little-endian float32 values in row-major (time, level, lat, lon) order::

    {"variable": "t2m", "units": "K", "nlat": 2, "nlon": 2, "ntime": 1,
     "nlevel": 1, "lat0": 40.0, "lon0": -100.0, "dlat": 0.25, "dlon": 0.25,
     "times": ["2021-06-27T00:00:00Z"], "levels_hPa": [],
     "payload": "t2m.f32"}

``fill_value`` is optional; payload entries equal to it load as NaN and NaN
is written back as the fill value.
"""

from __future__ import annotations

import json
import math
import os
from pathlib import Path

import numpy as np

from .grid import FieldCube, GridSpec, LandMask

REQUIRED_FIELDS = (
    "variable",
    "units",
    "nlat",
    "nlon",
    "ntime",
    "nlevel",
    "lat0",
    "lon0",
    "dlat",
    "dlon",
    "times",
    "levels_hPa",
    "payload",
)
OPTIONAL_FIELDS = ("fill_value",)

_PAYLOAD_DTYPE = np.dtype("<f4")


class ContainerError(ValueError):
    """Malformed header or payload."""


def format_time(t) -> str:
    return str(np.datetime_as_string(np.datetime64(t, "s"), unit="s")) + "Z"


def parse_time(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    elif text.endswith("+00:00"):
        text = text[:-6]
    try:
        return np.datetime64(text, "s")
    except ValueError as exc:
        raise ContainerError(f"bad ISO-8601 time {text!r}") from exc


def _header_path(path) -> Path:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    return path


def load_cube(path) -> FieldCube:
    """Read a container, checking the header against the payload.

    Raises:
        ContainerError: missing or unknown header fields, payload length
            mismatch, bad times, or non-monotone time axis.
    """
    header_path = _header_path(path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ContainerError(f"{header_path}: header is not valid JSON") from exc
    if not isinstance(header, dict):
        raise ContainerError(f"{header_path}: header must be a JSON object")
    missing = [k for k in REQUIRED_FIELDS if k not in header]
    if missing:
        raise ContainerError(f"{header_path}: missing header fields {missing}")
    unknown = sorted(set(header) - set(REQUIRED_FIELDS) - set(OPTIONAL_FIELDS))
    if unknown:
        raise ContainerError(f"{header_path}: unknown header fields {unknown}")

    try:
        nlat, nlon, ntime, nlevel = (int(header[k]) for k in ("nlat", "nlon", "ntime", "nlevel"))
        spec = GridSpec(
            lat0=float(header["lat0"]),
            lon0=float(header["lon0"]),
            dlat=float(header["dlat"]),
            dlon=float(header["dlon"]),
            nlat=nlat,
            nlon=nlon,
        )
    except (TypeError, ValueError) as exc:
        raise ContainerError(f"{header_path}: invalid grid description: {exc}") from exc
    if ntime < 1 or nlevel < 1:
        raise ContainerError(f"{header_path}: ntime and nlevel must be positive")

    times = np.array([parse_time(t) for t in header["times"]], dtype="datetime64[s]")
    if times.size != ntime:
        raise ContainerError(f"{header_path}: {times.size} times listed, header says {ntime}")
    if ntime > 1 and np.any(np.diff(times) <= np.timedelta64(0, "s")):
        raise ContainerError(f"{header_path}: time axis is not strictly increasing")
    levels = np.asarray(header["levels_hPa"], dtype=float)
    if levels.size not in (0, nlevel) or (levels.size == 0 and nlevel != 1):
        raise ContainerError(f"{header_path}: {levels.size} levels listed, header says {nlevel}")

    payload_path = header_path.parent / header["payload"]
    raw = np.fromfile(payload_path, dtype=_PAYLOAD_DTYPE)
    expected = ntime * nlevel * nlat * nlon
    if raw.size != expected or payload_path.stat().st_size != expected * 4:
        raise ContainerError(
            f"{payload_path}: payload holds {raw.size} values, header declares {expected}"
        )
    values = raw.reshape(ntime, nlevel, nlat, nlon)
    fill = header.get("fill_value")
    if fill is not None:
        values = np.where(values == np.float32(fill), np.float32(np.nan), values)
    elif np.isnan(values).any():
        raise ContainerError(f"{payload_path}: NaN in payload without a fill_value")

    try:
        return FieldCube(
            variable=str(header["variable"]),
            units=str(header["units"]),
            spec=spec,
            times=times,
            values=values,
            levels=levels,
            fill_value=None if fill is None else float(fill),
        )
    except ValueError as exc:
        raise ContainerError(f"{header_path}: {exc}") from exc


def write_cube(cube: FieldCube, path) -> Path:
    """Write ``cube`` as ``<path>.json`` + ``<path>.f32``; returns the header path."""
    header_path = _header_path(path)
    header_path.parent.mkdir(parents=True, exist_ok=True)
    payload_name = header_path.with_suffix(".f32").name
    spec = cube.spec
    header = {
        "variable": cube.variable,
        "units": cube.units,
        "nlat": spec.nlat,
        "nlon": spec.nlon,
        "ntime": cube.ntime,
        "nlevel": cube.nlevel,
        "lat0": float(spec.lat0),
        "lon0": float(spec.lon0),
        "dlat": float(spec.dlat),
        "dlon": float(spec.dlon),
        "times": [format_time(t) for t in cube.times],
        "levels_hPa": [float(x) for x in cube.levels],
    }
    if cube.fill_value is not None:
        header["fill_value"] = float(cube.fill_value)
    header["payload"] = payload_name
    for key in ("lat0", "lon0", "dlat", "dlon"):
        if not math.isfinite(header[key]):
            raise ContainerError(f"{key} must be finite")

    payload = np.ascontiguousarray(cube.values, dtype=_PAYLOAD_DTYPE)
    if cube.fill_value is not None:
        payload = np.where(np.isnan(payload), np.float32(cube.fill_value), payload).astype(_PAYLOAD_DTYPE)
    tmp = header_path.with_suffix(".f32.tmp")
    payload.tofile(tmp)
    os.replace(tmp, header_path.with_suffix(".f32"))
    header_path.write_text(json.dumps(header, indent=2) + "\n", encoding="utf-8")
    return header_path


def load_landmask(path) -> LandMask:
    """Land mask stored as a single-time, single-level container (1 = land)."""
    cube = load_cube(path)
    return LandMask(cube.spec, cube.values[0, 0] > 0.5)


def write_landmask(mask: LandMask, path, time="2000-01-01T00:00:00") -> Path:
    cube = FieldCube(
        variable="land_mask",
        units="1",
        spec=mask.spec,
        times=np.array([np.datetime64(time, "s")]),
        values=mask.mask.astype(np.float32)[None, None],
    )
    return write_cube(cube, path)
