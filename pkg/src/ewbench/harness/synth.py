"""Synthetic cases with analytically known answers.

:func:`generate_synthetic` writes one kind of synthetic input in the
on-disk formats (containers, track and report CSV) plus ``truth.json`` with
the answers a correct detector must recover. :func:`write_identity_suite`
assembles a full catalog in which a ``perfect`` model's forecast equals the
target for every event type.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from ..climatology import N_DOY, N_HOURS, PercentileClimatology
from ..container import format_time, write_cube, write_landmask
from ..grid import FieldCube, GridSpec, LandMask, Region, great_circle_degrees
from ..severe import REPORT_TYPES, Report, compute_pph, write_reports
from ..synthetic import ivt_plume, vortex_fields
from ..tc import TcParams, find_candidates, stitch_tracks, write_tracks
from ..thermo import mixing_ratio_from_specific_humidity, mlcape_columns, weisman_klemp_sounding
from .catalog import CaseStudy, write_case
from .providers import init_dirname

STANDARD_LEVELS = np.array(
    [1000, 975, 950, 925, 900, 850, 800, 750, 700, 650, 600, 550, 500, 450, 400, 350, 300, 250, 200, 150, 100],
    dtype=float,
)
STEP = np.timedelta64(6, "h")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class _Param:
    default: Any
    low: float | None = None
    high: float | None = None


# Documented ranges; anything outside raises SynthError.
PARAMS: dict[str, dict[str, _Param]] = {
    "vortex": {
        "steps": _Param(12, 1, 40),
        "lat": _Param(18.0, -45.0, 45.0),
        "lon": _Param(-62.0, -180.0, 180.0),
        "dlat_step": _Param(0.5, -2.0, 2.0),
        "dlon_step": _Param(-1.0, -2.0, 2.0),
        "center_hpa": _Param(1000.0, 900.0, 1030.0),
        "depth_hpa": _Param(15.0, 1.0, 80.0),
        "vmax": _Param(25.0, 0.0, 90.0),
        "coast_lon": _Param(-70.3, -180.0, 180.0),
        "noise_hpa": _Param(0.0, 0.0, 2.0),
        "start": _Param("2022-09-25T00:00:00Z"),
    },
    "ar_plume": {
        "steps": _Param(8, 1, 40),
        "lat": _Param(40.0, 30.0, 50.0),
        "lon": _Param(-140.0, -150.0, -110.0),
        "dlon_step": _Param(2.0, -4.0, 4.0),
        "peak": _Param(800.0, 0.0, 3000.0),
        "coast_lon": _Param(-125.0, -160.0, -100.0),
        "noise": _Param(0.0, 0.0, 50.0),
        "start": _Param("2023-01-08T00:00:00Z"),
    },
    "heat_series": {
        "days": _Param(11, 6, 60),
        "peak_day": _Param(5, 2, 57),
        "amplitude": _Param(6.0, 0.5, 20.0),
        "slope_per_day": _Param(2.4, 0.1, 20.0),
        "sign": _Param(1, -1, 1),
        "noise": _Param(0.0, 0.0, 1.0),
        "start": _Param("2021-06-22T00:00:00Z"),
    },
    "sounding": {
        "times": _Param(5, 1, 40),
        "radius_deg": _Param(2.0, 0.25, 4.0),
        "u500": _Param(20.0, 0.0, 80.0),
        "start": _Param("2024-05-06T00:00:00Z"),
    },
    "reports": {
        "n": _Param(10, 0, 10000),
        "lat_min": _Param(33.0, -90.0, 90.0),
        "lat_max": _Param(37.0, -90.0, 90.0),
        "lon_min": _Param(-100.0, -180.0, 180.0),
        "lon_max": _Param(-94.0, -180.0, 180.0),
        "hours": _Param(24, 1, 720),
        "start": _Param("2024-05-06T12:00:00Z"),
    },
}
KINDS = tuple(PARAMS)


def resolve_params(kind: str, params: Mapping[str, Any] | None) -> dict[str, Any]:
    """Defaults for ``kind`` updated by ``params``; unknown keys and out-of-range values raise."""
    if kind not in PARAMS:
        raise SynthError(f"unknown kind {kind!r}; choose from {', '.join(KINDS)}")
    table = PARAMS[kind]
    out = {k: p.default for k, p in table.items()}
    for key, value in (params or {}).items():
        if key not in table:
            raise SynthError(f"{kind}: unknown parameter {key!r}")
        p = table[key]
        if isinstance(p.default, str):
            out[key] = str(value)
            continue
        try:
            value = type(p.default)(value)
        except (TypeError, ValueError) as exc:
            raise SynthError(f"{kind}.{key}: {value!r} is not a number") from exc
        if not (p.low <= value <= p.high):
            raise SynthError(f"{kind}.{key}={value} outside [{p.low}, {p.high}]")
        out[key] = value
    if kind == "reports" and not (out["lat_min"] < out["lat_max"] and out["lon_min"] < out["lon_max"]):
        raise SynthError("reports: box must have min < max")
    if kind == "heat_series" and out["sign"] == 0:
        raise SynthError("heat_series.sign must be +1 or -1")
    if kind == "heat_series" and out["peak_day"] >= out["days"] - 1:
        raise SynthError("heat_series.peak_day must leave a day after the peak")
    return out


def _t0(p) -> np.datetime64:
    return np.datetime64(str(p["start"]).rstrip("Z"), "s")


def _surface(name, units, spec, times, values) -> FieldCube:
    return FieldCube(name, units, spec, times, np.asarray(values, dtype=np.float32)[:, None])


def _write_truth(out: Path, truth: dict) -> dict:
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return truth


# vortex ------------------------------------------------------------------------

VORTEX_SPEC = GridSpec(10.0, -90.0, 0.25, 0.25, 101, 201)


def _vortex(out: Path, p: dict, rng: np.random.Generator) -> dict:
    spec = VORTEX_SPEC
    times = _t0(p) + np.arange(p["steps"]) * STEP
    centres = [(p["lat"] + k * p["dlat_step"], p["lon"] + k * p["dlon_step"]) for k in range(p["steps"])]
    fields = {n: [] for n in ("mslp", "z300", "z500", "u10", "v10")}
    for lat, lon in centres:
        f = vortex_fields(spec, lat, lon, center_hpa=p["center_hpa"], depth_hpa=p["depth_hpa"], vmax=p["vmax"])
        if p["noise_hpa"] > 0:
            f["mslp"] = f["mslp"] + rng.normal(0.0, p["noise_hpa"], spec.shape)
        for n in fields:
            fields[n].append(f[n])
    units = {"mslp": "hPa", "z300": "m", "z500": "m", "u10": "m s-1", "v10": "m s-1"}
    cubes = {n: _surface(n, units[n], spec, times, np.stack(v)) for n, v in fields.items()}
    for n, cube in cubes.items():
        write_cube(cube, out / f"{n}.json")
    _, lon2d = spec.mesh()
    write_landmask(LandMask(spec, lon2d < p["coast_lon"]), out / "landmask.json")

    # Candidates come from the float32 fields exactly as a reader would see them.
    cands = [
        find_candidates(*(np.asarray(cubes[n].values[k, 0], float) for n in ("mslp", "z300", "z500", "u10", "v10")), spec, t)
        for k, t in enumerate(times)
    ]
    tracks = stitch_tracks(cands, TcParams(), source="analysis")
    write_tracks(tracks, out / "tracks.csv")

    crossing = None
    for k in range(len(centres) - 1):
        (_, a), (_, b) = centres[k], centres[k + 1]
        if a >= p["coast_lon"] > b:
            frac = (a - p["coast_lon"]) / (a - b)
            crossing = format_time(times[k] + np.timedelta64(int(round(frac * 6 * 3600)), "s"))
            break
    return {
        "kind": "vortex",
        "times": [format_time(t) for t in times],
        "centers": [[lat, lon] for lat, lon in centres],
        "center_hpa": p["center_hpa"],
        "coast_lon": p["coast_lon"],
        "landfall_time": crossing,
        "tracker_tracks": len(tracks),
    }


# atmospheric river ---------------------------------------------------------------

AR_SPEC = GridSpec(25.0, -160.0, 0.25, 0.25, 121, 241)


def _ar_plume(out: Path, p: dict, rng: np.random.Generator) -> dict:
    spec = AR_SPEC
    times = _t0(p) + np.arange(p["steps"]) * STEP
    _, lon2d = spec.mesh()
    land = lon2d > p["coast_lon"]
    frames, areas, first_land = [], [], None
    for k, t in enumerate(times):
        ivt = ivt_plume(spec, p["lat"], p["lon"] + k * p["dlon_step"], peak=p["peak"])
        if p["noise"] > 0:
            ivt = np.abs(ivt + rng.normal(0.0, p["noise"], spec.shape))
        frames.append(ivt)
        above = ivt >= 400.0
        areas.append(int(above.sum()))
        if first_land is None and (above & land).any():
            first_land = format_time(t)
    write_cube(_surface("ivt", "kg m-1 s-1", spec, times, np.stack(frames)), out / "ivt.json")
    write_landmask(LandMask(spec, land), out / "landmask.json")
    return {
        "kind": "ar_plume",
        "times": [format_time(t) for t in times],
        "centers": [[p["lat"], p["lon"] + k * p["dlon_step"]] for k in range(len(times))],
        "points_above_400": areas,
        "first_land_time": first_land,
    }


# heat / freeze -------------------------------------------------------------------

HEAT_SPEC = GridSpec(40.0, -100.0, 0.25, 0.25, 4, 4)
CLIM85_K = 300.0
CLIM15_K = 270.0


def _heat_series(out: Path, p: dict, rng: np.random.Generator) -> dict:
    spec = HEAT_SPEC
    t0 = _t0(p).astype("datetime64[D]").astype("datetime64[s]")
    times = t0 + np.arange(p["days"] * 4) * STEP
    peak = t0 + np.timedelta64(p["peak_day"], "D") + np.timedelta64(12, "h")
    ddays = np.abs((times - peak) / np.timedelta64(1, "D"))
    anomaly = p["amplitude"] - p["slope_per_day"] * ddays
    heat = p["sign"] > 0
    base = CLIM85_K if heat else CLIM15_K
    values = base + p["sign"] * anomaly[:, None, None] * np.ones(spec.shape)
    if p["noise"] > 0:
        values = values + rng.normal(0.0, p["noise"], values.shape)
    write_cube(_surface("t2m", "K", spec, times, values), out / "t2m.json")
    clim_name, pct = ("clim85", 85.0) if heat else ("clim15", 15.0)
    clim = PercentileClimatology(spec, pct, np.full((N_DOY, N_HOURS) + spec.shape, base))
    write_cube(clim.to_cube(), out / f"{clim_name}.json")
    write_landmask(LandMask(spec, np.ones(spec.shape, bool)), out / "landmask.json")

    days = times.astype("datetime64[D]")
    event_days = sorted({str(d) for d, a in zip(days, anomaly) if a > 0})
    return {
        "kind": "heat_series",
        "event": "heat_wave" if heat else "freeze",
        "peak_time": format_time(peak),
        "event_days": event_days,
        "start": f"{event_days[0]}T00:00:00Z" if event_days else None,
        "end": format_time(np.datetime64(event_days[-1], "D") + np.timedelta64(1, "D")) if event_days else None,
        "run_days": len(event_days),
    }


# convective sounding -----------------------------------------------------------

SOUNDING_SPEC = GridSpec(30.0, -102.0, 0.25, 0.25, 41, 41)
SOUNDING_CENTER = (35.0, -97.0)


def wk_on_levels(levels=STANDARD_LEVELS) -> tuple[np.ndarray, np.ndarray]:
    """Weisman-Klemp temperature and specific humidity interpolated in ln p."""
    prof = weisman_klemp_sounding(z_top=18000.0)
    x = -np.log(prof.pressure)
    t = np.interp(-np.log(levels), x, prof.temperature)
    q = np.interp(-np.log(levels), x, prof.specific_humidity)
    return t, q


def _sounding(out: Path, p: dict, rng: np.random.Generator) -> dict:
    spec = SOUNDING_SPEC
    times = _t0(p) + np.arange(p["times"]) * STEP
    lat2d, lon2d = spec.mesh()
    disc = great_circle_degrees(lat2d, lon2d, *SOUNDING_CENTER) <= p["radius_deg"]
    t_in, q_in = wk_on_levels()
    # Exterior: dry isothermal column, no buoyancy anywhere.
    t_out, q_out = np.full(STANDARD_LEVELS.size, 280.0), np.full(STANDARD_LEVELS.size, 1e-6)
    t = np.where(disc[None], t_in[:, None, None], t_out[:, None, None])
    q = np.where(disc[None], q_in[:, None, None], q_out[:, None, None])
    k500 = int(np.nonzero(STANDARD_LEVELS == 500)[0][0])
    u = np.zeros_like(t)
    u[k500] = np.where(disc, p["u500"], 0.0)
    zeros3 = np.zeros((times.size, 1) + spec.shape, np.float32)

    def level_cube(name, units, col):
        vals = np.broadcast_to(col, (times.size,) + col.shape).astype(np.float32)
        return FieldCube(name, units, spec, times, vals, levels=STANDARD_LEVELS)

    write_cube(level_cube("t", "K", t), out / "t.json")
    write_cube(level_cube("q", "kg kg-1", q), out / "q.json")
    write_cube(level_cube("u", "m s-1", u), out / "u.json")
    write_cube(level_cube("v", "m s-1", np.zeros_like(t)), out / "v.json")
    write_cube(FieldCube("u10", "m s-1", spec, times, zeros3), out / "u10.json")
    write_cube(FieldCube("v10", "m s-1", spec, times, zeros3), out / "v10.json")

    cape = float(mlcape_columns(STANDARD_LEVELS, t_in.astype(np.float32).astype(float),
                                mixing_ratio_from_specific_humidity(q_in.astype(np.float32).astype(float))))
    return {
        "kind": "sounding",
        "center": list(SOUNDING_CENTER),
        "mlcape_center": cape,
        "cbss_center": cape * p["u500"],
        "severe_cells": int(disc.sum()) if cape * p["u500"] >= 15000.0 else 0,
    }


# storm reports ---------------------------------------------------------------------


def synthetic_reports(p: dict, rng: np.random.Generator) -> list[Report]:
    t0 = _t0(p)
    n = int(p["n"])
    lats = rng.uniform(p["lat_min"], p["lat_max"], n)
    lons = rng.uniform(p["lon_min"], p["lon_max"], n)
    secs = np.sort(rng.integers(0, int(p["hours"]) * 3600, n))
    kinds = rng.choice(np.array(REPORT_TYPES), n)
    return [
        Report(t0 + np.timedelta64(int(s), "s"), round(float(a), 4), round(float(o), 4), str(k))
        for s, a, o, k in zip(secs, lats, lons, kinds)
    ]


def _reports(out: Path, p: dict, rng: np.random.Generator) -> dict:
    reports = synthetic_reports(p, rng)
    write_reports(reports, out / "reports.csv")
    return {
        "kind": "reports",
        "n": len(reports),
        "by_type": {k: sum(r.type == k for r in reports) for k in REPORT_TYPES},
    }


_GENERATORS: dict[str, Callable[[Path, dict, np.random.Generator], dict]] = {
    "vortex": _vortex,
    "ar_plume": _ar_plume,
    "heat_series": _heat_series,
    "sounding": _sounding,
    "reports": _reports,
}


def generate_synthetic(kind: str, out_dir, params: Mapping[str, Any] | None = None, seed: int = 0) -> dict:
    """Write one synthetic input set to ``out_dir`` and return its truth record.

    The same ``kind``, ``params`` and ``seed`` always produce identical files.

    Raises:
        SynthError: unknown kind or parameter, or a value outside its range.
    """
    p = resolve_params(kind, params)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth = _GENERATORS[kind](out, p, np.random.default_rng(seed))
    truth["params"] = p
    truth["seed"] = seed
    return _write_truth(out, truth)


# identity suite ------------------------------------------------------------------------

PERFECT = "perfect"


def _copy_set(src: Path, dst: Path, names) -> None:
    dst.mkdir(parents=True, exist_ok=True)
    for n in names:
        shutil.copy2(src / f"{n}.json", dst / f"{n}.json")
        shutil.copy2(src / f"{n}.f32", dst / f"{n}.f32")


def _region_of(spec: GridSpec) -> Region:
    return Region(float(spec.lats[0]), float(spec.lats[-1]), float(spec.lons[0]), float(spec.lons[-1]))


def _parse(text: str) -> np.datetime64:
    return np.datetime64(text.rstrip("Z"), "s")


def _severe_identity(root: Path, case_id: str, kind: str, inits_back_h, expect: dict) -> CaseStudy:
    spec = SOUNDING_SPEC
    start = np.datetime64("2024-05-06T12:00:00", "s")
    end = start + np.timedelta64(24, "h")
    rp = resolve_params("reports", {"n": 6, "lat_min": 34.0, "lat_max": 36.0, "lon_min": -98.5, "lon_max": -95.5,
                                    "start": format_time(start), "hours": 24})
    reports = [r if r.type != "wind" else Report(r.time, r.lat, r.lon, "hail") for r in synthetic_reports(rp, np.random.default_rng(7))]
    tdir = root / "targets" / case_id
    tdir.mkdir(parents=True, exist_ok=True)
    write_reports(reports, tdir / "reports.csv")
    pph = compute_pph(reports, spec)
    covered = pph.probability >= 0.01
    times = start + np.arange(5) * STEP
    cbss = _surface("cbss", "m3 s-3", spec, times, np.where(covered, 20000.0, 0.0)[None].repeat(times.size, 0))
    for back in inits_back_h:
        write_cube(cbss, root / "forecasts" / PERFECT / case_id / init_dirname(start - np.timedelta64(back, "h")) / "cbss.json")
    case = CaseStudy(case_id, kind, _region_of(spec), start, end, label="synthetic")
    expect[case_id] = {"hits": len(reports)}
    if kind == "severe":
        expect[case_id]["early_signal_days"] = max(inits_back_h) / 24.0
    return case


def write_identity_suite(root) -> dict:
    """Catalog, targets and a ``perfect`` model for every event type.

    Layout under ``root``: ``catalog/``, ``targets/``, ``forecasts/perfect/``
    and ``expected.json`` with the answers that depend on construction
    (lead times, report hits). Returns that expected mapping.
    """
    root = Path(root)
    scratch = root / "_synth"
    cases: list[CaseStudy] = []
    expect: dict[str, dict] = {}

    def forecast_dir(case_id, init):
        return root / "forecasts" / PERFECT / case_id / init_dirname(init)

    # temperature: heat wave, freeze, marginal
    for case_id, kind, sign, clim in (
        ("heat-001", "heat_wave", 1, "clim85"),
        ("freeze-001", "freeze", -1, "clim15"),
        ("marginal-temp-001", "marginal_temp", 1, None),
    ):
        src = scratch / case_id
        truth = generate_synthetic("heat_series", src, {"sign": sign})
        tdir = root / "targets" / case_id
        _copy_set(src, tdir, ["t2m", "landmask"] + ([clim] if clim else []))
        start, end = _parse(truth["start"]), _parse(truth["end"])
        for back in (24, 48):
            _copy_set(src, forecast_dir(case_id, start - np.timedelta64(back, "h")), ["t2m"])
        cases.append(CaseStudy(case_id, kind, _region_of(HEAT_SPEC), start, end, label="synthetic"))
        expect[case_id] = {"lead_time_days": 0}

    # convective
    cases.append(_severe_identity(root, "severe-001", "severe", (24, 48, 72), expect))
    cases.append(_severe_identity(root, "marginal-severe-001", "marginal_severe", (24,), expect))

    # atmospheric river
    src = scratch / "ar-001"
    truth = generate_synthetic("ar_plume", src)
    _copy_set(src, root / "targets" / "ar-001", ["ivt", "landmask"])
    start = _parse(truth["times"][0])
    end = _parse(truth["times"][-1])
    init = start - np.timedelta64(24, "h")
    _copy_set(src, forecast_dir("ar-001", init), ["ivt"])
    cases.append(CaseStudy("ar-001", "atmospheric_river", _region_of(AR_SPEC), start, end, label="synthetic"))
    expect["ar-001"] = {"first_land_time": truth["first_land_time"]}

    # tropical cyclone
    src = scratch / "tc-001"
    truth = generate_synthetic("vortex", src)
    tdir = root / "targets" / "tc-001"
    _copy_set(src, tdir, ["landmask"])
    shutil.copy2(src / "tracks.csv", tdir / "tracks.csv")
    start = _parse(truth["times"][0])
    end = _parse(truth["times"][-1])
    for back in (0, 24):
        _copy_set(src, forecast_dir("tc-001", start - np.timedelta64(back, "h")), ["mslp", "z300", "z500", "u10", "v10"])
    cases.append(CaseStudy("tc-001", "tropical_cyclone", _region_of(VORTEX_SPEC), start, end, label="north_atlantic"))
    expect["tc-001"] = {"landfall_time": truth["landfall_time"]}

    for case in cases:
        write_case(case, root / "catalog" / f"{case.case_id}.json")
    shutil.rmtree(scratch)
    (root / "expected.json").write_text(json.dumps(expect, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return expect
