"""Per-event-type evaluation pipelines.

:func:`evaluate_case` walks every model and initialisation available for a
case and dispatches to the pipeline for the case's event type. Each
pipeline returns ``(metric, value, units)`` triples; ``None`` values become
undefined records.

Records whose metric starts with ``diag.`` are diagnostics: a skipped case,
a missing variable or an initialisation with too few valid times. For them
the ``units`` column carries the detail. Diagnostics never enter aggregates.

The lead of an initialisation is the time from it to the case start. Only
leads on the configured axis (multiples of ``run.lead_step_hours`` from 0 to
``run.max_lead_hours``) are evaluated.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from ..ar import IvtField, detect_ar_objects, ivt_series, union_mask, ar_landfall_lead_time
from ..climatology import event_window, freeze_runs, heatwave_runs
from ..container import format_time
from ..grid import FieldCube, GridSpec, center_of_mass, haversine_km
from ..landfall import detect_landfalls, filter_landfalls, landfall_metrics
from ..metrics import MetricRecord, lead_time_days, mae, rmae_max, rmae_maxdailymin, rmse
from ..severe import compute_pph, early_signal, region_contingency, report_hits_misses
from ..tc import find_candidates, stitch_tracks
from ..thermo import compute_bulk_shear, compute_cbss, mlcape_from_cubes
from .catalog import CaseStudy
from .config import DEFAULTS, ar_params, merge, tc_params
from .providers import ForecastProvider, TargetProvider

DIAG_PREFIX = "diag."
CASE_LEVEL_INIT = "all"

# Each entry lists alternative sets of variables; the first complete set wins.
TARGET_NEEDS: dict[str, tuple[tuple[str, ...], ...]] = {
    "heat_wave": (("t2m", "clim85"),),
    "freeze": (("t2m", "clim15"),),
    "marginal_temp": (("t2m",),),
    "severe": (("reports",),),
    "marginal_severe": (("reports",),),
    "atmospheric_river": (("ivt", "landmask"), ("q", "u", "v", "landmask")),
    "tropical_cyclone": (("tracks", "landmask"),),
}
FORECAST_NEEDS: dict[str, tuple[tuple[str, ...], ...]] = {
    "heat_wave": (("t2m",),),
    "freeze": (("t2m",),),
    "marginal_temp": (("t2m",),),
    "severe": (("cbss",), ("t", "q", "u10", "v10", "u", "v")),
    "marginal_severe": (("cbss",), ("t", "q", "u10", "v10", "u", "v")),
    "atmospheric_river": (("ivt",), ("q", "u", "v")),
    "tropical_cyclone": (("mslp", "z300", "z500", "u10", "v10"),),
}
_TARGET_CUBES = ("t2m", "ivt", "q")


def choose(options: Sequence[tuple[str, ...]], available: Callable[[str], bool]) -> tuple[str, ...] | None:
    """First option whose variables are all available, or None."""
    for names in options:
        if all(available(n) for n in names):
            return names
    return None


def is_diagnostic(record: MetricRecord) -> bool:
    return record.metric.startswith(DIAG_PREFIX)


@dataclass
class Context:
    """Everything a pipeline needs for one (case, model, initialisation)."""

    case: CaseStudy
    config: Mapping[str, Any]
    targets: TargetProvider
    target_names: tuple[str, ...]
    forecast_names: tuple[str, ...]
    forecast: Callable[[str], FieldCube]
    init: np.datetime64
    cache: dict = field(default_factory=dict)

    @property
    def lead_days(self) -> float:
        return float((self.case.start - self.init) / np.timedelta64(1, "D"))

    def window(self, cube: FieldCube) -> FieldCube:
        return cube.subset_times(self.case.start, self.case.end)


Triple = tuple[str, Any, str]


# temperature events ---------------------------------------------------------


def _negated(cube: FieldCube) -> FieldCube:
    return dataclasses.replace(cube, values=-np.asarray(cube.values))


def _region_points(ctx: Context, spec: GridSpec) -> np.ndarray:
    pts = ctx.case.region.mask(spec)
    land = ctx.targets.landmask(ctx.case)
    if land is not None and land.spec == spec:
        pts = pts & land.mask
    return pts


def _aligned_values(f: FieldCube, o: FieldCube, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    common = np.intersect1d(f.times, o.times)
    fi = np.searchsorted(f.times, common)
    oi = np.searchsorted(o.times, common)
    return f.surface()[fi][:, pts], o.surface()[oi][:, pts]


def _temperature(ctx: Context, kind: str) -> list[Triple]:
    cfg = ctx.config["temperature"]
    obs = ctx.targets.cube(ctx.case, "t2m")
    fc = ctx.forecast("t2m")
    if fc.spec != obs.spec:
        raise ValueError("forecast and target t2m grids differ")
    fw, ow = ctx.window(fc), ctx.window(obs)
    pts = _region_points(ctx, obs.spec)
    fv, ov = _aligned_values(fw, ow, pts)
    out: list[Triple] = []
    if fv.size:
        out += [("mae", mae(fv, ov), "K"), ("rmse", rmse(fv, ov), "K")]
    else:
        out += [("mae", None, "K"), ("rmse", None, "K")]
    if kind in ("heat_wave", "marginal_temp"):
        out.append(("rmae_max", rmae_max(fw, ow, cfg["relax_hours"], pts).value, "K"))
    if kind == "freeze":
        out.append(("rmae_min", rmae_max(_negated(fw), _negated(ow), cfg["relax_hours"], pts).value, "K"))
    if kind == "heat_wave":
        try:
            score = rmae_maxdailymin(fw, ow, cfg["relax_days"], pts).value
        except ValueError:
            score = None
        out.append(("rmae_maxdailymin", score, "K"))
    if kind in ("heat_wave", "freeze"):
        out.append(("lead_time_days", _temperature_lead(ctx, kind, fc, pts), "days"))
    return out


def _temperature_lead(ctx: Context, kind: str, fc: FieldCube, pts: np.ndarray) -> int | None:
    cfg = ctx.config["temperature"]
    span = fc.subset_times(ctx.init, ctx.case.end)
    landmask = ctx.targets.landmask(ctx.case)
    if kind == "heat_wave":
        stats = heatwave_runs(span, ctx.targets.climatology(ctx.case, "clim85"), cfg["max_gap_days"], landmask)
    else:
        stats = freeze_runs(span, ctx.targets.climatology(ctx.case, "clim15"), cfg["max_gap_days"], landmask)
    window = event_window(stats, pts, cfg["min_run_days"])
    return lead_time_days(None if window is None else window[0], ctx.case.start)


# convective events -----------------------------------------------------------


def cbss_cube(get: Callable[[str], FieldCube], names: Sequence[str]) -> FieldCube:
    """CBSS read directly or assembled from pressure-level temperature, humidity and winds."""
    if "cbss" in names:
        return get("cbss")
    t, q, u10, v10, u, v = (get(n) for n in ("t", "q", "u10", "v10", "u", "v"))
    k500 = u.level_index(500.0)
    fields = []
    for k in range(t.ntime):
        cape = mlcape_from_cubes(t, q, k)
        shear = compute_bulk_shear(u10.values[k, 0], v10.values[k, 0], u.values[k, k500], v.values[k, k500])
        fields.append(compute_cbss(cape, shear))
    return FieldCube("cbss", "m3 s-3", t.spec, t.times, np.stack(fields)[:, None])


def _severe(ctx: Context, kind: str) -> list[Triple]:
    cfg = ctx.config["severe"]
    cube = ctx.window(cbss_cube(ctx.forecast, ctx.forecast_names))
    spec = cube.spec
    region = ctx.case.region.mask(spec)
    exceed = cube.surface() >= cfg["cbss_threshold"]
    predicted = exceed.any(axis=0) & region
    reports = ctx.targets.reports(ctx.case)
    pph = compute_pph(reports, spec, cfg["pph_sigma"], cfg["weight_tornado_hail"], cfg["pph_peak"])
    observed = pph.probability >= cfg["pph_threshold"]
    table = region_contingency(predicted, observed, region)
    ctx.cache.setdefault("cbss_by_lead", {})[ctx.lead_days] = np.where(region, cube.surface().max(axis=0, initial=0.0), 0.0)
    ctx.cache["pph"] = pph
    if kind == "marginal_severe":
        days = cube.times.astype("datetime64[D]")
        risk = {d for d, hit in zip(days.tolist(), (exceed & region).any(axis=(1, 2)).tolist()) if hit}
        return [("risk_days", len(risk), "days"), ("far", table.far, "1")]
    inside = [r for r in reports if bool(ctx.case.region.contains(r.lat, r.lon))]
    hm = report_hits_misses(predicted, inside, spec)
    return [
        ("csi", table.csi, "1"),
        ("far", table.far, "1"),
        ("hits", hm.hits, "reports"),
        ("misses", hm.misses, "reports"),
    ]


def _severe_case_level(cache: dict, config: Mapping) -> list[Triple]:
    """Early signal over all evaluated leads of one model."""
    if "pph" not in cache or not cache.get("cbss_by_lead"):
        return []
    cfg = config["severe"]
    pph = cache["pph"]
    if not pph.region(cfg["pph_contour"]).any():
        return [("early_signal_days", None, "days")]
    lead = early_signal(cache["cbss_by_lead"], pph, cfg["coverage"], cfg["cbss_threshold"], cfg["pph_contour"])
    return [("early_signal_days", lead, "days")]


# atmospheric rivers ----------------------------------------------------------


def _ivt_fields(get: Callable[[str], FieldCube], names: Sequence[str]) -> list[IvtField]:
    if "ivt" in names:
        cube = get("ivt")
        return [IvtField.from_magnitude(cube.spec, t, cube.values[k, 0]) for k, t in enumerate(cube.times)]
    return ivt_series(get("q"), get("u"), get("v"))


def _ar_objects(ctx: Context, fields: list[IvtField]) -> tuple[GridSpec | None, dict]:
    """Grid and per-time AR objects for the valid times inside the case window."""
    params = ar_params(ctx.config)
    landmask = ctx.targets.landmask(ctx.case)
    inside = [f for f in fields if ctx.case.start <= f.time <= ctx.case.end]
    spec = inside[0].spec if inside else None
    return spec, {f.time: detect_ar_objects(f, params, landmask) for f in inside}


def _atmospheric_river(ctx: Context, kind: str) -> list[Triple]:
    if "target_objects" not in ctx.cache:
        fields = _ivt_fields(lambda n: ctx.targets.cube(ctx.case, n), ctx.target_names)
        ctx.cache["target_objects"] = _ar_objects(ctx, fields)
    spec, target = ctx.cache["target_objects"]
    fspec, forecast = _ar_objects(ctx, _ivt_fields(ctx.forecast, ctx.forecast_names))
    if not target or not forecast:
        return [("ar_landfall_lead_hours", None, "h"), ("ar_land_iou", None, "1"), ("ar_land_displacement_km", None, "km")]
    if fspec != spec:
        raise ValueError("forecast and target IVT grids differ")
    try:
        lead = ar_landfall_lead_time(forecast, target, ctx.init, ctx.case.region).lead_hours
    except ValueError:
        lead = None
    region = ctx.case.region.mask(spec)
    ious, dists = [], []
    for t in sorted(set(forecast) & set(target)):
        fl = union_mask(forecast[t], spec, land_only=True) & region
        tl = union_mask(target[t], spec, land_only=True) & region
        if fl.any() and tl.any():
            ious.append(np.count_nonzero(fl & tl) / np.count_nonzero(fl | tl))
            dists.append(float(haversine_km(*center_of_mass(fl, spec), *center_of_mass(tl, spec))))
    return [
        ("ar_landfall_lead_hours", lead, "h"),
        ("ar_land_iou", float(np.mean(ious)) if ious else None, "1"),
        ("ar_land_displacement_km", float(np.mean(dists)) if dists else None, "km"),
    ]


# tropical cyclones -----------------------------------------------------------


def _tropical_cyclone(ctx: Context, kind: str) -> list[Triple]:
    params = tc_params(ctx.config)
    lf = ctx.config["landfall"]
    landmask = ctx.targets.landmask(ctx.case).without_small_features(lf["min_island_cells"])
    analysis = sorted(ctx.targets.tracks(ctx.case), key=lambda t: t.storm_id)
    reference = analysis[0] if analysis else None
    cubes = {n: ctx.window(ctx.forecast(n)) for n in ("mslp", "z300", "z500", "u10", "v10")}
    times = cubes["mslp"].times
    spec = cubes["mslp"].spec
    if any(c.spec != spec or not np.array_equal(c.times, times) for c in cubes.values()):
        raise ValueError("TC forecast fields are not aligned")
    candidates = []
    for k, t in enumerate(times):
        ref_point = None if reference is None else reference.position_at(t)
        candidates.append(
            find_candidates(*(cubes[n].values[k, 0] for n in ("mslp", "z300", "z500", "u10", "v10")),
                            spec, t, params, reference_point=ref_point)
        )
    tracks = stitch_tracks(candidates, params, reference_track=reference, source="forecast")
    f_events = [e for tr in tracks if len(tr) >= 2 for e in detect_landfalls(tr, landmask)]
    t_events = [e for tr in analysis if len(tr) >= 2 for e in detect_landfalls(tr, landmask)]
    first_valid = {tr.storm_id: tr.times[0] for tr in tracks}
    pairs = filter_landfalls(f_events, t_events, ctx.init, first_valid, lf["mode"], lf["window_hours"])
    m = landfall_metrics(pairs)
    return [
        ("landfall_displacement_km", m.displacement_km, "km"),
        ("landfall_time_error_hours", m.time_me_hours, "h"),
        ("landfall_pressure_mae_hpa", m.pressure_mae_hpa, "hPa"),
        ("landfall_wind_mae_ms", m.wind_mae_ms, "m s-1"),
    ]


PIPELINES: dict[str, Callable[[Context, str], list[Triple]]] = {
    "heat_wave": _temperature,
    "freeze": _temperature,
    "marginal_temp": _temperature,
    "severe": _severe,
    "marginal_severe": _severe,
    "atmospheric_river": _atmospheric_river,
    "tropical_cyclone": _tropical_cyclone,
}


# driver ------------------------------------------------------------------------


def required_times(case: CaseStudy, targets: TargetProvider, target_names: Sequence[str], step_hours: int) -> np.ndarray:
    """Valid times a forecast should cover: the target cube's, else a synoptic grid."""
    for name in _TARGET_CUBES:
        if name in target_names:
            times = targets.cube(case, name).times
            return times[(times >= case.start) & (times <= case.end)]
    step = np.timedelta64(int(step_hours) * 3600, "s")
    n = int((case.end - case.start) // step) + 1
    return case.start + np.arange(n) * step


def _lead_hours(case: CaseStudy, init: np.datetime64) -> float:
    return float((case.start - init) / np.timedelta64(1, "h"))


def _on_lead_axis(lead: float, run_cfg: Mapping) -> bool:
    step = run_cfg["lead_step_hours"]
    return 0 <= lead <= run_cfg["max_lead_hours"] and lead % step == 0


def evaluate_case(
    case: CaseStudy,
    forecasts: ForecastProvider,
    targets: TargetProvider,
    config: Mapping[str, Any] = DEFAULTS,
    models: Sequence[str] | None = None,
) -> list[MetricRecord]:
    """All metric and diagnostic records for one case, in a fixed order."""
    cfg = merge(config, case.parameters)
    run_cfg = cfg["run"]
    kind = case.event_type

    def diag(model, init, lead, what, value=None, detail=""):
        return MetricRecord.of(model, case.case_id, init, lead, DIAG_PREFIX + what, value, detail)

    target_names = choose(TARGET_NEEDS[kind], lambda n: targets.has(case, n))
    if target_names is None:
        wanted = " | ".join("+".join(o) for o in TARGET_NEEDS[kind])
        return [diag("*", CASE_LEVEL_INIT, 0.0, "missing_target", detail=wanted)]
    required = required_times(case, targets, target_names, run_cfg["lead_step_hours"])

    records: list[MetricRecord] = []
    for model in models if models is not None else forecasts.models():
        inits = [t for t in forecasts.inits(model, case) if _on_lead_axis(_lead_hours(case, t), run_cfg)]
        if not inits:
            records.append(diag(model, CASE_LEVEL_INIT, 0.0, "no_forecast"))
            continue
        cache: dict = {}
        for init in inits:
            lead = _lead_hours(case, init)
            init_s = format_time(init)
            names = choose(FORECAST_NEEDS[kind], lambda n: forecasts.has(model, case, init, n))
            if names is None:
                wanted = " | ".join("+".join(o) for o in FORECAST_NEEDS[kind])
                records.append(diag(model, init_s, lead, "missing_forecast", detail=wanted))
                continue

            def get(n, model=model, init=init):
                return forecasts.cube(model, case, init, n)

            have = get(names[0]).times
            frac = float(np.isin(required, have).mean()) if required.size else 0.0
            if frac < run_cfg["min_valid_fraction"]:
                records.append(diag(model, init_s, lead, "incomplete", frac, "fraction of required valid times"))
                continue
            ctx = Context(case, cfg, targets, target_names, names, get, init, cache)
            try:
                triples = PIPELINES[kind](ctx, kind)
            except (ValueError, KeyError) as exc:
                records.append(diag(model, init_s, lead, "error", detail=str(exc)))
                continue
            records += [MetricRecord.of(model, case.case_id, init_s, lead, m, v, u) for m, v, u in triples]
        if kind == "severe":
            records += [
                MetricRecord.of(model, case.case_id, CASE_LEVEL_INIT, 0.0, m, v, u)
                for m, v, u in _severe_case_level(cache, cfg)
            ]
    return records
