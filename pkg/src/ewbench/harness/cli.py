"""Command-line interface.

Exit codes: 0 success, 2 partial run (some case or initialisation skipped,
see the ``diag.*`` records), 1 error. Usage errors also exit 1 so that 2
always means a partial run.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from ..ar import IvtField, detect_ar_objects, ivt_series, write_ar_objects
from ..climatology import PercentileClimatology, build_event_case, detect_marginal_regions
from ..container import format_time, load_cube, load_landmask, parse_time, write_cube
from ..grid import FieldCube
from ..landfall import detect_landfalls, write_landfalls
from ..metrics import read_records
from ..severe import compute_pph, pph_bounding_box, read_reports
from ..tc import find_candidates, read_tracks, stitch_tracks, write_tracks
from .catalog import CaseStudy, load_catalog, write_case
from .config import ar_params, load_config, tc_params
from .run import DEFAULT_GROUP_BY, GROUP_KEYS, aggregate_table, aggregate_to_csv, replay, run_evaluation
from .synth import KINDS, generate_synthetic, write_identity_suite

EXIT_OK, EXIT_ERROR, EXIT_PARTIAL = 0, 1, 2

_path_in = click.Path(exists=True, dir_okay=False, path_type=Path)
_dir_in = click.Path(exists=True, file_okay=False, path_type=Path)
_path_out = click.Path(path_type=Path)


def _latlon(text: str | None) -> tuple[float, float] | None:
    if text is None:
        return None
    try:
        lat, lon = (float(x) for x in text.split(","))
    except ValueError as exc:
        raise click.BadParameter(f"expected LAT,LON, got {text!r}") from exc
    return lat, lon


@click.group()
@click.option("--config", "config_path", type=_path_in, help="YAML file overriding the defaults.")
@click.option("--set", "assignments", multiple=True, metavar="SECTION.KEY=VALUE", help="Override one setting; repeatable.")
@click.pass_context
def cli(ctx, config_path, assignments):
    """Impact-based verification of extreme-weather forecasts."""
    ctx.obj = load_config(config_path, assignments)


# detect ----------------------------------------------------------------------------


@cli.group()
def detect():
    """Find temperature events in a gridded series."""


def _event_case(ctx, kind, t2m, clim, landmask, seed, case_id, out):
    cfg = ctx.obj["temperature"]
    temp = load_cube(t2m)
    mask = load_landmask(landmask) if landmask else None
    event = build_event_case(case_id, kind, temp, PercentileClimatology.from_cube(load_cube(clim)),
                             _latlon(seed), mask, cfg["min_run_days"])
    case = CaseStudy(case_id, kind, event.region, event.start, event.end, seed=_latlon(seed))
    write_case(case, out)
    click.echo(json.dumps(event.as_dict(), sort_keys=True))


@detect.command("heat")
@click.option("--t2m", required=True, type=_path_in)
@click.option("--clim", required=True, type=_path_in, help="85th-percentile climatology container.")
@click.option("--landmask", type=_path_in)
@click.option("--seed", required=True, help="LAT,LON inside the event.")
@click.option("--case-id", default="heat-001", show_default=True)
@click.option("--out", required=True, type=_path_out, help="Case JSON to write.")
@click.pass_context
def detect_heat(ctx, t2m, clim, landmask, seed, case_id, out):
    """Grow a heat-wave case around SEED."""
    _event_case(ctx, "heat_wave", t2m, clim, landmask, seed, case_id, out)


@detect.command("freeze")
@click.option("--t2m", required=True, type=_path_in)
@click.option("--clim", required=True, type=_path_in, help="15th-percentile climatology container.")
@click.option("--landmask", type=_path_in)
@click.option("--seed", required=True, help="LAT,LON inside the event.")
@click.option("--case-id", default="freeze-001", show_default=True)
@click.option("--out", required=True, type=_path_out, help="Case JSON to write.")
@click.pass_context
def detect_freeze(ctx, t2m, clim, landmask, seed, case_id, out):
    """Grow a freeze case around SEED."""
    _event_case(ctx, "freeze", t2m, clim, landmask, seed, case_id, out)


@detect.command("marginal")
@click.option("--t2m", required=True, type=_path_in)
@click.option("--clim-low", required=True, type=_path_in, help="16th-percentile climatology container.")
@click.option("--clim-high", required=True, type=_path_in, help="84th-percentile climatology container.")
@click.option("--landmask", type=_path_in)
@click.option("--min-days", default=5, show_default=True)
@click.option("--min-area-km2", default=200_000.0, show_default=True)
@click.option("--out", required=True, type=_path_out, help="Directory for case JSON files.")
def detect_marginal(t2m, clim_low, clim_high, landmask, min_days, min_area_km2, out):
    """Write one marginal-temperature case per persistent in-band region."""
    found = detect_marginal_regions(
        load_cube(t2m),
        PercentileClimatology.from_cube(load_cube(clim_low)),
        PercentileClimatology.from_cube(load_cube(clim_high)),
        load_landmask(landmask) if landmask else None,
        min_days,
        min_area_km2,
    )
    for ev in found:
        write_case(CaseStudy(ev.case_id, "marginal_temp", ev.region, ev.start, ev.end), Path(out) / f"{ev.case_id}.json")
    click.echo(f"{len(found)} marginal case(s)")


# track -------------------------------------------------------------------------------


@cli.group()
def track():
    """Detect and track atmospheric rivers or tropical cyclones."""


@track.command("ar")
@click.option("--ivt", type=_path_in, help="IVT magnitude container.")
@click.option("--q", "q_path", type=_path_in, help="Specific humidity on pressure levels.")
@click.option("--u", "u_path", type=_path_in)
@click.option("--v", "v_path", type=_path_in)
@click.option("--landmask", type=_path_in)
@click.option("--out", required=True, type=_path_out, help="JSON-lines file of AR objects.")
@click.pass_context
def track_ar(ctx, ivt, q_path, u_path, v_path, landmask, out):
    """AR objects at every valid time, from IVT or from q, u and v."""
    if ivt is not None:
        cube = load_cube(ivt)
        fields = [IvtField.from_magnitude(cube.spec, t, cube.values[k, 0]) for k, t in enumerate(cube.times)]
    elif q_path and u_path and v_path:
        fields = ivt_series(load_cube(q_path), load_cube(u_path), load_cube(v_path))
    else:
        raise click.UsageError("give --ivt, or all of --q, --u and --v")
    params = ar_params(ctx.obj)
    mask = load_landmask(landmask) if landmask else None
    objects = [o for f in fields for o in detect_ar_objects(f, params, mask)]
    write_ar_objects(objects, out)
    click.echo(f"{len(objects)} AR object(s) over {len(fields)} time(s)")


@track.command("tc")
@click.option("--mslp", required=True, type=_path_in)
@click.option("--z300", required=True, type=_path_in)
@click.option("--z500", required=True, type=_path_in)
@click.option("--u10", required=True, type=_path_in)
@click.option("--v10", required=True, type=_path_in)
@click.option("--reference", type=_path_in, help="Track CSV; the first track restricts candidates.")
@click.option("--source", type=click.Choice(["forecast", "analysis"]), default="forecast", show_default=True)
@click.option("--out", required=True, type=_path_out, help="Track CSV to write.")
@click.pass_context
def track_tc(ctx, mslp, z300, z500, u10, v10, reference, source, out):
    """Candidate detection and stitching over every valid time."""
    params = tc_params(ctx.obj)
    cubes = [load_cube(p) for p in (mslp, z300, z500, u10, v10)]
    spec, times = cubes[0].spec, cubes[0].times
    if any(c.spec != spec or not np.array_equal(c.times, times) for c in cubes):
        raise click.ClickException("input fields do not share grid and times")
    ref = None
    if reference is not None:
        refs = read_tracks(reference)
        ref = refs[0] if refs else None
    cands = []
    for k, t in enumerate(times):
        point = None if ref is None else ref.position_at(t)
        cands.append(find_candidates(*(np.asarray(c.values[k, 0], float) for c in cubes), spec, t, params, point))
    tracks = stitch_tracks(cands, params, reference_track=ref, source=source)
    write_tracks(tracks, out)
    click.echo(f"{len(tracks)} track(s)")


# landfall, pph ---------------------------------------------------------------------------


@cli.command()
@click.option("--tracks", "tracks_path", required=True, type=_path_in)
@click.option("--landmask", required=True, type=_path_in)
@click.option("--out", required=True, type=_path_out, help="Landfall CSV to write.")
@click.pass_context
def landfall(ctx, tracks_path, landmask, out):
    """Landfall points of every track in a track CSV."""
    mask = load_landmask(landmask).without_small_features(ctx.obj["landfall"]["min_island_cells"])
    events = [e for tr in read_tracks(tracks_path) if len(tr) >= 2 for e in detect_landfalls(tr, mask)]
    write_landfalls(events, out)
    click.echo(f"{len(events)} landfall(s)")


@cli.command()
@click.option("--reports", "reports_path", required=True, type=_path_in)
@click.option("--template", required=True, type=_path_in, help="Any container on the target grid.")
@click.option("--start", help="Keep reports at or after this ISO time.")
@click.option("--end", help="Keep reports at or before this ISO time.")
@click.option("--out", required=True, type=_path_out, help="PPH container to write.")
@click.pass_context
def pph(ctx, reports_path, template, start, end, out):
    """Practically perfect hindcast from storm reports; prints its bounding box."""
    cfg = ctx.obj["severe"]
    reports = read_reports(reports_path, parse_time(start) if start else None, parse_time(end) if end else None)
    spec = load_cube(template).spec
    field = compute_pph(reports, spec, cfg["pph_sigma"], cfg["weight_tornado_hail"], cfg["pph_peak"])
    stamp = np.datetime64(start.rstrip("Z"), "s") if start else (reports[0].time if reports else np.datetime64(0, "s"))
    write_cube(FieldCube("pph", "1", spec, [stamp], field.probability.astype(np.float32)[None, None]), out)
    box = pph_bounding_box(field, cfg["pph_contour"])
    click.echo(json.dumps({"reports": len(reports), "time": format_time(stamp),
                           "bbox": None if box is None else box.as_dict()}, sort_keys=True))


# evaluate, aggregate, synth -----------------------------------------------------------------


@cli.command()
@click.option("--catalog", type=_dir_in)
@click.option("--forecasts", type=_dir_in)
@click.option("--targets", type=_dir_in)
@click.option("--out", required=True, type=_path_out, help="Output directory.")
@click.option("--model", "models", multiple=True, help="Restrict to these models; repeatable.")
@click.option("--case", "case_ids", multiple=True, help="Restrict to these case ids; repeatable.")
@click.option("--group-by", multiple=True, type=click.Choice(GROUP_KEYS), help="Aggregate keys; repeatable.")
@click.option("--jobs", type=click.IntRange(min=1), help="Parallel case workers.")
@click.option("--replay", "manifest", type=_path_in, help="Repeat a run from its manifest and compare outputs.")
@click.pass_context
def evaluate(ctx, catalog, forecasts, targets, out, models, case_ids, group_by, jobs, manifest):
    """Evaluate every catalogued case against every model."""
    jobs = jobs or ctx.obj["run"]["jobs"]
    if manifest is not None:
        result, mismatched = replay(manifest, out, jobs=jobs)
        if mismatched:
            raise click.ClickException(f"replay differs in: {', '.join(mismatched)}")
        click.echo(f"replay identical: {', '.join(sorted(result.manifest.outputs))}")
    else:
        if not (catalog and forecasts and targets):
            raise click.UsageError("--catalog, --forecasts and --targets are required without --replay")
        result = run_evaluation(
            catalog, forecasts, targets, out, config=ctx.obj,
            models=list(models) or None, case_ids=list(case_ids) or None,
            group_by=list(group_by) or DEFAULT_GROUP_BY, jobs=jobs,
        )
        click.echo(f"{len(result.records)} record(s) for {len(result.manifest.case_ids)} case(s) -> {out}")
    if result.partial:
        for r in result.diagnostics:
            click.echo(f"{r.metric} {r.case} {r.model} {r.init_time} {r.units}".rstrip(), err=True)
        ctx.exit(EXIT_PARTIAL)


@cli.command("aggregate")
@click.option("--records", "records_path", required=True, type=_path_in, help="records.csv or records.jsonl.")
@click.option("--catalog", type=_dir_in, help="Needed for event_type and region keys.")
@click.option("--group-by", multiple=True, type=click.Choice(GROUP_KEYS))
@click.option("--out", type=_path_out, help="CSV to write; stdout when omitted.")
def aggregate_cmd(records_path, catalog, group_by, out):
    """Group means of a records table."""
    group_by = list(group_by) or list(DEFAULT_GROUP_BY)
    cases = {c.case_id: c for c in load_catalog(catalog)} if catalog else {}
    text = aggregate_to_csv(aggregate_table(read_records(records_path), cases, group_by), group_by)
    if out is None:
        click.echo(text, nl=False)
    else:
        Path(out).write_text(text, encoding="utf-8")


@cli.command()
@click.argument("kind", type=click.Choice(KINDS + ("identity",)))
@click.option("--out", required=True, type=_path_out, help="Output directory.")
@click.option("--seed", default=0, show_default=True)
@click.option("--param", "params", multiple=True, metavar="KEY=VALUE", help="Generator parameter; repeatable.")
def synth(kind, out, seed, params):
    """Write synthetic inputs with a truth file; ``identity`` writes a full perfect-model suite."""
    if kind == "identity":
        if params:
            raise click.UsageError("the identity suite takes no parameters")
        expected = write_identity_suite(out)
        click.echo(f"identity suite with {len(expected)} case(s) -> {out}")
        return
    values = {}
    for text in params:
        key, sep, raw = text.partition("=")
        if not sep:
            raise click.UsageError(f"expected KEY=VALUE, got {text!r}")
        values[key.strip()] = raw.strip()
    truth = generate_synthetic(kind, out, values, seed)
    click.echo(json.dumps({k: v for k, v in truth.items() if k != "params"}, sort_keys=True)[:400])


def main(argv=None) -> int:
    """Console entry point returning the process exit code."""
    try:
        rv = cli.main(args=argv, prog_name="ewbench", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_ERROR
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit 1
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return EXIT_ERROR
    return rv if isinstance(rv, int) else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
