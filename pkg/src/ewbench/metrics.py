"""Verification metrics shared by all event types, and the record format.

Undefined results are ``None`` throughout; a :class:`MetricRecord` carries
them as an explicit flag so that no sentinel number or NaN reaches a table
or an aggregate.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .grid import FieldCube, haversine_km, wrap_lon

RECORD_COLUMNS = ("model", "case", "init_time", "lead_hours", "metric", "value", "units", "undefined")


def _pair(f, o) -> tuple[np.ndarray, np.ndarray]:
    f = np.asarray(f, dtype=float).ravel()
    o = np.asarray(o, dtype=float).ravel()
    if f.shape != o.shape:
        raise ValueError(f"length mismatch: {f.size} forecast vs {o.size} observed values")
    if f.size == 0:
        raise ValueError("metric needs at least one value pair")
    return f, o


def mae(f, o) -> float:
    """Mean absolute error."""
    f, o = _pair(f, o)
    return math.fsum(np.abs(f - o).tolist()) / f.size


def rmse(f, o) -> float:
    """Root-mean-square error."""
    f, o = _pair(f, o)
    d = np.abs(f - o)
    scale = float(d.max())
    if scale == 0.0 or not math.isfinite(scale):
        return scale
    # scaled like hypot so tiny or huge errors neither underflow nor overflow
    d = d / scale
    return scale * math.sqrt(math.fsum((d * d).tolist()) / f.size)


def mean_error(f, o) -> float:
    """Signed mean of ``f - o``."""
    f, o = _pair(f, o)
    return math.fsum((f - o).tolist()) / f.size


class RelaxedScore(NamedTuple):
    """Regional score with phase relaxation.

    ``truncated`` is set when the relaxation window of at least one gridpoint
    ran past the start or end of the forecast.
    """

    value: float | None
    truncated: bool
    npoints: int


def _region_points(cube: FieldCube, points: np.ndarray | None) -> np.ndarray:
    if points is None:
        return np.ones(cube.spec.shape, dtype=bool)
    points = np.asarray(points, dtype=bool)
    if points.shape != cube.spec.shape:
        raise ValueError("point mask does not match grid")
    return points


def _check_cogridded(f: FieldCube, o: FieldCube) -> None:
    if f.spec != o.spec:
        raise ValueError("forecast and observation grids differ")


def rmae_max(
    f_cube: FieldCube,
    o_cube: FieldCube,
    relax_hours: float = 24.0,
    points: np.ndarray | None = None,
) -> RelaxedScore:
    """Regional MAE of the event maximum with a timing tolerance.

    For each gridpoint the forecast maximum is taken over forecast samples
    within ``relax_hours`` of the observed maximum's valid time. Gridpoints
    equally weighted.

    Args:
        f_cube: forecast surface field over the event region.
        o_cube: observed surface field on the same grid.
        relax_hours: half-width of the window around the observed peak.
        points: optional gridpoint mask (e.g. land only).
    """
    _check_cogridded(f_cube, o_cube)
    mask = _region_points(o_cube, points)
    fv = f_cube.surface()
    ov = o_cube.surface()
    relax = np.timedelta64(int(round(relax_hours * 3600)), "s")
    ftimes = f_cube.times

    errors = []
    truncated = False
    for i, j in zip(*np.nonzero(mask)):
        obs = ov[:, i, j]
        if np.all(np.isnan(obs)):
            continue
        k = int(np.nanargmax(obs))
        t_peak = o_cube.times[k]
        window = (ftimes >= t_peak - relax) & (ftimes <= t_peak + relax)
        if t_peak - relax < ftimes[0] or t_peak + relax > ftimes[-1]:
            truncated = True
        fw = fv[window, i, j]
        if fw.size == 0 or np.all(np.isnan(fw)):
            continue
        errors.append(abs(float(np.nanmax(fw)) - float(obs[k])))
    if not errors:
        return RelaxedScore(None, truncated, 0)
    return RelaxedScore(math.fsum(errors) / len(errors), truncated, len(errors))


def daily_minima(cube: FieldCube) -> tuple[np.ndarray, np.ndarray]:
    """UTC calendar days and the (nday, nlat, nlon) minimum on each."""
    v = cube.surface()
    days = cube.times.astype("datetime64[D]")
    uniq = np.unique(days)
    out = np.full((uniq.size,) + cube.spec.shape, np.nan)
    for d, day in enumerate(uniq):
        sel = v[days == day]
        with np.errstate(all="ignore"):
            valid = ~np.all(np.isnan(sel), axis=0)
            out[d][valid] = np.nanmin(sel[:, valid], axis=0)
    return uniq, out


def _span(cube: FieldCube) -> np.timedelta64:
    step = cube.cadence_seconds() or 0
    return (cube.times[-1] - cube.times[0]) + np.timedelta64(int(step), "s")


def rmae_maxdailymin(
    f_cube: FieldCube,
    o_cube: FieldCube,
    relax_days: int = 1,
    points: np.ndarray | None = None,
) -> RelaxedScore:
    """Regional MAE of the warmest daily minimum, with a day of phase freedom.

    Per gridpoint the observed day with the highest daily minimum is found;
    the forecast value is the highest forecast daily minimum within
    ``relax_days`` of that day.

    Raises:
        ValueError: the observation covers less than one day.
    """
    _check_cogridded(f_cube, o_cube)
    if _span(o_cube) < np.timedelta64(1, "D"):
        raise ValueError("event shorter than one day")
    mask = _region_points(o_cube, points)
    o_days, o_min = daily_minima(o_cube)
    f_days, f_min = daily_minima(f_cube)

    errors = []
    truncated = False
    for i, j in zip(*np.nonzero(mask)):
        obs = o_min[:, i, j]
        if np.all(np.isnan(obs)):
            continue
        k = int(np.nanargmax(obs))
        lo = o_days[k] - np.timedelta64(relax_days, "D")
        hi = o_days[k] + np.timedelta64(relax_days, "D")
        if lo < f_days[0] or hi > f_days[-1]:
            truncated = True
        window = (f_days >= lo) & (f_days <= hi)
        fw = f_min[window, i, j]
        if fw.size == 0 or np.all(np.isnan(fw)):
            continue
        errors.append(abs(float(np.nanmax(fw)) - float(obs[k])))
    if not errors:
        return RelaxedScore(None, truncated, 0)
    return RelaxedScore(math.fsum(errors) / len(errors), truncated, len(errors))


def iou(a, b) -> float | None:
    """Intersection over union of two co-gridded masks; None when both are empty."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("masks are not co-gridded")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return None
    return int(np.count_nonzero(a & b)) / union


class Displacement(NamedTuple):
    planar_deg: float
    km: float


def spatial_displacement(pred_center, obs_center) -> Displacement | None:
    """Distance between two (lat, lon) centres, planar degrees and great-circle km.

    The planar form ignores meridian convergence; the longitude difference is
    wrapped so that centres either side of the antimeridian stay close.
    Returns None when either centre is undefined.
    """
    if pred_center is None or obs_center is None:
        return None
    (plat, plon), (olat, olon) = pred_center, obs_center
    dlat = float(plat) - float(olat)
    dlon = wrap_lon(float(plon) - float(olon))
    planar = math.hypot(dlat, dlon)
    return Displacement(planar, float(haversine_km(plat, plon, olat, olon)))


def lead_time_days(predicted_start, actual_start) -> int | None:
    """Predicted minus actual start, in UTC calendar days; None if never predicted."""
    if predicted_start is None:
        return None
    if actual_start is None:
        raise ValueError("actual start is required")
    p = np.datetime64(predicted_start, "D")
    a = np.datetime64(actual_start, "D")
    return int((p - a) / np.timedelta64(1, "D"))


def _format_number(x) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


@dataclass(frozen=True)
class MetricRecord:
    """One row of a results table.

    ``value`` is None exactly when ``undefined`` is True.
    """

    model: str
    case: str
    init_time: str
    lead_hours: float
    metric: str
    value: float | None
    units: str
    undefined: bool = False

    def __post_init__(self):
        if self.undefined != (self.value is None):
            raise ValueError("exactly one of value/undefined must be set")
        if self.value is not None:
            if not math.isfinite(float(self.value)):
                raise ValueError(f"non-finite value for {self.metric}; use an undefined record")
            object.__setattr__(self, "value", float(self.value))
        object.__setattr__(self, "lead_hours", float(self.lead_hours))

    @classmethod
    def of(cls, model, case, init_time, lead_hours, metric, value, units) -> "MetricRecord":
        """Build a record, mapping ``None`` to the undefined flag."""
        return cls(model, case, str(init_time), lead_hours, metric, value, units, value is None)

    def as_row(self) -> dict:
        return {
            "model": self.model,
            "case": self.case,
            "init_time": self.init_time,
            "lead_hours": _format_number(self.lead_hours),
            "metric": self.metric,
            "value": "" if self.value is None else repr(self.value),
            "units": self.units,
            "undefined": "true" if self.undefined else "false",
        }

    def as_json(self) -> dict:
        return {
            "model": self.model,
            "case": self.case,
            "init_time": self.init_time,
            "lead_hours": self.lead_hours,
            "metric": self.metric,
            "value": self.value,
            "units": self.units,
            "undefined": self.undefined,
        }

    @classmethod
    def from_row(cls, row: dict) -> "MetricRecord":
        undefined = str(row["undefined"]).strip().lower() in ("true", "1")
        value = None if undefined or row["value"] in ("", None) else float(row["value"])
        return cls(
            model=row["model"],
            case=row["case"],
            init_time=row["init_time"],
            lead_hours=float(row["lead_hours"]),
            metric=row["metric"],
            value=value,
            units=row["units"],
            undefined=undefined,
        )


def records_to_csv(records: Iterable[MetricRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RECORD_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for r in records:
        writer.writerow(r.as_row())
    return buf.getvalue()


def records_to_jsonl(records: Iterable[MetricRecord]) -> str:
    return "".join(json.dumps(r.as_json()) + "\n" for r in records)


def write_records(records: Sequence[MetricRecord], path) -> Path:
    """Write records as CSV or JSON lines, chosen by the file suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = records_to_jsonl(records) if path.suffix == ".jsonl" else records_to_csv(records)
    path.write_text(text, encoding="utf-8")
    return path


def read_records(path) -> list[MetricRecord]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        return [MetricRecord.from_row(json.loads(line)) for line in text.splitlines() if line.strip()]
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != RECORD_COLUMNS:
        raise ValueError(f"{path}: expected columns {RECORD_COLUMNS}")
    return [MetricRecord.from_row(row) for row in reader]


class AggregateRow(NamedTuple):
    key: tuple
    mean: float | None
    n_defined: int
    n_undefined: int


def aggregate(
    records: Iterable[MetricRecord],
    by: Sequence[str] = ("model", "metric", "lead_hours"),
    fields: Mapping[str, Callable[[MetricRecord], object]] | None = None,
) -> list[AggregateRow]:
    """Mean of defined values per group, sorted by group key.

    ``math.fsum`` makes each mean exact up to one final rounding, so the
    result does not depend on record order.

    Args:
        by: grouping keys; record attributes unless named in ``fields``.
        fields: derived keys, e.g. a case's event type looked up by case id.
    """
    fields = fields or {}
    getters = [fields[k] if k in fields else (lambda r, k=k: getattr(r, k)) for k in by]
    groups: dict[tuple, list[float]] = defaultdict(list)
    undefined: dict[tuple, int] = defaultdict(int)
    for r in records:
        key = tuple(g(r) for g in getters)
        groups.setdefault(key, [])
        if r.undefined:
            undefined[key] += 1
        else:
            groups[key].append(r.value)
    rows = []
    for key in sorted(groups):
        vals = groups[key]
        mean = math.fsum(vals) / len(vals) if vals else None
        rows.append(AggregateRow(key, mean, len(vals), undefined[key]))
    return rows
