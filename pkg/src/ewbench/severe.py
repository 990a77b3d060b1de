"""Storm reports, practically perfect hindcasts and region contingency scores.

A practically perfect hindcast (PPH) deposits each tornado or hail report
at its nearest gridpoint with weight 10, smooths the deposits with a
unit-peak Gaussian of ``sigma`` gridpoints, scales the result so that a
single unweighted deposit peaks at ``peak`` and clips it to [0, 1]. Wind
reports are excluded throughout, including from hit/miss counts.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from .container import format_time, parse_time
from .grid import GridSpec, Region, mask_bounds, nearest_indices, wrap_lon

REPORT_COLUMNS = ("time", "lat", "lon", "type", "magnitude")
REPORT_TYPES = ("tornado", "hail", "wind")
DEFAULT_WEIGHTS = {"tornado": 10.0, "hail": 10.0, "wind": 0.0}
PPH_SIGMA = 1.5
PPH_PEAK = 0.6
PPH_CONTOUR = 0.01
KERNEL_RADIUS_SIGMAS = 6.0


@dataclass(frozen=True)
class Report:
    time: np.datetime64
    lat: float
    lon: float
    type: str
    magnitude: float | None = None

    def __post_init__(self):
        if self.type not in REPORT_TYPES:
            raise ValueError(f"report type must be one of {REPORT_TYPES}, got {self.type!r}")
        if not -90.0 <= self.lat <= 90.0 or not math.isfinite(self.lon):
            raise ValueError(f"invalid report location ({self.lat}, {self.lon})")
        object.__setattr__(self, "time", np.datetime64(self.time, "s"))
        object.__setattr__(self, "lon", float(wrap_lon(self.lon)))


def reports_to_csv(reports: Iterable[Report]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in reports:
        mag = "" if r.magnitude is None else repr(float(r.magnitude))
        w.writerow([format_time(r.time), repr(float(r.lat)), repr(float(r.lon)), r.type, mag])
    return buf.getvalue()


def write_reports(reports: Iterable[Report], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(reports_to_csv(reports), encoding="utf-8")
    return path


def read_reports(path, start=None, end=None) -> list[Report]:
    """Read a report CSV, optionally keeping only times in [start, end]."""
    reader = csv.DictReader(io.StringIO(Path(path).read_text(encoding="utf-8")))
    if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
        raise ValueError(f"{path}: expected columns {REPORT_COLUMNS}")
    out = [
        Report(
            time=parse_time(row["time"]),
            lat=float(row["lat"]),
            lon=float(row["lon"]),
            type=row["type"],
            magnitude=float(row["magnitude"]) if row["magnitude"] else None,
        )
        for row in reader
    ]
    return filter_reports(out, start, end)


def filter_reports(reports: Iterable[Report], start=None, end=None) -> list[Report]:
    lo = None if start is None else np.datetime64(start, "s")
    hi = None if end is None else np.datetime64(end, "s")
    return [r for r in reports if (lo is None or r.time >= lo) and (hi is None or r.time <= hi)]


@dataclass(frozen=True)
class PphField:
    """PPH probabilities on ``spec`` plus the unclipped field they came from."""

    spec: GridSpec
    probability: np.ndarray
    raw: np.ndarray
    sigma: float
    weights: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    peak: float = PPH_PEAK

    def region(self, contour: float = PPH_CONTOUR) -> np.ndarray:
        return self.probability >= contour


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Unit-peak 1-D Gaussian truncated at six standard deviations."""
    radius = int(math.ceil(KERNEL_RADIUS_SIGMAS * sigma))
    x = np.arange(-radius, radius + 1, dtype=float)
    return np.exp(-0.5 * (x / sigma) ** 2)


def deposit_reports(reports: Iterable[Report], spec: GridSpec, weights: Mapping[str, float] = DEFAULT_WEIGHTS) -> np.ndarray:
    """Sum of report weights at each report's nearest gridpoint; off-grid reports drop."""
    grid = np.zeros(spec.shape)
    kept = [r for r in reports if weights.get(r.type, 0.0) > 0.0]
    if not kept:
        return grid
    rows, cols, inside = nearest_indices(spec, [r.lat for r in kept], [r.lon for r in kept])
    w = np.array([weights[r.type] for r in kept])
    np.add.at(grid, (rows[inside], cols[inside]), w[inside])
    return grid


def smooth_deposits(deposits: np.ndarray, spec: GridSpec, sigma: float) -> np.ndarray:
    """Separable unit-peak Gaussian smoothing; longitude wraps on global grids."""
    kernel = gaussian_kernel(sigma)
    out = ndimage.correlate1d(deposits, kernel, axis=0, mode="constant", cval=0.0)
    return ndimage.correlate1d(out, kernel, axis=1, mode="wrap" if spec.is_global else "constant", cval=0.0)


def compute_pph(
    reports: Iterable[Report],
    spec: GridSpec,
    sigma: float = PPH_SIGMA,
    weight_tornado_hail: float = 10.0,
    peak: float = PPH_PEAK,
) -> PphField:
    """Practically perfect hindcast from storm reports.

    Raises:
        ValueError: non-positive ``sigma``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    weights = {"tornado": weight_tornado_hail, "hail": weight_tornado_hail, "wind": 0.0}
    raw = peak * smooth_deposits(deposit_reports(reports, spec, weights), spec, sigma)
    return PphField(spec, np.clip(raw, 0.0, 1.0), raw, float(sigma), weights, float(peak))


def pph_bounding_box(pph: PphField, contour: float = PPH_CONTOUR) -> Region | None:
    """Tight box around ``{pph >= contour}``; None when no cell reaches it."""
    if pph.probability.size == 0:
        raise ValueError("empty PPH field")
    return mask_bounds(pph.region(contour), pph.spec)


class Contingency(NamedTuple):
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def csi(self) -> float | None:
        denom = self.tp + self.fn + self.fp
        return self.tp / denom if denom else None

    @property
    def far(self) -> float | None:
        denom = self.tp + self.fp
        return self.fp / denom if denom else None


def region_contingency(pred_mask, target_mask, region_mask=None) -> Contingency:
    """Cellwise contingency counts, restricted to ``region_mask`` when given."""
    pred = np.asarray(pred_mask, dtype=bool)
    target = np.asarray(target_mask, dtype=bool)
    if pred.shape != target.shape:
        raise ValueError("prediction and target masks differ in shape")
    inside = np.ones(pred.shape, bool) if region_mask is None else np.asarray(region_mask, dtype=bool)
    if inside.shape != pred.shape:
        raise ValueError("region mask differs in shape")
    p, t = pred[inside], target[inside]
    return Contingency(
        tp=int(np.count_nonzero(p & t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
    )


class HitsMisses(NamedTuple):
    hits: int
    misses: int


def report_hits_misses(pred_mask, reports: Sequence[Report], spec: GridSpec) -> HitsMisses:
    """Count tornado and hail reports whose nearest gridpoint is (not) predicted.

    Reports off the grid count as misses.
    """
    pred = np.asarray(pred_mask, dtype=bool)
    if pred.shape != spec.shape:
        raise ValueError("mask does not match grid")
    kept = [r for r in reports if r.type != "wind"]
    if not kept:
        return HitsMisses(0, 0)
    rows, cols, inside = nearest_indices(spec, [r.lat for r in kept], [r.lon for r in kept])
    hit = np.zeros(len(kept), bool)
    hit[inside] = pred[rows[inside], cols[inside]]
    n_hit = int(hit.sum())
    return HitsMisses(n_hit, len(kept) - n_hit)


def coverage_fraction(pph_region: np.ndarray, predicted: np.ndarray) -> float:
    """Fraction of PPH-region cells that are also predicted."""
    total = int(np.count_nonzero(pph_region))
    if total == 0:
        raise ValueError("empty PPH region")
    return np.count_nonzero(pph_region & predicted) / total


def early_signal(
    cbss_by_lead: Mapping[float, np.ndarray],
    pph: PphField,
    coverage: float = 0.5,
    cbss_threshold: float = 15000.0,
    contour: float = PPH_CONTOUR,
) -> float | None:
    """Longest lead (days) from which every shorter lead covers the PPH region.

    A lead qualifies when at least ``coverage`` of the PPH region has CBSS at
    or above ``cbss_threshold``. Leads are walked from the shortest upward
    and the walk stops at the first failure. Returns None when the shortest
    lead already fails.

    Raises:
        ValueError: the PPH region is empty.
    """
    region = pph.region(contour)
    if not region.any():
        raise ValueError("empty PPH region")
    best = None
    for lead in sorted(cbss_by_lead):
        frac = coverage_fraction(region, np.asarray(cbss_by_lead[lead]) >= cbss_threshold)
        if frac < coverage:
            break
        best = float(lead)
    return best
