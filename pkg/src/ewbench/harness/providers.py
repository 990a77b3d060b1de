"""File-system providers for target and forecast data.

Directory conventions::

    <targets>/<case_id>/<name>.json        containers (t2m, ivt, clim85, landmask, ...)
    <targets>/<case_id>/tracks.csv         analysis tracks
    <targets>/<case_id>/reports.csv        storm reports
    <forecasts>/<model>/<case_id>/<init>/<name>.json

``<init>`` is the initialisation time written ``YYYYmmddTHH``. A case may
point a variable at another file with its ``targets`` mapping.
"""

from __future__ import annotations

import re
from functools import lru_cache
from pathlib import Path

import numpy as np

from ..climatology import PercentileClimatology
from ..container import load_cube, load_landmask
from ..grid import FieldCube, LandMask
from ..severe import Report, read_reports
from ..tc import Track, read_tracks
from .catalog import CaseStudy

_INIT_RE = re.compile(r"^(\d{4})(\d{2})(\d{2})T(\d{2})$")
_SPECIAL_FILES = {"tracks": "tracks.csv", "reports": "reports.csv"}


def init_dirname(init) -> str:
    return str(np.datetime_as_string(np.datetime64(init, "h"), unit="h")).replace("-", "")


def parse_init_dirname(name: str) -> np.datetime64 | None:
    m = _INIT_RE.match(name)
    if m is None:
        return None
    y, mo, d, h = m.groups()
    return np.datetime64(f"{y}-{mo}-{d}T{h}:00:00", "s")


def default_filename(name: str) -> str:
    return _SPECIAL_FILES.get(name, f"{name}.json")


class TargetProvider:
    """Observed or analysed data for each case."""

    def __init__(self, root):
        self.root = Path(root)
        self._cube = lru_cache(maxsize=64)(self._load_cube)

    def path(self, case: CaseStudy, name: str) -> Path:
        rel = case.targets.get(name, default_filename(name))
        return self.root / case.case_id / rel

    def has(self, case: CaseStudy, name: str) -> bool:
        return self.path(case, name).exists()

    def _load_cube(self, path: Path) -> FieldCube:
        return load_cube(path)

    def cube(self, case: CaseStudy, name: str) -> FieldCube:
        return self._cube(self.path(case, name))

    def climatology(self, case: CaseStudy, name: str) -> PercentileClimatology:
        return PercentileClimatology.from_cube(self.cube(case, name))

    def landmask(self, case: CaseStudy) -> LandMask | None:
        path = self.path(case, "landmask")
        return load_landmask(path) if path.exists() else None

    def tracks(self, case: CaseStudy) -> list[Track]:
        return read_tracks(self.path(case, "tracks"))

    def reports(self, case: CaseStudy) -> list[Report]:
        return read_reports(self.path(case, "reports"), case.start, case.end)


class ForecastProvider:
    """Model output, one directory per model, case and initialisation."""

    def __init__(self, root):
        self.root = Path(root)

    def models(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(p.name for p in self.root.iterdir() if p.is_dir())

    def inits(self, model: str, case: CaseStudy) -> list[np.datetime64]:
        base = self.root / model / case.case_id
        if not base.is_dir():
            return []
        found = [parse_init_dirname(p.name) for p in base.iterdir() if p.is_dir()]
        return sorted(t for t in found if t is not None)

    def path(self, model: str, case: CaseStudy, init, name: str) -> Path:
        return self.root / model / case.case_id / init_dirname(init) / default_filename(name)

    def has(self, model: str, case: CaseStudy, init, name: str) -> bool:
        return self.path(model, case, init, name).exists()

    def cube(self, model: str, case: CaseStudy, init, name: str) -> FieldCube:
        return load_cube(self.path(model, case, init, name))
