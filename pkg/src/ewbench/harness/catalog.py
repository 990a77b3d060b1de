"""Case catalog: one JSON document per case, validated against ``CASE_SCHEMA``."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import jsonschema
import numpy as np

from ..container import format_time, parse_time
from ..grid import Region

EVENT_TYPES = (
    "heat_wave",
    "freeze",
    "marginal_temp",
    "severe",
    "marginal_severe",
    "atmospheric_river",
    "tropical_cyclone",
)

_ISO = r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}(:\d{2})?Z?$"

CASE_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "ewbench case study",
    "type": "object",
    "required": ["case_id", "event_type", "region", "start", "end"],
    "additionalProperties": False,
    "properties": {
        "case_id": {"type": "string", "pattern": r"^[A-Za-z0-9_.-]+$"},
        "event_type": {"enum": list(EVENT_TYPES)},
        "region": {
            "type": "object",
            "required": ["lat_min", "lat_max", "lon_min", "lon_max"],
            "additionalProperties": False,
            "properties": {
                "lat_min": {"type": "number", "minimum": -90, "maximum": 90},
                "lat_max": {"type": "number", "minimum": -90, "maximum": 90},
                "lon_min": {"type": "number", "minimum": -360, "maximum": 360},
                "lon_max": {"type": "number", "minimum": -360, "maximum": 360},
            },
        },
        "start": {"type": "string", "pattern": _ISO},
        "end": {"type": "string", "pattern": _ISO},
        "label": {"type": "string"},
        "seed": {
            "type": "object",
            "required": ["lat", "lon"],
            "additionalProperties": False,
            "properties": {"lat": {"type": "number"}, "lon": {"type": "number"}},
        },
        "targets": {"type": "object", "additionalProperties": {"type": "string"}},
        "parameters": {"type": "object"},
    },
}


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class CaseStudy:
    """One catalogued event.

    ``targets`` maps a variable name to a file path relative to the case's
    target directory; unnamed variables fall back to ``<name>.json``.
    ``label`` groups cases in aggregate tables (e.g. an ocean basin).
    """

    case_id: str
    event_type: str
    region: Region
    start: np.datetime64
    end: np.datetime64
    label: str = ""
    seed: tuple[float, float] | None = None
    targets: Mapping[str, str] = field(default_factory=dict)
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.event_type not in EVENT_TYPES:
            raise CatalogError(f"unknown event type {self.event_type!r}")
        object.__setattr__(self, "start", np.datetime64(self.start, "s"))
        object.__setattr__(self, "end", np.datetime64(self.end, "s"))
        if self.end < self.start:
            raise CatalogError(f"{self.case_id}: end precedes start")

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "CaseStudy":
        try:
            jsonschema.validate(doc, CASE_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise CatalogError(f"invalid case document: {exc.message}") from exc
        seed = doc.get("seed")
        return cls(
            case_id=doc["case_id"],
            event_type=doc["event_type"],
            region=Region(**doc["region"]),
            start=parse_time(doc["start"]),
            end=parse_time(doc["end"]),
            label=doc.get("label", ""),
            seed=None if seed is None else (float(seed["lat"]), float(seed["lon"])),
            targets=dict(doc.get("targets", {})),
            parameters=dict(doc.get("parameters", {})),
        )

    def as_dict(self) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "case_id": self.case_id,
            "event_type": self.event_type,
            "region": self.region.as_dict(),
            "start": format_time(self.start),
            "end": format_time(self.end),
        }
        if self.label:
            doc["label"] = self.label
        if self.seed is not None:
            doc["seed"] = {"lat": self.seed[0], "lon": self.seed[1]}
        if self.targets:
            doc["targets"] = dict(self.targets)
        if self.parameters:
            doc["parameters"] = dict(self.parameters)
        return doc


def write_case(case: CaseStudy, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(case.as_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def load_case(path) -> CaseStudy:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CatalogError(f"{path}: {exc}") from exc
    return CaseStudy.from_dict(doc)


def load_catalog(directory) -> list[CaseStudy]:
    """All ``*.json`` cases in ``directory``, ordered by case id.

    Raises:
        CatalogError: a document is invalid or two cases share an id.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise CatalogError(f"catalog directory {directory} does not exist")
    cases = [load_case(p) for p in sorted(directory.glob("*.json"))]
    ids = [c.case_id for c in cases]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise CatalogError(f"duplicate case ids: {', '.join(dupes)}")
    return sorted(cases, key=lambda c: c.case_id)
