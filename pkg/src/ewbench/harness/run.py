"""Batch runs: evaluate a catalog, write result tables and a replayable manifest.

Output directory layout::

    records.csv      every MetricRecord, diagnostics included
    records.jsonl    the same records as JSON lines
    aggregate.csv    group means, diagnostics excluded
    manifest.json    inputs, configuration and output hashes; written last

Records are ordered by case id and then by the order the pipeline emits
them, so a run's tables depend only on its inputs and configuration.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .. import __version__
from ..metrics import AggregateRow, MetricRecord, aggregate, records_to_csv, records_to_jsonl
from .catalog import CaseStudy, load_catalog
from .config import DEFAULTS
from .pipeline import evaluate_case, is_diagnostic
from .providers import ForecastProvider, TargetProvider

GROUP_KEYS = ("event_type", "region", "lead", "model", "case")
DEFAULT_GROUP_BY = ("event_type", "lead", "model")
OUTPUT_FILES = ("records.csv", "records.jsonl", "aggregate.csv")
MANIFEST = "manifest.json"
UNLABELLED = "unlabelled"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """Everything needed to repeat a run and check that it repeated."""

    version: str
    catalog: str
    forecasts: str
    targets: str
    models: list[str]
    case_ids: list[str]
    config: dict[str, Any]
    group_by: list[str]
    outputs: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


@dataclass
class RunResult:
    records: list[MetricRecord]
    manifest: RunManifest
    out_dir: Path

    @property
    def diagnostics(self) -> list[MetricRecord]:
        return [r for r in self.records if is_diagnostic(r)]

    @property
    def partial(self) -> bool:
        return bool(self.diagnostics)


def _group_fields(cases: Mapping[str, CaseStudy]) -> dict:
    def case_attr(r, attr, missing):
        c = cases.get(r.case)
        return missing if c is None else getattr(c, attr) or missing

    return {
        "event_type": lambda r: case_attr(r, "event_type", "unknown"),
        "region": lambda r: case_attr(r, "label", UNLABELLED),
        "lead": lambda r: r.lead_hours,
        "case": lambda r: r.case,
    }


def aggregate_table(
    records: Iterable[MetricRecord],
    cases: Mapping[str, CaseStudy],
    group_by: Sequence[str] = DEFAULT_GROUP_BY,
) -> list[AggregateRow]:
    """Group means over non-diagnostic records; ``metric`` is always the last key.

    Raises:
        ValueError: a grouping key outside :data:`GROUP_KEYS`.
    """
    bad = [k for k in group_by if k not in GROUP_KEYS]
    if bad:
        raise ValueError(f"unknown group key(s) {bad}; choose from {GROUP_KEYS}")
    keep = [r for r in records if not is_diagnostic(r)]
    return aggregate(keep, by=tuple(group_by) + ("metric",), fields=_group_fields(cases))


def aggregate_to_csv(rows: Sequence[AggregateRow], group_by: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(group_by) + ["metric", "mean", "n_defined", "n_undefined"])
    for row in rows:
        key = ["%g" % k if isinstance(k, float) else k for k in row.key]
        writer.writerow(key + ["" if row.mean is None else repr(row.mean), row.n_defined, row.n_undefined])
    return buf.getvalue()


def _evaluate_one(args) -> list[MetricRecord]:
    # Providers are rebuilt per worker; their caches do not pickle.
    case, forecasts, targets, config, models = args
    return evaluate_case(case, ForecastProvider(forecasts), TargetProvider(targets), config, models)


def run_evaluation(
    catalog,
    forecasts,
    targets,
    out_dir,
    config: Mapping[str, Any] = DEFAULTS,
    models: Sequence[str] | None = None,
    case_ids: Sequence[str] | None = None,
    group_by: Sequence[str] = DEFAULT_GROUP_BY,
    jobs: int = 1,
) -> RunResult:
    """Evaluate every selected case and write the output tables and manifest.

    Raises:
        CatalogError: invalid catalog.
        ValueError: an unknown case id or group key.
    """
    cases = load_catalog(catalog)
    if case_ids is not None:
        unknown = sorted(set(case_ids) - {c.case_id for c in cases})
        if unknown:
            raise ValueError(f"unknown case id(s): {', '.join(unknown)}")
        cases = [c for c in cases if c.case_id in set(case_ids)]
    if models is None:
        models = ForecastProvider(forecasts).models()
    models = sorted(models)
    tasks = [(c, str(forecasts), str(targets), config, models) for c in cases]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_case = list(pool.map(_evaluate_one, tasks))
    else:
        per_case = [_evaluate_one(t) for t in tasks]
    records = [r for batch in per_case for r in batch]

    manifest = RunManifest(
        version=__version__,
        catalog=str(Path(catalog).resolve()),
        forecasts=str(Path(forecasts).resolve()),
        targets=str(Path(targets).resolve()),
        models=list(models),
        case_ids=[c.case_id for c in cases],
        config=json.loads(json.dumps(config)),
        group_by=list(group_by),
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = aggregate_table(records, {c.case_id: c for c in cases}, group_by)
    texts = {
        "records.csv": records_to_csv(records),
        "records.jsonl": records_to_jsonl(records),
        "aggregate.csv": aggregate_to_csv(rows, group_by),
    }
    for name in OUTPUT_FILES:
        (out / name).write_text(texts[name], encoding="utf-8")
        manifest.outputs[name] = _sha256(out / name)
    (out / MANIFEST).write_text(manifest.to_json(), encoding="utf-8")
    return RunResult(records, manifest, out)


def replay(manifest_path, out_dir, jobs: int = 1) -> tuple[RunResult, list[str]]:
    """Repeat the run described by ``manifest_path`` into ``out_dir``.

    Returns:
        The new result and the names of output files whose hash differs.
    """
    old = RunManifest.load(manifest_path)
    result = run_evaluation(
        old.catalog,
        old.forecasts,
        old.targets,
        out_dir,
        config=old.config,
        models=old.models,
        case_ids=old.case_ids,
        group_by=old.group_by,
        jobs=jobs,
    )
    mismatched = sorted(
        name for name in set(old.outputs) | set(result.manifest.outputs)
        if old.outputs.get(name) != result.manifest.outputs.get(name)
    )
    if old.version != result.manifest.version:
        mismatched.append("version")
    return result, mismatched
