"""CSV ingestion, audit configuration, and report serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import yaml

from .auditor import AuditReport, StabilityThresholds, SubgroupSpec
from .errors import (
    AuditError,
    BadNumber,
    ConfigError,
    DataError,
    DuplicateSubject,
    MissingColumn,
    MissingSubjectColumn,
    ValidationFailed,
)
from .model import DemographicProfile, RunTable, ScoreSchema, TraitSpec, validate_score_vector
from .stats import CorrectionMethod

SUBJECT_COLUMN = "subject_id"
TIME_COLUMN = "scored_at"


def parse_timestamp(text: str) -> datetime:
    """RFC 3339 timestamp; an explicit offset is required."""
    value = text.strip()
    if value.endswith(("Z", "z")):
        value = value[:-1] + "+00:00"
    ts = datetime.fromisoformat(value)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no UTC offset")
    return ts


def format_timestamp(ts: datetime) -> str:
    if ts.utcoffset() == timezone.utc.utcoffset(None):
        return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")
    return ts.isoformat()


def parse_runs_csv(
    path,
    schema: ScoreSchema,
    run_id: str | None = None,
    facet_label: str = "",
    treatment_label: str = "",
) -> RunTable:
    """Read one scoring run. Either every row validates or nothing is returned."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise MissingColumn(f"{path}: empty file, header required")
        header = [h.strip() for h in header]
        if SUBJECT_COLUMN not in header:
            raise MissingColumn(f"{path}: missing column {SUBJECT_COLUMN!r}")
        missing = [t for t in schema.trait_names if t not in header]
        if missing:
            raise MissingColumn(f"{path}: missing trait column(s) {missing}")
        sid_col = header.index(SUBJECT_COLUMN)
        cols = [header.index(t) for t in schema.trait_names]
        time_col = header.index(TIME_COLUMN) if TIME_COLUMN in header else None

        entries, times, problems, seen = {}, {}, [], {}
        for row in reader:
            line = reader.line_num
            if not any(cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                problems.append((line, f"expected {len(header)} fields, got {len(row)}"))
                continue
            sid = row[sid_col].strip()
            if not sid:
                problems.append((line, "empty subject_id"))
                continue
            if sid in seen:
                raise DuplicateSubject(line, sid)
            seen[sid] = line
            raw = []
            for c, trait in zip(cols, schema.trait_names):
                try:
                    v = float(row[c])
                except ValueError:
                    raise BadNumber(line, f"{row[c]!r} in column {trait!r}") from None
                if not math.isfinite(v):
                    raise BadNumber(line, f"{row[c]!r} in column {trait!r}")
                raw.append(v)
            try:
                entries[sid] = validate_score_vector(schema, raw)
            except DataError as exc:
                problems.append((line, str(exc)))
                continue
            if time_col is not None and row[time_col].strip():
                try:
                    times[sid] = parse_timestamp(row[time_col])
                except ValueError as exc:
                    problems.append((line, str(exc)))
    if problems:
        raise ValidationFailed(problems)
    return RunTable(
        run_id=run_id if run_id is not None else path.stem,
        schema=schema,
        entries=entries,
        facet_label=facet_label,
        treatment_label=treatment_label,
        scored_at=min(times.values()) if times else None,
        entry_times=times,
    )


def write_runs_csv(run: RunTable, path) -> None:
    path = Path(path)
    header = [SUBJECT_COLUMN, *run.schema.trait_names]
    with_times = bool(run.entry_times)
    if with_times:
        header.append(TIME_COLUMN)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for sid, vec in run.entries.items():
            row = [sid, *(repr(v) for v in vec.values)]
            if with_times:
                ts = run.entry_times.get(sid)
                row.append(format_timestamp(ts) if ts else "")
            w.writerow(row)


def parse_demographics_csv(path) -> dict[str, DemographicProfile]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in (next(reader, None) or [])]
        if SUBJECT_COLUMN not in header:
            raise MissingSubjectColumn(f"{path}: missing column {SUBJECT_COLUMN!r}")
        sid_col = header.index(SUBJECT_COLUMN)
        out = {}
        for row in reader:
            if not any(cell.strip() for cell in row):
                continue
            sid = row[sid_col].strip()
            if sid in out:
                raise DuplicateSubject(reader.line_num, sid)
            attrs = {
                name: row[i].strip()
                for i, name in enumerate(header)
                if i != sid_col and i < len(row) and row[i].strip()
            }
            out[sid] = DemographicProfile(attrs)
    return out


def write_demographics_csv(profiles: Mapping[str, DemographicProfile], path, attributes: Sequence[str]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([SUBJECT_COLUMN, *attributes])
        for sid, prof in profiles.items():
            w.writerow([sid, *(prof.get(a) or "" for a in attributes)])


@dataclass(frozen=True)
class FacetSpec:
    name: str
    control: Path
    treatment: Path


@dataclass
class AuditConfig:
    system_name: str
    schema: ScoreSchema
    facets: list[FacetSpec]
    demographics: Path | None = None
    subgroups: list[SubgroupSpec] = field(default_factory=list)
    thresholds: StabilityThresholds = StabilityThresholds()
    corrections: tuple[CorrectionMethod, ...] = (CorrectionMethod.BONFERRONI, CorrectionMethod.BENJAMINI_HOCHBERG)
    output_dir: Path = Path("audit-output")
    gap_fraction: float = 0.10
    base_dir: Path = Path(".")

    def validate(self) -> None:
        if not self.facets:
            raise ConfigError("config lists no facets")
        names = [f.name for f in self.facets]
        if len(set(names)) != len(names):
            raise ConfigError(f"facet names must be unique: {names}")
        files = [p for f in self.facets for p in (f.control, f.treatment)]
        if self.demographics is not None:
            files.append(self.demographics)
        for p in files:
            if not p.is_file():
                raise ConfigError(f"referenced file does not exist: {p}")
        if not 0 < self.gap_fraction <= 1:
            raise ConfigError("gap_fraction must lie in (0, 1]")


def _schema_from(data: Mapping, system_name: str) -> ScoreSchema:
    try:
        traits = [TraitSpec(str(t["name"]), float(t["min"]), float(t["max"])) for t in data["traits"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad schema declaration: {exc}") from None
    simplex = data.get("simplex_sum")
    return ScoreSchema(system_name, tuple(traits), float(simplex) if simplex is not None else None)


def config_from_dict(data: Mapping, base_dir=".") -> AuditConfig:
    base = Path(base_dir)
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a mapping")
    try:
        system_name = str(data["system_name"])
        schema = _schema_from(data["schema"], system_name)
        facets = [
            FacetSpec(str(f["name"]), base / f["control"], base / f["treatment"])
            for f in (data.get("facets") or [])
        ]
        subgroups = [
            SubgroupSpec(str(s["attribute"]), int(s.get("min_group_size", 10)))
            for s in (data.get("subgroups") or [])
        ]
        th = data.get("thresholds") or {}
        thresholds = StabilityThresholds(
            float(th.get("bare_minimum", 0.90)),
            float(th.get("desirable", 0.95)),
            float(th.get("nominal_alpha", 0.05)),
        )
        corrections = tuple(
            CorrectionMethod(c) for c in data.get("corrections", [m.value for m in CorrectionMethod])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc!r}") from None
    demo = data.get("demographics")
    cfg = AuditConfig(
        system_name=system_name,
        schema=schema,
        facets=facets,
        demographics=base / demo if demo else None,
        subgroups=subgroups,
        thresholds=thresholds,
        corrections=corrections,
        output_dir=base / data.get("output_dir", "audit-output"),
        gap_fraction=float(data.get("gap_fraction", 0.10)),
        base_dir=base,
    )
    cfg.validate()
    return cfg


def load_config(path) -> AuditConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(data, path.parent)


def dump_config(data: Mapping, path) -> None:
    Path(path).write_text(yaml.safe_dump(dict(data), sort_keys=False), encoding="utf-8")


def report_json(report: AuditReport | Mapping) -> str:
    data = report.to_dict() if isinstance(report, AuditReport) else report
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"


def load_report(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read report {path}: {exc}") from None
    if not isinstance(data, dict) or "schema_version" not in data or "verdicts" not in data:
        raise DataError(f"{path} is not a machine report")
    return data


SUMMARY_COLUMNS = (
    "facet", "trait", "subgroup", "n",
    "spearman_r", "rank_order_class",
    "wilcoxon_statistic", "wilcoxon_p", "locational_note",
    "significant_bonferroni", "significant_bh",
    "control_median", "treatment_median",
    "tv_median", "tv_mean", "tv_max",
)


def summary_rows(report: AuditReport | Mapping) -> list[dict]:
    data = report.to_dict() if isinstance(report, AuditReport) else report
    rows = []
    for v in data["verdicts"]:
        corr, loc, tv = v["correlation"], v["locational"], v["total_variation"]
        rows.append({
            "facet": v["facet"],
            "trait": v["trait"],
            "subgroup": v["subgroup"],
            "n": v["n"],
            "spearman_r": corr["statistic"],
            "rank_order_class": v["rank_order_class"],
            "wilcoxon_statistic": loc["statistic"],
            "wilcoxon_p": loc["p_value"],
            "locational_note": loc["method_note"],
            "significant_bonferroni": v["locational_significant_bonferroni"],
            "significant_bh": v["locational_significant_bh"],
            "control_median": v["control_median"],
            "treatment_median": v["treatment_median"],
            "tv_median": tv["median"],
            "tv_mean": tv["mean"],
            "tv_max": tv["max"],
        })
    return rows


def summary_csv(report: AuditReport | Mapping) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in summary_rows(report):
        w.writerow({k: ("" if val is None else val) for k, val in row.items()})
    return buf.getvalue()


def _fmt(v, spec=".3f"):
    return "-" if v is None else format(v, spec)


def summary_text(report: AuditReport | Mapping) -> str:
    data = report.to_dict() if isinstance(report, AuditReport) else report
    th = data["thresholds"]
    lines = [
        f"Stability audit: {data['system_name']}",
        f"thresholds: bare minimum {th['bare_minimum']}, desirable {th['desirable']}, alpha {th['nominal_alpha']}",
        "",
    ]
    for name, c in data["corrections"].items():
        summary = c["corrected_alpha"]
        if isinstance(summary, list):
            summary = f"{summary[0]:.4g}..{summary[-1]:.4g}" if summary else "-"
        elif summary is not None:
            summary = f"{summary:.4g}"
        lines.append(f"{name}: family of {c['family_size']} test(s), corrected alpha {summary or '-'}")
    lines.append("")
    head = f"{'facet':<18}{'trait':<18}{'subgroup':<24}{'n':>5}  {'r':>7}  {'class':<15}{'p':>10}  sig  {'tv med':>7}"
    lines.append(head)
    lines.append("-" * len(head))
    for row in summary_rows(data):
        sig = "B+H" if row["significant_bonferroni"] else ("H" if row["significant_bh"] else "")
        lines.append(
            f"{row['facet']:<18}{row['trait']:<18}{row['subgroup']:<24}{row['n']:>5}  "
            f"{_fmt(row['spearman_r']):>7}  {row['rank_order_class']:<15}{_fmt(row['wilcoxon_p'], '.3g'):>10}  "
            f"{sig or '-':<3}  {_fmt(row['tv_median']):>7}"
        )
    gaps = [
        f"{run}/{trait}: " + ", ".join(f"({lo:g}, {hi:g})" for lo, hi in d["gaps"])
        for run, per in data.get("diagnostics", {}).items()
        for trait, d in per.items()
        if d["gaps"]
    ]
    if gaps:
        lines += ["", "distribution gaps:"] + [f"  {g}" for g in gaps]
    if data.get("warnings"):
        lines += ["", "warnings:"] + [f"  {w}" for w in data["warnings"]]
    return "\n".join(lines) + "\n"


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return 2
    if isinstance(exc, DataError):
        return 3
    return 4


def error_manifest(exc: BaseException) -> str:
    data = {
        "status": "error",
        "exit_code": exit_code_for(exc),
        "error_type": type(exc).__name__,
        "message": str(exc),
    }
    if not isinstance(exc, AuditError):
        data["error_type"] = f"internal:{type(exc).__name__}"
    return json.dumps(data, indent=2, sort_keys=True) + "\n"
