"""End-to-end audit runs and the synthetic demo scenarios."""

from __future__ import annotations

import logging
import re
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .auditor import OVERALL, AuditReport, audit, total_variation
from .errors import UnknownScenario
from .formats import (
    AuditConfig,
    dump_config,
    error_manifest,
    load_config,
    parse_demographics_csv,
    parse_runs_csv,
    report_json,
    summary_csv,
    write_demographics_csv,
    write_runs_csv,
)
from .model import RunTable, ScoreSchema, SubjectRecord, pair_runs
from .plots import render_box, render_scatter
from .synth import (
    EPOCH,
    AdsBehaviorConfig,
    LinkageTable,
    apply_treatment,
    cluster_index,
    generate_cohort,
    random_guesser,
    score,
    treatment_clock,
)

log = logging.getLogger(__name__)

REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.csv"
PLOT_DIR = "plots"
ERROR_FILE = "error.json"


@dataclass
class ReportBundle:
    report: AuditReport
    report_data: dict
    summary: str
    plots: dict[str, str] = field(default_factory=dict)

    @property
    def machine_report(self) -> str:
        return report_json(self.report_data)

    def files(self) -> dict[str, str]:
        out = {REPORT_FILE: self.machine_report, SUMMARY_FILE: self.summary}
        out.update({f"{PLOT_DIR}/{name}": svg for name, svg in self.plots.items()})
        return out


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", text).strip("_") or "x"


@contextmanager
def staged_output(out_dir):
    """Stage files in a scratch directory and move them into ``out_dir`` only on success.

    On failure the scratch directory is discarded and ``out_dir`` receives a
    single error manifest.
    """
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    scratch = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield scratch
    except BaseException as exc:
        shutil.rmtree(scratch, ignore_errors=True)
        if isinstance(exc, Exception):
            out.mkdir(parents=True, exist_ok=True)
            (out / ERROR_FILE).write_text(error_manifest(exc), encoding="utf-8")
        raise
    out.mkdir(parents=True, exist_ok=True)
    (out / ERROR_FILE).unlink(missing_ok=True)
    for entry in sorted(scratch.iterdir()):
        target = out / entry.name
        if target.is_dir():
            shutil.rmtree(target)
        elif target.exists():
            target.unlink()
        shutil.move(str(entry), str(target))
    scratch.rmdir()


def write_bundle(bundle: ReportBundle, directory) -> None:
    directory = Path(directory)
    for rel, text in bundle.files().items():
        path = directory / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


def _build_plots(report: AuditReport, sets, subgroup_specs) -> tuple[dict[str, str], list[dict]]:
    plots, index = {}, []
    schema = sets[0].schema
    for s in sets:
        for spec in schema.traits:
            control, treatment = s.columns(spec.name)
            name = f"scatter_{_slug(s.facet)}_{_slug(spec.name)}.svg"
            plots[name] = render_scatter(control, treatment, spec, title=f"{s.facet}: {spec.name}")
            index.append({"file": f"{PLOT_DIR}/{name}", "kind": "scatter", "facet": s.facet, "trait": spec.name, "subgroup": OVERALL})

    tvs = {s.facet: total_variation(s) for s in sets}
    plots["box_total_variation.svg"] = render_box(
        {f: list(tv.per_subject.values()) for f, tv in tvs.items()},
        title="normalized L1 distance by facet",
    )
    index.append({"file": f"{PLOT_DIR}/box_total_variation.svg", "kind": "box", "facet": None, "trait": None, "subgroup": OVERALL})

    reported = {(v.facet, v.subgroup) for v in report.verdicts}
    for spec in subgroup_specs:
        for s in sets:
            groups: dict[str, list[float]] = {}
            for sid in s.subject_ids:
                label = s.demographics[sid].get(spec.attribute)
                if label is not None:
                    groups.setdefault(f"{spec.attribute}={label}", []).append(tvs[s.facet].per_subject[sid])
            if not groups:
                continue
            drawn = {k: v for k, v in sorted(groups.items()) if (s.facet, k) in reported}
            skipped = {k: len(v) for k, v in sorted(groups.items()) if (s.facet, k) not in reported}
            name = f"box_total_variation_{_slug(s.facet)}_{_slug(spec.attribute)}.svg"
            plots[name] = render_box(drawn, title=f"{s.facet}: normalized L1 by {spec.attribute}", skipped=skipped)
            index.append({"file": f"{PLOT_DIR}/{name}", "kind": "box", "facet": s.facet, "trait": None, "subgroup": spec.attribute})
    return plots, index


def _run_id(path: Path, base: Path) -> str:
    try:
        return path.relative_to(base).as_posix()
    except ValueError:
        return path.name


def build_audit(config: AuditConfig, extra: dict | None = None) -> ReportBundle:
    """Everything ``run_audit`` does except touching the output directory."""
    config.validate()
    runs: dict[Path, RunTable] = {}

    def load(path: Path, facet: str, label: str) -> RunTable:
        if path not in runs:
            runs[path] = parse_runs_csv(path, config.schema, run_id=_run_id(path, config.base_dir),
                                        facet_label=facet, treatment_label=label)
        return runs[path]

    profiles = parse_demographics_csv(config.demographics) if config.demographics else {}
    cohort = [SubjectRecord(sid, prof) for sid, prof in profiles.items()]
    sets = []
    for f in config.facets:
        control = load(f.control, "", "control")
        treatment = load(f.treatment, f.name, f.name)
        sets.append(pair_runs(control, treatment, cohort, facet=f.name))

    pairing = {
        s.facet: {
            "control_run": s.control.run_id,
            "treatment_run": s.treatment.run_id,
            "pairs": s.n,
            "dropped_control_only": s.dropped_control_only,
            "dropped_treatment_only": s.dropped_treatment_only,
        }
        for s in sets
    }
    report = audit(
        config.system_name,
        sets,
        config.thresholds,
        config.subgroups,
        config.gap_fraction,
        corrections=config.corrections,
        extra={"pairing": pairing, **(extra or {})},
    )
    if profiles:
        used = {sid for r in runs.values() for sid in r.entries}
        unused = sorted(set(profiles) - used)
        if unused:
            report.warnings.append(f"{len(unused)} subject(s) in the demographics file appear in no run")

    plots, index = _build_plots(report, sets, config.subgroups)
    report.extra["plots"] = index
    data = report.to_dict()
    return ReportBundle(report, data, summary_csv(data), plots)


def run_audit(config: AuditConfig, out_dir=None, extra: dict | None = None) -> ReportBundle:
    """Run the audit and write report, summary and plots (all or nothing)."""
    out = Path(out_dir) if out_dir is not None else config.output_dir
    with staged_output(out) as scratch:
        bundle = build_audit(config, extra)
        write_bundle(bundle, scratch)
    log.info("wrote %d file(s) to %s", len(bundle.files()), out)
    return bundle


# ---------------------------------------------------------------- demo

DEMO_N = 200
DEMO_FACETS = ("file_format", "source_context", "url_embedding", "algorithm_time", "rerun")
DEMO_DEMOGRAPHICS = (
    ("gender", {"male": 0.60, "female": 0.38, "nonbinary": 0.02}),
    ("primary_language", {"english": 0.60, "other": 0.40}),
)

DISC_SCHEMA = ScoreSchema.uniform(
    "SyntheticDiSC", ("Dominance", "Influence", "Steadiness", "Calculativeness"), 0.0, 10.0
)
SIMPLEX_SCHEMA = ScoreSchema.uniform(
    "SyntheticSimplexDiSC", ("Dominance", "Influence", "Steadiness", "Conscientiousness"), 0.0, 100.0, 100.0
)


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    knobs: dict = field(default_factory=dict)
    # facet -> ordered treatment steps, when a facet needs more than its own treatment
    steps: dict = field(default_factory=dict)


SCENARIOS = {
    s.name: s
    for s in [
        Scenario("stable", "every instability knob off"),
        Scenario(
            "file_format_unstable",
            "plain-text files are displaced across a clustered Steadiness scale; light per-call jitter elsewhere",
            knobs={
                "deterministic": False,
                "jitter_sd": 0.01,
                "facet_sensitivity": {"txt": 1.0},
                "cluster_centers": {"Steadiness": [2.5, 6.0]},
                "snap_radius": 0.5,
            },
        ),
        Scenario(
            "discontinuous",
            "deterministic scorer whose Steadiness and Calculativeness outputs snap onto clusters",
            knobs={
                "cluster_centers": {"Steadiness": [2.5, 6.0], "Calculativeness": [3.0, 7.5]},
                "snap_radius": 0.5,
            },
        ),
        Scenario(
            "linked",
            "profiles carrying a link register the subject's email; later documents with that email get the profile score",
            knobs={"linkage_enabled": True, "facet_sensitivity": {"profile": 0.6}},
            steps={"source_context": [("source_context", {}), ("url_embedding", {"action": "add"})]},
        ),
        Scenario(
            "drifting",
            "deterministic scorer whose outputs drift with the scoring clock",
            knobs={"drift_per_day": 0.003},
        ),
        Scenario("baseline", "two independent random-guesser runs on a simplex schema"),
    ]
}


def _expected_gaps(cfg: AdsBehaviorConfig) -> dict:
    out = {}
    for trait, centers in (cfg.cluster_centers or {}).items():
        out[trait] = [[c0 + cfg.snap_radius, c1 - cfg.snap_radius] for c0, c1 in zip(centers[:-1], centers[1:])]
    return out


def _simulate(scenario: Scenario, seed: int, cohort_docs):
    """Score the control run and each facet's treatment run with the synthetic scorer."""
    cfg = AdsBehaviorConfig(DISC_SCHEMA, base_seed=seed, **scenario.knobs)
    state = LinkageTable()
    control = {d.subject_id: score(d, cfg, state, EPOCH) for d in cohort_docs}
    runs = {"control": (control, EPOCH)}
    linked = {}
    for facet in DEMO_FACETS:
        now = treatment_clock(facet, EPOCH)
        steps = scenario.steps.get(facet, [(facet, {})])
        vectors, hits = {}, 0
        for d in cohort_docs:
            for step, params in steps:
                d = apply_treatment(d, step, params)
            if cfg.linkage_enabled and d.contact_key in state:
                hits += 1
            vectors[d.subject_id] = score(d, cfg, state, now)
        runs[facet] = (vectors, now)
        linked[facet] = hits

    truth = {
        "knobs": {
            "deterministic": cfg.deterministic,
            "jitter_sd": cfg.jitter_sd,
            "drift_per_day": cfg.drift_per_day,
            "facet_sensitivity": dict(cfg.facet_sensitivity),
            "cluster_centers": {k: list(v) for k, v in (cfg.cluster_centers or {}).items()},
            "snap_radius": cfg.snap_radius,
            "linkage_enabled": cfg.linkage_enabled,
        },
        "expected_gaps": _expected_gaps(cfg),
        "boundary_crossing": {},
        "linked_subjects": linked if cfg.linkage_enabled else {},
    }
    for trait, centers in (cfg.cluster_centers or {}).items():
        i = DISC_SCHEMA.index(trait)
        for facet in DEMO_FACETS:
            moved = sum(
                cluster_index(control[sid].values[i], centers) != cluster_index(vec.values[i], centers)
                for sid, vec in runs[facet][0].items()
            )
            truth["boundary_crossing"].setdefault(facet, {})[trait] = moved / len(control)
    return DISC_SCHEMA, runs, truth


def _simulate_baseline(seed: int, cohort_docs):
    runs = {}
    for label in ("control", "random_guesser"):
        runs[label] = ({d.subject_id: random_guesser(SIMPLEX_SCHEMA, (seed, label, d.subject_id)) for d in cohort_docs}, EPOCH)
    truth = {"knobs": {}, "random_guesser_seeds": [[seed, "control"], [seed, "random_guesser"]]}
    return SIMPLEX_SCHEMA, runs, truth


def demo(seed: int, scenario: str, out_dir) -> ReportBundle:
    """Simulate a cohort under ``scenario``, write its inputs, and audit them."""
    if scenario not in SCENARIOS:
        raise UnknownScenario(f"unknown scenario {scenario!r}; choose from {sorted(SCENARIOS)}")
    sc = SCENARIOS[scenario]
    subjects, docs = generate_cohort(DEMO_N, seed, DEMO_DEMOGRAPHICS)
    if scenario == "baseline":
        schema, runs, truth = _simulate_baseline(seed, docs)
    else:
        schema, runs, truth = _simulate(sc, seed, docs)
    facets = [k for k in runs if k != "control"]
    truth = {"scenario": scenario, "description": sc.description, "seed": seed, "n_subjects": DEMO_N, **truth}

    out = Path(out_dir)
    with staged_output(out) as scratch:
        inputs = scratch / "inputs"
        (inputs / "runs").mkdir(parents=True)
        for label, (vectors, now) in runs.items():
            table = RunTable(label, schema, vectors, entry_times={sid: now for sid in vectors})
            write_runs_csv(table, inputs / "runs" / f"{label}.csv")
        write_demographics_csv(
            {s.subject_id: s.demographics for s in subjects},
            inputs / "demographics.csv",
            [attr for attr, _ in DEMO_DEMOGRAPHICS],
        )
        config_data = {
            "system_name": schema.system_name,
            "schema": {
                "traits": [{"name": t.name, "min": t.min, "max": t.max} for t in schema.traits],
                "simplex_sum": schema.simplex_sum,
            },
            "facets": [
                {"name": f, "control": "runs/control.csv", "treatment": f"runs/{f}.csv"} for f in facets
            ],
            "demographics": "demographics.csv",
            "subgroups": [{"attribute": attr, "min_group_size": 10} for attr, _ in DEMO_DEMOGRAPHICS],
            "thresholds": {"bare_minimum": 0.90, "desirable": 0.95, "nominal_alpha": 0.05},
            "corrections": ["Bonferroni", "BenjaminiHochberg"],
            "output_dir": "..",
            "gap_fraction": 0.10,
        }
        dump_config(config_data, inputs / "config.yaml")
        bundle = build_audit(load_config(inputs / "config.yaml"), extra={"ground_truth": truth})
        write_bundle(bundle, scratch)
    return bundle
