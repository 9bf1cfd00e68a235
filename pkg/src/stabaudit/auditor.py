"""Facet audits: rank-order, locational and total-variation stability.

A facet audit compares a control run with one treatment run. Each
(facet, trait) cell gets a Spearman correlation classified against
psychometric reliability cut-offs, a Wilcoxon signed-rank test on the
paired differences, and a summary of normalized L1 distance per subject.
Locational p-values are corrected as one family per audited system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AllZeroDifferences,
    ConfigError,
    DataError,
    InconsistentFamily,
    TooFewPairs,
    TooFewSamples,
    UnknownAttribute,
)
from .model import PairedAuditSet, RunTable, l1_distance, normalization_constant
from .stats import (
    CorrectionMethod,
    CorrectionResult,
    TestKind,
    TestResult,
    correct,
    spearman,
    wilcoxon_signed_rank,
)

OVERALL = "overall"
REPORT_SCHEMA_VERSION = "1.0"


@dataclass(frozen=True)
class StabilityThresholds:
    bare_minimum: float = 0.90
    desirable: float = 0.95
    nominal_alpha: float = 0.05

    def __post_init__(self):
        if not 0 < self.bare_minimum <= self.desirable <= 1:
            raise ConfigError("thresholds must satisfy 0 < bare_minimum <= desirable <= 1")
        if not 0 < self.nominal_alpha < 1:
            raise ConfigError("nominal_alpha must lie in (0, 1)")

    def to_dict(self):
        return {"bare_minimum": self.bare_minimum, "desirable": self.desirable, "nominal_alpha": self.nominal_alpha}


class RankOrderClass(str, Enum):
    MEETS_DESIRABLE = "MeetsDesirable"
    MEETS_MINIMUM = "MeetsMinimum"
    UNSTABLE = "Unstable"
    UNDEFINED = "Undefined"


def classify(r: float | None, thresholds: StabilityThresholds) -> RankOrderClass:
    if r is None:
        return RankOrderClass.UNDEFINED
    if r >= thresholds.desirable:
        return RankOrderClass.MEETS_DESIRABLE
    if r >= thresholds.bare_minimum:
        return RankOrderClass.MEETS_MINIMUM
    return RankOrderClass.UNSTABLE


@dataclass(frozen=True)
class SubgroupSpec:
    attribute: str
    min_group_size: int = 10

    def __post_init__(self):
        if not self.attribute:
            raise ConfigError("subgroup attribute must be nonempty")
        if self.min_group_size < 1:
            raise ConfigError("min_group_size must be positive")


@dataclass(frozen=True)
class TotalVariation:
    per_subject: dict[str, float]
    median: float
    mean: float
    max: float

    def summary(self) -> dict:
        return {"median": self.median, "mean": self.mean, "max": self.max}


@dataclass(frozen=True)
class TraitVerdict:
    facet: str
    trait: str
    subgroup: str
    n: int
    correlation: TestResult
    rank_order_class: RankOrderClass
    locational: TestResult
    locational_significant_bonferroni: bool
    locational_significant_bh: bool
    control_median: float
    treatment_median: float
    tv_summary: dict

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.facet, self.trait, self.subgroup)

    def to_dict(self) -> dict:
        return {
            "facet": self.facet,
            "trait": self.trait,
            "subgroup": self.subgroup,
            "n": self.n,
            "correlation": self.correlation.to_dict(),
            "rank_order_class": self.rank_order_class.value,
            "locational": self.locational.to_dict(),
            "locational_significant_bonferroni": self.locational_significant_bonferroni,
            "locational_significant_bh": self.locational_significant_bh,
            "control_median": self.control_median,
            "treatment_median": self.treatment_median,
            "total_variation": dict(self.tv_summary),
        }


@dataclass(frozen=True)
class TraitDistribution:
    n: int
    median: float
    skewness: float | None
    gaps: tuple[tuple[float, float], ...]
    degenerate: bool

    def to_dict(self):
        return {
            "n": self.n,
            "median": self.median,
            "skewness": self.skewness,
            "skewness_defined": self.skewness is not None,
            "gaps": [list(g) for g in self.gaps],
            "degenerate": self.degenerate,
        }


@dataclass
class LocationalAudit:
    cells: dict[tuple[str, str], TestResult]
    bonferroni: CorrectionResult
    benjamini_hochberg: CorrectionResult
    # (facet, trait) -> (bonferroni reject, BH reject); cells outside the family are absent
    decisions: dict[tuple[str, str], tuple[bool, bool]]


@dataclass
class SubgroupBreakdown:
    attribute: str
    verdicts: list[TraitVerdict]
    bonferroni: CorrectionResult
    benjamini_hochberg: CorrectionResult
    warnings: list[str] = field(default_factory=list)


@dataclass
class AuditReport:
    system_name: str
    thresholds: StabilityThresholds
    facets: list[str]
    traits: list[str]
    verdicts: list[TraitVerdict]
    corrections: dict[str, CorrectionResult]
    subgroup_corrections: dict[str, dict[str, CorrectionResult]]
    diagnostics: dict[str, dict[str, TraitDistribution]]
    warnings: list[str]
    extra: dict = field(default_factory=dict)

    def overall(self) -> list[TraitVerdict]:
        return [v for v in self.verdicts if v.subgroup == OVERALL]

    def verdict(self, facet, trait, subgroup=OVERALL) -> TraitVerdict:
        for v in self.verdicts:
            if v.key == (facet, trait, subgroup):
                return v
        raise KeyError((facet, trait, subgroup))

    def to_dict(self) -> dict:
        out = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "system_name": self.system_name,
            "thresholds": self.thresholds.to_dict(),
            "facets": list(self.facets),
            "traits": list(self.traits),
            "verdicts": [v.to_dict() for v in self.verdicts],
            "corrections": {k: c.to_dict() for k, c in self.corrections.items()},
            "subgroup_corrections": {
                attr: {k: c.to_dict() for k, c in fam.items()}
                for attr, fam in self.subgroup_corrections.items()
            },
            "diagnostics": {
                run: {trait: d.to_dict() for trait, d in per.items()}
                for run, per in self.diagnostics.items()
            },
            "warnings": list(self.warnings),
        }
        out.update(self.extra)
        return out


def audit_rank_order(pairs: PairedAuditSet, thresholds: StabilityThresholds):
    """Spearman correlation per trait, classified against the thresholds."""
    if pairs.n < 3:
        raise TooFewPairs(f"facet {pairs.facet!r}: need at least 3 pairs, got {pairs.n}")
    out = {}
    for trait in pairs.schema.trait_names:
        control, treatment = pairs.columns(trait)
        res = spearman(control, treatment)
        out[trait] = (res, classify(res.statistic, thresholds))
    return out


def _locational_cell(control, treatment) -> TestResult:
    try:
        return wilcoxon_signed_rank(control, treatment)
    except AllZeroDifferences:
        return TestResult.undefined(
            TestKind.WILCOXON_SIGNED_RANK, len(control), "no locational change: all paired differences are zero"
        )
    except DataError as exc:
        return TestResult.undefined(TestKind.WILCOXON_SIGNED_RANK, len(control), f"error: {exc}")


def _correct_family(cells: dict, alpha: float):
    family = [k for k, res in cells.items() if res.defined]
    pvals = [cells[k].p_value for k in family]
    bonf = correct(pvals, alpha, CorrectionMethod.BONFERRONI)
    bh = correct(pvals, alpha, CorrectionMethod.BENJAMINI_HOCHBERG)
    decisions = {
        k: (bonf.per_test[i].reject, bh.per_test[i].reject) for i, k in enumerate(family)
    }
    return bonf, bh, decisions


def audit_locational(sets: Sequence[PairedAuditSet], thresholds: StabilityThresholds) -> LocationalAudit:
    """Wilcoxon test per (facet, trait), corrected over the whole family.

    Cells with no nonzero difference are reported as "no locational change"
    and are left out of the correction family.
    """
    facets = [s.facet for s in sets]
    if len(set(facets)) != len(facets):
        raise ConfigError(f"facet names must be unique, got {facets}")
    cells = {}
    for s in sets:
        if s.n == 0:
            raise TooFewPairs(f"facet {s.facet!r} has no pairs")
        for trait in s.schema.trait_names:
            cells[(s.facet, trait)] = _locational_cell(*s.columns(trait))
    bonf, bh, decisions = _correct_family(cells, thresholds.nominal_alpha)
    return LocationalAudit(cells, bonf, bh, decisions)


def total_variation(pairs: PairedAuditSet) -> TotalVariation:
    """Per-subject L1 distance divided by the schema's largest possible distance."""
    scale = normalization_constant(pairs.schema)
    per = {sid: l1_distance(c, t) / scale for sid, c, t in pairs.pairs}
    if not per:
        return TotalVariation({}, 0.0, 0.0, 0.0)
    vals = np.fromiter(per.values(), dtype=float)
    return TotalVariation(per, float(np.median(vals)), float(vals.mean()), float(vals.max()))


def _tv_subset(tv: TotalVariation, ids: Iterable[str]) -> dict:
    vals = np.array([tv.per_subject[i] for i in ids], dtype=float)
    if len(vals) == 0:
        return {"median": 0.0, "mean": 0.0, "max": 0.0}
    return {"median": float(np.median(vals)), "mean": float(vals.mean()), "max": float(vals.max())}


def _build_verdicts(pairs: PairedAuditSet, subgroup: str, thresholds, locational: dict, decisions: dict):
    tv = total_variation(pairs).summary()
    if pairs.n >= 3:
        rank = audit_rank_order(pairs, thresholds)
    else:
        rank = {
            t: (TestResult.undefined(TestKind.SPEARMAN, pairs.n, "too few pairs"), RankOrderClass.UNDEFINED)
            for t in pairs.schema.trait_names
        }
    verdicts = []
    for trait in pairs.schema.trait_names:
        control, treatment = pairs.columns(trait)
        corr, cls = rank[trait]
        bonf, bh = decisions.get(trait, (False, False))
        verdicts.append(
            TraitVerdict(
                facet=pairs.facet,
                trait=trait,
                subgroup=subgroup,
                n=pairs.n,
                correlation=corr,
                rank_order_class=cls,
                locational=locational[trait],
                locational_significant_bonferroni=bonf,
                locational_significant_bh=bh,
                control_median=float(np.median(control)),
                treatment_median=float(np.median(treatment)),
                tv_summary=tv,
            )
        )
    return verdicts


def subgroup_breakdown(
    sets: PairedAuditSet | Sequence[PairedAuditSet],
    spec: SubgroupSpec,
    thresholds: StabilityThresholds,
) -> SubgroupBreakdown:
    """Per-group verdicts for one demographic attribute.

    Groups below ``spec.min_group_size`` are skipped with a warning. The
    locational tests of all groups, across every facet passed in, form one
    correction family for the attribute.
    """
    if isinstance(sets, PairedAuditSet):
        sets = [sets]
    seen = any(spec.attribute in prof.attributes for s in sets for prof in s.demographics.values())
    if not seen:
        raise UnknownAttribute(f"no paired subject carries attribute {spec.attribute!r}")

    warnings = []
    groups = []  # (set, label, subset)
    for s in sets:
        labels: dict[str, list[str]] = {}
        for sid in s.subject_ids:
            profile = s.demographics.get(sid)
            label = profile.get(spec.attribute) if profile is not None else None
            if label is not None:
                labels.setdefault(label, []).append(sid)
        for label in sorted(labels):
            ids = labels[label]
            if len(ids) < spec.min_group_size:
                warnings.append(
                    f"facet {s.facet!r}: subgroup {spec.attribute}={label} skipped "
                    f"(n={len(ids)} < {spec.min_group_size})"
                )
                continue
            groups.append((s, f"{spec.attribute}={label}", s.subset(ids)))

    cells = {}
    for s, label, sub in groups:
        for trait in s.schema.trait_names:
            cells[(s.facet, label, trait)] = _locational_cell(*sub.columns(trait))
    bonf, bh, decisions = _correct_family(cells, thresholds.nominal_alpha)

    verdicts = []
    for s, label, sub in groups:
        loc = {t: cells[(s.facet, label, t)] for t in s.schema.trait_names}
        dec = {t: decisions[(s.facet, label, t)] for t in s.schema.trait_names if (s.facet, label, t) in decisions}
        verdicts.extend(_build_verdicts(sub, label, thresholds, loc, dec))
    return SubgroupBreakdown(spec.attribute, verdicts, bonf, bh, warnings)


def _skewness(vals: np.ndarray) -> float | None:
    n = len(vals)
    if np.all(vals == vals[0]):
        return None
    dev = vals - vals.mean()
    m2 = float(np.mean(dev**2))
    m3 = float(np.mean(dev**3))
    if m2 == 0.0:
        return None
    g1 = m3 / m2**1.5
    return g1 * math.sqrt(n * (n - 1)) / (n - 2)


def distribution_summary(run: RunTable, gap_fraction: float = 0.10) -> dict[str, TraitDistribution]:
    """Median, adjusted sample skewness, and empty intervals per trait.

    A gap is a maximal interval between consecutive observed values that is
    at least ``gap_fraction`` of the trait range wide.
    """
    if len(run) < 5:
        raise TooFewSamples(f"run {run.run_id!r}: need at least 5 entries, got {len(run)}")
    if not 0 < gap_fraction <= 1:
        raise ConfigError("gap_fraction must lie in (0, 1]")
    out = {}
    for spec in run.schema.traits:
        vals = np.array(sorted(run.column(spec.name)), dtype=float)
        uniq = np.unique(vals)
        width = gap_fraction * spec.span
        gaps = tuple(
            (float(lo), float(hi)) for lo, hi in zip(uniq[:-1], uniq[1:]) if hi - lo >= width
        )
        out[spec.name] = TraitDistribution(
            n=len(vals),
            median=float(np.median(vals)),
            skewness=_skewness(vals),
            gaps=gaps,
            degenerate=len(uniq) == 1,
        )
    return out


def compile_report(
    system_name: str,
    thresholds: StabilityThresholds,
    facets: Sequence[str],
    traits: Sequence[str],
    verdicts: Sequence[TraitVerdict],
    corrections: dict[str, CorrectionResult],
    diagnostics: dict[str, dict[str, TraitDistribution]],
    warnings: Sequence[str],
    subgroup_corrections: dict[str, dict[str, CorrectionResult]] | None = None,
    extra: dict | None = None,
) -> AuditReport:
    if not facets:
        raise ConfigError("an audit needs at least one facet")
    facet_pos = {f: i for i, f in enumerate(facets)}
    trait_pos = {t: i for i, t in enumerate(traits)}

    overall = {}
    for v in verdicts:
        if v.subgroup == OVERALL:
            if v.key in overall:
                raise InconsistentFamily(f"duplicate overall verdict for {v.key}")
            overall[v.key] = v
    for f in facets:
        for t in traits:
            if (f, t, OVERALL) not in overall:
                raise InconsistentFamily(f"missing overall verdict for ({f}, {t})")
    performed = sum(1 for v in overall.values() if v.locational.defined)
    for name, c in corrections.items():
        if c.m != performed:
            raise InconsistentFamily(
                f"{name} correction covers {c.m} tests but {performed} overall tests were performed"
            )

    def order(v: TraitVerdict):
        return (facet_pos[v.facet], trait_pos[v.trait], v.subgroup != OVERALL, v.subgroup)

    return AuditReport(
        system_name=system_name,
        thresholds=thresholds,
        facets=list(facets),
        traits=list(traits),
        verdicts=sorted(verdicts, key=order),
        corrections=dict(corrections),
        subgroup_corrections=dict(subgroup_corrections or {}),
        diagnostics={k: diagnostics[k] for k in sorted(diagnostics)},
        warnings=list(warnings),
        extra=dict(extra or {}),
    )


def _mask(decision: tuple[bool, bool], methods) -> tuple[bool, bool]:
    bonf, bh = decision
    return (bonf and CorrectionMethod.BONFERRONI in methods, bh and CorrectionMethod.BENJAMINI_HOCHBERG in methods)


def _masked_verdict(v: TraitVerdict, methods) -> TraitVerdict:
    bonf, bh = _mask((v.locational_significant_bonferroni, v.locational_significant_bh), methods)
    return replace(v, locational_significant_bonferroni=bonf, locational_significant_bh=bh)


def _select(results: dict, methods) -> dict[str, CorrectionResult]:
    return {m.value: c for m, c in results.items() if m in methods}


def audit(
    system_name: str,
    sets: Sequence[PairedAuditSet],
    thresholds: StabilityThresholds = StabilityThresholds(),
    subgroups: Sequence[SubgroupSpec] = (),
    gap_fraction: float = 0.10,
    corrections: Sequence[CorrectionMethod] = tuple(CorrectionMethod),
    extra: dict | None = None,
) -> AuditReport:
    """Run every stability measure over a list of facet pairings.

    ``corrections`` picks the multiple-test corrections to apply; a method
    left out is absent from the report and its significance flags stay False.
    """
    methods = {CorrectionMethod(m) for m in corrections}
    if not methods:
        raise ConfigError("select at least one correction method")
    if not sets:
        raise ConfigError("an audit needs at least one facet")
    schema = sets[0].schema
    if any(s.schema != schema for s in sets):
        raise ConfigError("all facets of one audit must share a schema")
    warnings: list[str] = []
    for s in sets:
        if s.dropped_control_only or s.dropped_treatment_only:
            warnings.append(
                f"facet {s.facet!r}: dropped {s.dropped_control_only} control-only and "
                f"{s.dropped_treatment_only} treatment-only subject(s)"
            )
        c_at, t_at = s.control.scored_at, s.treatment.scored_at
        if c_at is not None and t_at is not None and c_at != t_at:
            days = abs((t_at - c_at).total_seconds()) / 86400
            warnings.append(
                f"facet {s.facet!r}: control and treatment were scored {days:.2f} day(s) apart; "
                "algorithm-time may confound this comparison"
            )

    loc = audit_locational(sets, thresholds)
    verdicts = []
    for s in sets:
        per_trait = {t: loc.cells[(s.facet, t)] for t in schema.trait_names}
        dec = {
            t: _mask(loc.decisions[(s.facet, t)], methods)
            for t in schema.trait_names
            if (s.facet, t) in loc.decisions
        }
        verdicts.extend(_build_verdicts(s, OVERALL, thresholds, per_trait, dec))

    subgroup_corrections = {}
    for spec in subgroups:
        try:
            br = subgroup_breakdown(sets, spec, thresholds)
        except UnknownAttribute as exc:
            warnings.append(str(exc))
            continue
        verdicts.extend(
            v if methods == set(CorrectionMethod) else _masked_verdict(v, methods) for v in br.verdicts
        )
        warnings.extend(br.warnings)
        subgroup_corrections[spec.attribute] = _select(
            {CorrectionMethod.BONFERRONI: br.bonferroni, CorrectionMethod.BENJAMINI_HOCHBERG: br.benjamini_hochberg},
            methods,
        )

    diagnostics = {}
    for s in sets:
        for run in (s.control, s.treatment):
            if run.run_id in diagnostics:
                continue
            try:
                diagnostics[run.run_id] = distribution_summary(run, gap_fraction)
            except TooFewSamples as exc:
                warnings.append(str(exc))

    return compile_report(
        system_name,
        thresholds,
        [s.facet for s in sets],
        list(schema.trait_names),
        verdicts,
        _select(
            {CorrectionMethod.BONFERRONI: loc.bonferroni, CorrectionMethod.BENJAMINI_HOCHBERG: loc.benjamini_hochberg},
            methods,
        ),
        diagnostics,
        warnings,
        subgroup_corrections=subgroup_corrections,
        extra=extra,
    )
