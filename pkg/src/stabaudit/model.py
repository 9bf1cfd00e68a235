"""Score schemas, scoring runs, and control/treatment pairing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Sequence

from .errors import (
    ConfigError,
    EmptyIntersection,
    LengthMismatch,
    OutOfRange,
    SchemaMismatch,
    SimplexViolation,
)

SIMPLEX_TOLERANCE = 1e-6


@dataclass(frozen=True)
class TraitSpec:
    name: str
    min: float
    max: float

    def __post_init__(self):
        if not self.name:
            raise ConfigError("trait name must be nonempty")
        if not (math.isfinite(self.min) and math.isfinite(self.max)):
            raise ConfigError(f"trait {self.name!r}: bounds must be finite")
        if not self.min < self.max:
            raise ConfigError(f"trait {self.name!r}: min must be below max")

    @property
    def span(self) -> float:
        return self.max - self.min


@dataclass(frozen=True)
class ScoreSchema:
    """Declared output space of a scoring system.

    ``simplex_sum``, when set, means every valid vector sums to that constant
    (for instance DiSC percentages that add up to 100).
    """

    system_name: str
    traits: tuple[TraitSpec, ...]
    simplex_sum: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "traits", tuple(self.traits))
        if not self.traits:
            raise ConfigError("a schema needs at least one trait")
        names = [t.name for t in self.traits]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate trait names in {names}")
        if self.simplex_sum is not None:
            if not (math.isfinite(self.simplex_sum) and self.simplex_sum > 0):
                raise ConfigError("simplex_sum must be a positive real")
            for t in self.traits:
                if t.min < 0 or t.max > self.simplex_sum:
                    raise ConfigError(
                        f"trait {t.name!r} range [{t.min}, {t.max}] does not fit "
                        f"inside a simplex summing to {self.simplex_sum}"
                    )

    @property
    def trait_names(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.traits)

    def index(self, trait: str) -> int:
        return self.trait_names.index(trait)

    @classmethod
    def uniform(cls, system_name, names, lo, hi, simplex_sum=None):
        return cls(system_name, tuple(TraitSpec(n, lo, hi) for n in names), simplex_sum)


@dataclass(frozen=True)
class ScoreVector:
    values: tuple[float, ...]

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i):
        return self.values[i]


def validate_score_vector(schema: ScoreSchema, raw: Sequence[float]) -> ScoreVector:
    """Check ``raw`` against ``schema`` and wrap it. Never clamps."""
    values = tuple(float(v) for v in raw)
    if len(values) != len(schema.traits):
        raise LengthMismatch(
            f"expected {len(schema.traits)} values, got {len(values)}"
        )
    for spec, v in zip(schema.traits, values):
        if not math.isfinite(v) or v < spec.min or v > spec.max:
            raise OutOfRange(spec.name, v)
    if schema.simplex_sum is not None:
        total = math.fsum(values)
        if abs(total - schema.simplex_sum) > SIMPLEX_TOLERANCE:
            raise SimplexViolation(total, schema.simplex_sum)
    return ScoreVector(values)


def normalization_constant(schema: ScoreSchema) -> float:
    """Largest possible L1 distance between two valid vectors.

    On a simplex summing to S, moving all mass from one trait to another
    costs 2*S; otherwise each trait contributes its full span.
    """
    if schema.simplex_sum is not None:
        return 2.0 * schema.simplex_sum
    return math.fsum(t.span for t in schema.traits)


@dataclass(frozen=True)
class DemographicProfile:
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.attributes.items():
            if not k or not v:
                raise ConfigError("demographic attribute names and labels must be nonempty")
        object.__setattr__(self, "attributes", dict(self.attributes))

    def get(self, attribute: str) -> str | None:
        return self.attributes.get(attribute)


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    demographics: DemographicProfile = field(default_factory=DemographicProfile)


@dataclass(frozen=True)
class RunTable:
    """One scoring run: subject id to validated score vector.

    ``entry_times`` optionally records when each subject was scored;
    ``scored_at`` is the run-level timestamp (earliest entry time when
    parsed from a file).
    """

    run_id: str
    schema: ScoreSchema
    entries: Mapping[str, ScoreVector]
    facet_label: str = ""
    treatment_label: str = ""
    scored_at: datetime | None = None
    entry_times: Mapping[str, datetime] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "entries", dict(self.entries))
        object.__setattr__(self, "entry_times", dict(self.entry_times))
        n = len(self.schema.traits)
        for sid, vec in self.entries.items():
            if not sid:
                raise ConfigError("subject ids must be nonempty")
            if len(vec) != n:
                raise LengthMismatch(f"subject {sid!r}: vector length {len(vec)} != {n}")

    @classmethod
    def from_rows(cls, run_id, schema, rows: Mapping[str, Sequence[float]], **kw) -> "RunTable":
        entries = {sid: validate_score_vector(schema, raw) for sid, raw in rows.items()}
        return cls(run_id, schema, entries, **kw)

    def __len__(self):
        return len(self.entries)

    def column(self, trait: str) -> list[float]:
        i = self.schema.index(trait)
        return [vec.values[i] for vec in self.entries.values()]


@dataclass(frozen=True)
class PairedAuditSet:
    facet: str
    control: RunTable
    treatment: RunTable
    pairs: tuple[tuple[str, ScoreVector, ScoreVector], ...]
    dropped_control_only: int
    dropped_treatment_only: int
    demographics: Mapping[str, DemographicProfile]

    @property
    def schema(self) -> ScoreSchema:
        return self.control.schema

    @property
    def n(self) -> int:
        return len(self.pairs)

    @property
    def subject_ids(self) -> list[str]:
        return [p[0] for p in self.pairs]

    def columns(self, trait: str) -> tuple[list[float], list[float]]:
        i = self.schema.index(trait)
        return [c.values[i] for _, c, _ in self.pairs], [t.values[i] for _, _, t in self.pairs]

    def subset(self, subject_ids: Iterable[str]) -> "PairedAuditSet":
        keep = set(subject_ids)
        return PairedAuditSet(
            facet=self.facet,
            control=self.control,
            treatment=self.treatment,
            pairs=tuple(p for p in self.pairs if p[0] in keep),
            dropped_control_only=self.dropped_control_only,
            dropped_treatment_only=self.dropped_treatment_only,
            demographics={k: v for k, v in self.demographics.items() if k in keep},
        )


def pair_runs(
    control: RunTable,
    treatment: RunTable,
    cohort: Iterable[SubjectRecord] = (),
    facet: str | None = None,
) -> PairedAuditSet:
    """Align two runs on shared subject ids; unmatched subjects are counted, not imputed."""
    if control.schema != treatment.schema:
        raise SchemaMismatch(
            f"runs {control.run_id!r} and {treatment.run_id!r} use different schemas"
        )
    shared = sorted(set(control.entries) & set(treatment.entries))
    if not shared:
        raise EmptyIntersection(
            f"runs {control.run_id!r} and {treatment.run_id!r} share no subjects"
        )
    profiles = {rec.subject_id: rec.demographics for rec in cohort}
    return PairedAuditSet(
        facet=facet if facet is not None else (treatment.facet_label or treatment.run_id),
        control=control,
        treatment=treatment,
        pairs=tuple((sid, control.entries[sid], treatment.entries[sid]) for sid in shared),
        dropped_control_only=len(set(control.entries) - set(treatment.entries)),
        dropped_treatment_only=len(set(treatment.entries) - set(control.entries)),
        demographics={sid: profiles.get(sid, DemographicProfile()) for sid in shared},
    )


def l1_distance(u: ScoreVector, v: ScoreVector) -> float:
    return math.fsum(abs(a - b) for a, b in zip(u.values, v.values))
