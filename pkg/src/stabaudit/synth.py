"""A synthetic scoring system with injectable instabilities.

The scorer is a seeded hash of each document's content into the score space,
optionally perturbed by facet-dependent displacement, clock drift, per-call
jitter and snapping onto clusters, plus an email-keyed linkage memory. Every
knob is off by default, in which case the score depends on ``content_seed``
alone.

Magnitudes ``facet_sensitivity``, ``jitter_sd`` and ``drift_per_day`` are
fractions of each trait's span. ``cluster_centers`` and ``snap_radius`` are
in trait units.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, EmptyDistribution, UnknownFacet
from .model import DemographicProfile, ScoreSchema, ScoreVector, SubjectRecord, validate_score_vector

FACETS = ("file_format", "source_context", "url_embedding", "algorithm_time", "participant_time", "rerun")

EPOCH = datetime(2021, 1, 15, tzinfo=timezone.utc)
AUTHORED_AT = datetime(2020, 11, 23, tzinfo=timezone.utc)


def seeded_rng(*parts) -> np.random.Generator:
    """Generator keyed on arbitrary printable parts, stable across processes."""
    digest = hashlib.blake2b("\x1f".join(map(str, parts)).encode(), digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


@dataclass(frozen=True)
class SyntheticDocument:
    subject_id: str
    content_seed: int
    format_tag: str = "pdf"
    source_tag: str = "resume"
    embedded_link: str | None = None
    contact_key: str | None = None
    authored_at: datetime = AUTHORED_AT

    def tags(self) -> list[str]:
        out = [self.format_tag, self.source_tag]
        if self.embedded_link:
            out.append("link")
        return out


@dataclass(frozen=True)
class AdsBehaviorConfig:
    schema: ScoreSchema
    base_seed: int = 0
    deterministic: bool = True
    jitter_sd: float = 0.0
    drift_per_day: float = 0.0
    facet_sensitivity: Mapping[str, float] = field(default_factory=dict)
    cluster_centers: Mapping[str, Sequence[float]] | None = None
    snap_radius: float = 0.0
    linkage_enabled: bool = False
    reference_time: datetime = EPOCH

    def __post_init__(self):
        object.__setattr__(self, "facet_sensitivity", dict(self.facet_sensitivity))
        for name, v in [("jitter_sd", self.jitter_sd), ("drift_per_day", self.drift_per_day),
                        ("snap_radius", self.snap_radius), *self.facet_sensitivity.items()]:
            if not np.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and nonnegative, got {v!r}")
        if self.schema.simplex_sum is not None:
            for t in self.schema.traits:
                if t.min != 0 or t.max != self.schema.simplex_sum:
                    raise ConfigError("synthetic scoring on a simplex needs every trait to span [0, simplex_sum]")
        if self.cluster_centers:
            if self.schema.simplex_sum is not None:
                raise ConfigError("cluster snapping is only supported on non-simplex schemas")
            centers = {}
            for trait, cs in self.cluster_centers.items():
                spec = self.schema.traits[self.schema.index(trait)]
                cs = tuple(sorted(float(c) for c in cs))
                if not cs or any(c < spec.min or c > spec.max for c in cs):
                    raise ConfigError(f"cluster centers for {trait!r} must lie inside [{spec.min}, {spec.max}]")
                centers[trait] = cs
            object.__setattr__(self, "cluster_centers", centers)


class LinkageTable:
    """contact_key -> first vector produced for a document carrying a link.

    Entries are write-once. Registration takes a lock so one table may be
    shared between threads.
    """

    def __init__(self):
        self._entries: dict[str, tuple[ScoreVector, str]] = {}
        self._lock = threading.Lock()

    def __contains__(self, key):
        return key in self._entries

    def __len__(self):
        return len(self._entries)

    def lookup(self, key: str) -> ScoreVector | None:
        hit = self._entries.get(key)
        return hit[0] if hit else None

    def source(self, key: str) -> str | None:
        hit = self._entries.get(key)
        return hit[1] if hit else None

    def register(self, key: str, vector: ScoreVector, source: str) -> ScoreVector:
        with self._lock:
            return self._entries.setdefault(key, (vector, source))[0]


def cluster_index(value: float, centers: Sequence[float]) -> int:
    """Index of the nearest center; ties go to the lower one."""
    return int(np.argmin([abs(value - c) for c in centers]))


def snap(value: float, centers: Sequence[float], radius: float, lo: float, hi: float) -> float:
    """Squeeze ``value``'s cluster cell onto [center - radius, center + radius].

    The map is monotone within each cell, so ranks survive inside a cluster
    while the space between clusters is left empty.
    """
    i = cluster_index(value, centers)
    c = centers[i]
    cell_lo = (centers[i - 1] + c) / 2 if i > 0 else lo
    cell_hi = (c + centers[i + 1]) / 2 if i + 1 < len(centers) else hi
    if value >= c:
        out = c + radius * (value - c) / (cell_hi - c) if cell_hi > c else c
    else:
        out = c - radius * (c - value) / (c - cell_lo) if c > cell_lo else c
    return min(hi, max(lo, out))


def _base_values(schema: ScoreSchema, base_seed: int, content_seed: int) -> np.ndarray:
    rng = seeded_rng("base", base_seed, content_seed)
    if schema.simplex_sum is not None:
        e = rng.exponential(size=len(schema.traits))
        return e / e.sum() * schema.simplex_sum
    lo = np.array([t.min for t in schema.traits])
    hi = np.array([t.max for t in schema.traits])
    return lo + rng.random(len(schema.traits)) * (hi - lo)


def _finish(schema: ScoreSchema, vals: np.ndarray) -> np.ndarray:
    lo = np.array([t.min for t in schema.traits])
    hi = np.array([t.max for t in schema.traits])
    vals = np.clip(vals, lo, hi)
    if schema.simplex_sum is not None:
        total = vals.sum()
        if total <= 0:
            vals = np.full(len(vals), 1.0)
            total = float(len(vals))
        vals = vals / total * schema.simplex_sum
    return vals


def score(
    doc: SyntheticDocument,
    cfg: AdsBehaviorConfig,
    state: LinkageTable | None = None,
    now: datetime | None = None,
) -> ScoreVector:
    """Score one document.

    With linkage enabled, a contact_key seen before on a linked document
    short-circuits everything: the frozen vector is returned verbatim.
    """
    schema = cfg.schema
    now = now or cfg.reference_time
    if cfg.linkage_enabled and state is not None and doc.contact_key:
        frozen = state.lookup(doc.contact_key)
        if frozen is not None:
            return frozen

    spans = np.array([t.span for t in schema.traits])
    vals = _base_values(schema, cfg.base_seed, doc.content_seed)
    for tag in doc.tags():
        magnitude = cfg.facet_sensitivity.get(tag, 0.0)
        if magnitude:
            u = seeded_rng("facet", cfg.base_seed, doc.content_seed, tag).uniform(-1.0, 1.0, len(spans))
            vals = vals + magnitude * spans * u
    if cfg.drift_per_day:
        days = (now - cfg.reference_time).total_seconds() / 86400.0
        direction = seeded_rng("drift", cfg.base_seed).choice([-1.0, 1.0], len(spans))
        vals = vals + cfg.drift_per_day * days * spans * direction
    if not cfg.deterministic and cfg.jitter_sd:
        rng = seeded_rng("jitter", cfg.base_seed, doc.content_seed, *doc.tags(), now.isoformat())
        vals = vals + cfg.jitter_sd * spans * rng.standard_normal(len(spans))
    vals = _finish(schema, vals)
    if cfg.cluster_centers:
        for trait, centers in cfg.cluster_centers.items():
            i = schema.index(trait)
            spec = schema.traits[i]
            vals[i] = snap(float(vals[i]), centers, cfg.snap_radius, spec.min, spec.max)

    vector = validate_score_vector(schema, vals.tolist())
    if cfg.linkage_enabled and state is not None and doc.contact_key and doc.embedded_link:
        vector = state.register(doc.contact_key, vector, doc.embedded_link)
    return vector


def random_guesser(schema: ScoreSchema, seed) -> ScoreVector:
    """Uniform draw over the output space (uniform on the simplex when constrained)."""
    rng = seeded_rng("guess", seed)
    if schema.simplex_sum is not None:
        e = rng.exponential(size=len(schema.traits))
        raw = e / e.sum() * schema.simplex_sum
        raw = np.clip(raw, [t.min for t in schema.traits], [t.max for t in schema.traits])
    else:
        raw = [t.min + rng.random() * t.span for t in schema.traits]
    return validate_score_vector(schema, list(raw))


def generate_cohort(
    n: int,
    seed: int,
    demographic_spec: Sequence[tuple[str, Mapping[str, float]]] = (),
) -> tuple[list[SubjectRecord], list[SyntheticDocument]]:
    """``n`` subjects with sampled demographics and one base resume each."""
    if n < 1:
        raise ConfigError("cohort size must be at least 1")
    checked = []
    for attribute, dist in demographic_spec:
        labels = list(dist)
        probs = np.array([dist[k] for k in labels], dtype=float)
        if not labels or np.any(probs < 0) or probs.sum() <= 0:
            raise EmptyDistribution(f"attribute {attribute!r} has no usable label distribution")
        checked.append((attribute, labels, probs / probs.sum()))

    rng = np.random.default_rng(seed)
    width = max(4, len(str(n)))
    ids = [f"S{i:0{width}d}" for i in range(1, n + 1)]
    draws = {attr: rng.choice(len(labels), size=n, p=p) for attr, labels, p in checked}
    seeds = rng.integers(0, 2**62, size=n)

    subjects, docs = [], []
    for i, sid in enumerate(ids):
        profile = {attr: labels[draws[attr][i]] for attr, labels, _ in checked}
        subjects.append(SubjectRecord(sid, DemographicProfile(profile)))
        docs.append(
            SyntheticDocument(
                subject_id=sid,
                content_seed=int(seeds[i]),
                contact_key=f"{sid.lower()}@example.org",
                authored_at=AUTHORED_AT,
            )
        )
    return subjects, docs


def apply_treatment(doc: SyntheticDocument, facet: str, params: Mapping | None = None) -> SyntheticDocument:
    """Perturb only the attributes tied to ``facet``.

    ``algorithm_time`` and ``rerun`` leave the document alone; their effect
    is on the scoring clock (see :func:`treatment_clock`).
    """
    params = dict(params or {})
    if facet == "file_format":
        return replace(doc, format_tag=params.get("to", "txt" if doc.format_tag == "pdf" else "pdf"))
    if facet == "source_context":
        return replace(doc, source_tag=params.get("to", "profile" if doc.source_tag == "resume" else "resume"))
    if facet == "url_embedding":
        action = params.get("action", "add" if doc.embedded_link is None else "remove")
        if action == "add":
            return replace(doc, embedded_link=params.get("link", f"https://profiles.example.org/{doc.subject_id}"))
        if action == "remove":
            return replace(doc, embedded_link=None)
        raise ConfigError(f"url_embedding action must be 'add' or 'remove', got {action!r}")
    if facet == "participant_time":
        days = float(params.get("days", 240))
        new_seed = int(seeded_rng("content", doc.content_seed, days).integers(0, 2**62))
        return replace(doc, authored_at=doc.authored_at + timedelta(days=days), content_seed=new_seed)
    if facet in ("algorithm_time", "rerun"):
        return replace(doc)
    raise UnknownFacet(f"unknown facet {facet!r}; expected one of {FACETS}")


def treatment_clock(facet: str, now: datetime, params: Mapping | None = None) -> datetime:
    """Scoring time for a treatment run whose control was scored at ``now``."""
    params = dict(params or {})
    if facet == "algorithm_time":
        return now + timedelta(days=float(params.get("days", 31)))
    if facet == "rerun":
        return now + timedelta(minutes=float(params.get("minutes", 10)))
    if facet not in FACETS:
        raise UnknownFacet(f"unknown facet {facet!r}")
    return now
