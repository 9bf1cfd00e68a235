import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import skew

from stabaudit.auditor import (
    OVERALL,
    RankOrderClass,
    StabilityThresholds,
    SubgroupSpec,
    audit,
    audit_locational,
    audit_rank_order,
    classify,
    compile_report,
    distribution_summary,
    subgroup_breakdown,
    total_variation,
)
from stabaudit.errors import ConfigError, InconsistentFamily, TooFewPairs, TooFewSamples, UnknownAttribute
from stabaudit.model import DemographicProfile, RunTable, ScoreSchema, SubjectRecord, pair_runs
from stabaudit.stats import bonferroni_threshold

TH = StabilityThresholds()


def make_set(schema, control_rows, treatment_rows, facet="f", cohort=()):
    c = RunTable.from_rows("control", schema, control_rows)
    t = RunTable.from_rows(f"treatment-{facet}", schema, treatment_rows)
    return pair_runs(c, t, cohort, facet=facet)


def noisy_sets(schema, n=60, facets=("a", "b", "c", "d", "e"), seed=0, shift=0.0):
    rng = np.random.default_rng(seed)
    base = {f"s{i:03d}": rng.uniform(1, 9, len(schema.traits)) for i in range(n)}
    out = []
    for f in facets:
        treated = {k: np.clip(v + rng.normal(shift, 0.3, len(v)), 0, 10) for k, v in base.items()}
        out.append(make_set(schema, base, treated, facet=f))
    return out


class TestThresholds:
    @pytest.mark.parametrize(
        "r, expected",
        [
            (0.982, RankOrderClass.MEETS_DESIRABLE),
            (0.918, RankOrderClass.MEETS_MINIMUM),
            (0.822, RankOrderClass.UNSTABLE),
            (0.95, RankOrderClass.MEETS_DESIRABLE),
            (0.90, RankOrderClass.MEETS_MINIMUM),
            (None, RankOrderClass.UNDEFINED),
        ],
    )
    def test_classify(self, r, expected):
        assert classify(r, TH) is expected

    def test_invariants(self):
        with pytest.raises(ConfigError):
            StabilityThresholds(0.96, 0.95)
        with pytest.raises(ConfigError):
            StabilityThresholds(nominal_alpha=1.0)


class TestRankOrder:
    def test_perfect_and_undefined(self, disc_schema):
        rows = {f"s{i}": [i % 10, 5, (i * 3) % 10, 1] for i in range(10)}
        res = audit_rank_order(make_set(disc_schema, rows, rows), TH)
        assert res["Dominance"][1] is RankOrderClass.MEETS_DESIRABLE
        assert res["Influence"][1] is RankOrderClass.UNDEFINED
        assert not res["Influence"][0].defined

    def test_too_few_pairs(self, disc_schema):
        rows = {"a": [1] * 4, "b": [2] * 4}
        with pytest.raises(TooFewPairs):
            audit_rank_order(make_set(disc_schema, rows, rows), TH)


class TestLocational:
    def test_family_of_twenty(self, disc_schema):
        loc = audit_locational(noisy_sets(disc_schema), TH)
        assert loc.bonferroni.m == 20
        assert loc.bonferroni.corrected_alpha_summary == 0.0025

    def test_tiny_p_in_family_of_99_is_significant(self):
        schema = ScoreSchema.uniform("s", [f"t{i}" for i in range(9)], 0, 10)
        sets = noisy_sets(schema, n=94, facets=[f"f{i}" for i in range(11)], seed=4)
        # make one cell a clear one-directional shift
        first = sets[0]
        rows_c = {sid: list(c.values) for sid, c, _ in first.pairs}
        rows_t = {sid: list(t.values) for sid, _, t in first.pairs}
        for sid in rows_t:
            rows_t[sid][0] = min(10.0, rows_c[sid][0] + 0.5 + 0.01 * (hash(sid) % 7))
        sets[0] = make_set(schema, rows_c, rows_t, facet=first.facet)
        loc = audit_locational(sets, TH)
        assert loc.bonferroni.m == 99
        assert loc.bonferroni.corrected_alpha_summary == bonferroni_threshold(0.05, 99)
        cell = loc.cells[("f0", "t0")]
        assert cell.p_value < 1e-6
        assert loc.decisions[("f0", "t0")] == (True, True)

    def test_identical_runs_have_empty_family(self, disc_schema):
        rows = {f"s{i}": [i % 10, 2, 3, 4] for i in range(20)}
        loc = audit_locational([make_set(disc_schema, rows, rows, facet=f) for f in "ab"], TH)
        assert loc.bonferroni.m == 0 and loc.benjamini_hochberg.m == 0
        assert all(not r.defined and "no locational change" in r.method_note for r in loc.cells.values())
        assert loc.decisions == {}

    def test_duplicate_facets_rejected(self, disc_schema):
        sets = noisy_sets(disc_schema, facets=("a", "a"))
        with pytest.raises(ConfigError):
            audit_locational(sets, TH)


class TestTotalVariation:
    def test_identical(self, disc_schema):
        rows = {f"s{i}": [1, 2, 3, 4] for i in range(5)}
        tv = total_variation(make_set(disc_schema, rows, rows))
        assert set(tv.per_subject.values()) == {0.0}

    def test_humantic_scale(self, disc_schema):
        tv = total_variation(make_set(disc_schema, {"a": [5, 5, 5, 5]}, {"a": [5.1, 4.9, 5, 5]}))
        assert tv.per_subject["a"] == pytest.approx(0.005, abs=1e-12)

    def test_maximal_simplex_move(self, simplex_schema):
        tv = total_variation(make_set(simplex_schema, {"a": [100, 0, 0, 0]}, {"a": [0, 100, 0, 0]}))
        assert tv.per_subject["a"] == 1.0

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_symmetry_and_triangle(self, seed):
        schema = ScoreSchema.uniform("s", "abc", 0, 10)
        rng = np.random.default_rng(seed)
        runs = [{f"s{i}": rng.uniform(0, 10, 3) for i in range(6)} for _ in range(3)]
        ab = total_variation(make_set(schema, runs[0], runs[1])).per_subject
        ba = total_variation(make_set(schema, runs[1], runs[0])).per_subject
        bc = total_variation(make_set(schema, runs[1], runs[2])).per_subject
        ac = total_variation(make_set(schema, runs[0], runs[2])).per_subject
        for sid in ab:
            assert ab[sid] == ba[sid]
            assert ac[sid] <= ab[sid] + bc[sid] + 1e-12
            assert 0 <= ab[sid] <= 1


def cohort_sets(disc_schema, seed=1):
    """Women scored stably, men scrambled: overall r stays higher than the male subgroup's."""
    rng = np.random.default_rng(seed)
    control, treatment, cohort = {}, {}, []
    for i in range(60):
        sid = f"s{i:02d}"
        gender = "female" if i < 36 else ("male" if i < 55 else "nonbinary")
        lang = {} if i % 10 == 0 else {"primary_language": "english" if i % 3 else "other"}
        cohort.append(SubjectRecord(sid, DemographicProfile({"gender": gender, **lang})))
        control[sid] = rng.uniform(0, 10, 4)
        treatment[sid] = control[sid] if gender == "female" else rng.uniform(0, 10, 4)
    return make_set(disc_schema, control, treatment, facet="source_context", cohort=cohort)


class TestSubgroups:
    def test_breakdown(self, disc_schema):
        s = cohort_sets(disc_schema)
        br = subgroup_breakdown(s, SubgroupSpec("gender", 10), TH)
        labels = {v.subgroup for v in br.verdicts}
        assert labels == {"gender=female", "gender=male"}
        assert any("gender=nonbinary skipped (n=5 < 10)" in w for w in br.warnings)
        overall = audit_rank_order(s, TH)
        male = [v for v in br.verdicts if v.subgroup == "gender=male"]
        for v in male:
            assert v.rank_order_class is RankOrderClass.UNSTABLE
            assert v.correlation.statistic < overall[v.trait][0].statistic
        female = [v for v in br.verdicts if v.subgroup == "gender=female"]
        assert all(v.rank_order_class is RankOrderClass.MEETS_DESIRABLE for v in female)

    def test_subgroup_sizes_bounded_by_overall(self, disc_schema):
        s = cohort_sets(disc_schema)
        br = subgroup_breakdown(s, SubgroupSpec("primary_language", 5), TH)
        sizes = {v.subgroup: v.n for v in br.verdicts}
        assert sum(sizes.values()) < s.n  # some subjects lack the attribute

    def test_single_label_matches_overall(self, disc_schema):
        s = cohort_sets(disc_schema)
        cohort = [SubjectRecord(sid, DemographicProfile({"site": "one"})) for sid in s.subject_ids]
        s = pair_runs(s.control, s.treatment, cohort, facet=s.facet)
        br = subgroup_breakdown(s, SubgroupSpec("site", 10), TH)
        overall = audit_rank_order(s, TH)
        for v in br.verdicts:
            assert v.n == s.n
            assert v.correlation == overall[v.trait][0]

    def test_unknown_attribute(self, disc_schema):
        with pytest.raises(UnknownAttribute):
            subgroup_breakdown(cohort_sets(disc_schema), SubgroupSpec("birth_country"), TH)


def run_of(values, schema=None):
    schema = schema or ScoreSchema.uniform("s", ("Steadiness",), 0, 100)
    return RunTable.from_rows("r", schema, {f"s{i:03d}": [v] for i, v in enumerate(values)})


class TestDistribution:
    def test_gap_detected(self):
        vals = [20 + i * 0.5 for i in range(21)] + [50 + i * 0.5 for i in range(31)]
        d = distribution_summary(run_of(vals), 0.10)["Steadiness"]
        assert d.gaps == ((30.0, 50.0),)
        assert d.gaps[0][0] <= 40 and d.gaps[0][1] >= 50

    def test_uniform_grid_has_no_gaps(self):
        d = distribution_summary(run_of(list(range(0, 101, 5))))["Steadiness"]
        assert d.gaps == ()

    def test_constant_run(self):
        d = distribution_summary(run_of([7.0] * 6))["Steadiness"]
        assert d.median == 7.0 and d.skewness is None and d.degenerate and d.gaps == ()

    def test_skewness_matches_adjusted_estimator(self):
        vals = [1, 2, 2, 3, 9, 15, 40, 41, 90]
        d = distribution_summary(run_of(vals))["Steadiness"]
        assert d.skewness == pytest.approx(skew(vals, bias=False), rel=1e-12)

    def test_too_few(self):
        with pytest.raises(TooFewSamples):
            distribution_summary(run_of([1, 2, 3, 4]))

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(0, 100), min_size=5, max_size=40), st.randoms())
    def test_permutation_invariant(self, vals, rnd):
        shuffled = list(vals)
        rnd.shuffle(shuffled)
        a = distribution_summary(run_of(vals))["Steadiness"]
        b = distribution_summary(run_of(shuffled))["Steadiness"]
        assert a.gaps == b.gaps and a.median == b.median


class TestReport:
    def test_five_by_four(self, disc_schema):
        report = audit("sys", noisy_sets(disc_schema), TH)
        assert len(report.overall()) == 20
        assert report.corrections["Bonferroni"].m == 20
        assert report.corrections["Bonferroni"].corrected_alpha_summary == 0.0025

    def test_zero_facets(self):
        with pytest.raises(ConfigError):
            audit("sys", [], TH)
        with pytest.raises(ConfigError):
            compile_report("sys", TH, [], [], [], {}, {}, [])

    def test_family_mismatch_detected(self, disc_schema):
        report = audit("sys", noisy_sets(disc_schema, facets=("a",)), TH)
        bad = dict(report.corrections)
        bad["Bonferroni"] = audit("sys", noisy_sets(disc_schema, facets=("a", "b")), TH).corrections["Bonferroni"]
        with pytest.raises(InconsistentFamily):
            compile_report("sys", TH, report.facets, report.traits, report.verdicts, bad, {}, [])

    def test_subgroups_do_not_change_overall(self, disc_schema):
        s = cohort_sets(disc_schema)
        plain = audit("sys", [s], TH)
        with_groups = audit("sys", [s], TH, [SubgroupSpec("gender"), SubgroupSpec("primary_language")])
        assert plain.overall() == with_groups.overall()
        assert len(with_groups.verdicts) > len(plain.verdicts)

    def test_grid_order_and_uniqueness(self, disc_schema):
        s = cohort_sets(disc_schema)
        report = audit("sys", [s], TH, [SubgroupSpec("gender")])
        keys = [v.key for v in report.verdicts]
        assert len(keys) == len(set(keys))
        assert keys[0] == ("source_context", "Dominance", OVERALL)
        assert [k for k in keys if k[1] == "Dominance"] == [
            ("source_context", "Dominance", "overall"),
            ("source_context", "Dominance", "gender=female"),
            ("source_context", "Dominance", "gender=male"),
        ]

    def test_class_rederivable_and_bonferroni_subset(self, disc_schema):
        sets = noisy_sets(disc_schema, shift=0.08, seed=3)
        report = audit("sys", sets, TH)
        for v in report.verdicts:
            assert classify(v.correlation.statistic, TH) is v.rank_order_class
            if v.locational_significant_bonferroni:
                assert v.locational_significant_bh
        assert any(v.locational_significant_bh for v in report.verdicts)

    def test_single_correction_method(self, disc_schema):
        report = audit("sys", noisy_sets(disc_schema, shift=0.2), TH, corrections=["BenjaminiHochberg"])
        assert set(report.corrections) == {"BenjaminiHochberg"}
        assert not any(v.locational_significant_bonferroni for v in report.verdicts)
        assert any(v.locational_significant_bh for v in report.verdicts)

    def test_serialization_is_deterministic(self, disc_schema):
        a = audit("sys", noisy_sets(disc_schema), TH, [])
        b = audit("sys", noisy_sets(disc_schema), TH, [])
        dump = lambda r: json.dumps(r.to_dict(), sort_keys=True)  # noqa: E731
        assert dump(a) == dump(b)
