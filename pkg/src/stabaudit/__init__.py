"""Black-box stability audits for systems that emit numeric score vectors."""

from .auditor import (
    AuditReport,
    RankOrderClass,
    StabilityThresholds,
    SubgroupSpec,
    TraitVerdict,
    audit,
    audit_locational,
    audit_rank_order,
    classify,
    compile_report,
    distribution_summary,
    subgroup_breakdown,
    total_variation,
)
from .formats import load_config, parse_demographics_csv, parse_runs_csv
from .model import (
    DemographicProfile,
    PairedAuditSet,
    RunTable,
    ScoreSchema,
    ScoreVector,
    SubjectRecord,
    TraitSpec,
    normalization_constant,
    pair_runs,
    validate_score_vector,
)
from .stats import (
    CorrectionMethod,
    CorrectionResult,
    TestKind,
    TestResult,
    benjamini_hochberg,
    bonferroni,
    bonferroni_threshold,
    kendall_tau_b,
    location_test,
    pearson,
    spearman,
    wilcoxon_signed_rank,
)
from .pipeline import demo, run_audit

__version__ = "0.1.0"
