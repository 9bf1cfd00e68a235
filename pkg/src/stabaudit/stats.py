"""Statistical kernels: correlations, location tests, multiple-test corrections.

All kernels are pure. Results that cannot be computed (a constant vector, a
zero-variance difference) come back with ``defined=False`` and ``None`` in
place of the statistic and p-value rather than NaN.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats as _dist
from scipy.stats import rankdata

from .errors import (
    AllZeroDifferences,
    InvalidAlpha,
    InvalidPValue,
    LengthMismatch,
    ShapeMismatch,
    TooFewSamples,
    ZeroTests,
)

WILCOXON_EXACT_MAX = 25
MANN_WHITNEY_EXACT_MAX = 50
KRUSKAL_EXACT_MAX_ASSIGNMENTS = 20000

# Smallest positive double; p-values are reported in (0, 1].
_P_FLOOR = math.ulp(0.0)


class TestKind(str, Enum):
    __test__ = False

    SPEARMAN = "Spearman"
    PEARSON = "Pearson"
    KENDALL_TAU_B = "KendallTauB"
    WILCOXON_SIGNED_RANK = "WilcoxonSignedRank"
    PAIRED_T = "PairedT"
    STUDENT_T = "StudentT"
    MANN_WHITNEY_U = "MannWhitneyU"
    KRUSKAL_WALLIS = "KruskalWallis"
    ONE_WAY_ANOVA = "OneWayAnova"


class CorrectionMethod(str, Enum):
    BONFERRONI = "Bonferroni"
    BENJAMINI_HOCHBERG = "BenjaminiHochberg"


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    kind: TestKind
    statistic: float | None
    p_value: float | None
    n: int
    defined: bool
    method_note: str = ""

    @classmethod
    def undefined(cls, kind, n, note):
        return cls(kind, None, None, n, False, note)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n": self.n,
            "defined": self.defined,
            "method_note": self.method_note,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TestResult":
        return cls(TestKind(d["kind"]), d["statistic"], d["p_value"], d["n"], d["defined"], d["method_note"])


@dataclass(frozen=True)
class PerTestDecision:
    p_value: float
    rank: int
    threshold: float
    reject: bool


@dataclass(frozen=True)
class CorrectionResult:
    nominal_alpha: float
    method: CorrectionMethod
    per_test: tuple[PerTestDecision, ...]
    # Bonferroni: the single corrected alpha. BH: thresholds by rank 1..m.
    corrected_alpha_summary: float | tuple[float, ...] | None

    @property
    def m(self) -> int:
        return len(self.per_test)

    @property
    def rejections(self) -> list[bool]:
        return [d.reject for d in self.per_test]

    @classmethod
    def empty(cls, method: CorrectionMethod, nominal_alpha: float) -> "CorrectionResult":
        _check_alpha(nominal_alpha)
        summary = () if method is CorrectionMethod.BENJAMINI_HOCHBERG else None
        return cls(nominal_alpha, method, (), summary)

    def to_dict(self) -> dict:
        summary = self.corrected_alpha_summary
        return {
            "method": self.method.value,
            "nominal_alpha": self.nominal_alpha,
            "family_size": self.m,
            "corrected_alpha": list(summary) if isinstance(summary, tuple) else summary,
            "per_test": [
                {"p_value": d.p_value, "rank": d.rank, "threshold": d.threshold, "reject": d.reject}
                for d in self.per_test
            ],
        }


def _floor(p: float) -> float:
    return min(1.0, max(float(p), _P_FLOOR))


def _paired_input(x, y, minimum=3):
    if len(x) != len(y):
        raise LengthMismatch(f"lengths differ: {len(x)} vs {len(y)}")
    if len(x) < minimum:
        raise TooFewSamples(f"need at least {minimum} observations, got {len(x)}")
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("inputs must be finite")
    return a, b


def _pearson_r(a: np.ndarray, b: np.ndarray) -> float | None:
    da = a - a.mean()
    db = b - b.mean()
    sxx = float(np.dot(da, da))
    syy = float(np.dot(db, db))
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(np.dot(da, db)) / math.sqrt(sxx * syy)
    return max(-1.0, min(1.0, r))


def _correlation_p(r: float, n: int) -> float:
    if n <= 2 or abs(r) >= 1.0:
        return _P_FLOOR if abs(r) >= 1.0 else 1.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return _floor(2.0 * _dist.t.sf(abs(t), n - 2))


def pearson(x: Sequence[float], y: Sequence[float]) -> TestResult:
    a, b = _paired_input(x, y)
    r = _pearson_r(a, b)
    if r is None:
        return TestResult.undefined(TestKind.PEARSON, len(a), "zero variance")
    return TestResult(TestKind.PEARSON, r, _correlation_p(r, len(a)), len(a), True, "t approximation, n-2 df")


def spearman(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """Pearson correlation of average ranks."""
    a, b = _paired_input(x, y)
    r = _pearson_r(rankdata(a), rankdata(b))
    if r is None:
        return TestResult.undefined(TestKind.SPEARMAN, len(a), "constant input")
    return TestResult(TestKind.SPEARMAN, r, _correlation_p(r, len(a)), len(a), True, "t approximation, n-2 df")


def _tie_sizes(a: np.ndarray) -> np.ndarray:
    _, counts = np.unique(a, return_counts=True)
    return counts[counts > 1].astype(float)


def kendall_tau_b(x: Sequence[float], y: Sequence[float]) -> TestResult:
    a, b = _paired_input(x, y)
    n = len(a)
    s = 0
    for i in range(n - 1):
        s += int(np.sum(np.sign(a[i + 1:] - a[i]) * np.sign(b[i + 1:] - b[i])))
    n0 = n * (n - 1) / 2
    tx, ty = _tie_sizes(a), _tie_sizes(b)
    n1 = float(np.sum(tx * (tx - 1) / 2))
    n2 = float(np.sum(ty * (ty - 1) / 2))
    if n0 == n1 or n0 == n2:
        return TestResult.undefined(TestKind.KENDALL_TAU_B, n, "constant input")
    tau = max(-1.0, min(1.0, s / math.sqrt((n0 - n1) * (n0 - n2))))

    # variance of S under independence, with ties in both rankings
    v0 = n * (n - 1) * (2 * n + 5)
    vt = float(np.sum(tx * (tx - 1) * (2 * tx + 5)))
    vu = float(np.sum(ty * (ty - 1) * (2 * ty + 5)))
    v1 = float(np.sum(tx * (tx - 1))) * float(np.sum(ty * (ty - 1)))
    v2 = float(np.sum(tx * (tx - 1) * (tx - 2))) * float(np.sum(ty * (ty - 1) * (ty - 2)))
    var_s = (v0 - vt - vu) / 18.0 + v1 / (2.0 * n * (n - 1)) + v2 / (9.0 * n * (n - 1) * (n - 2))
    p = _floor(math.erfc(abs(s) / math.sqrt(var_s) / math.sqrt(2.0))) if var_s > 0 else 1.0
    return TestResult(TestKind.KENDALL_TAU_B, tau, p, n, True, "normal approximation with tie-corrected variance")


def _two_sided_from_counts(counts: np.ndarray, observed: int, total: int) -> float:
    lower = int(counts[: observed + 1].sum())
    upper = int(counts[observed:].sum())
    return min(1.0, 2.0 * min(lower, upper) / total)


def wilcoxon_signed_rank(x: Sequence[float], y: Sequence[float]) -> TestResult:
    """Two-sided signed-rank test on ``x - y``.

    Zero differences are dropped before ranking. Up to
    ``WILCOXON_EXACT_MAX`` nonzero differences the null distribution of the
    positive rank sum is enumerated exactly (with tied average ranks);
    beyond that a normal approximation with tie and continuity corrections
    is used. The reported statistic is min(T+, T-).
    """
    if len(x) != len(y):
        raise LengthMismatch(f"lengths differ: {len(x)} vs {len(y)}")
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if not np.all(np.isfinite(d)):
        raise ValueError("inputs must be finite")
    zeros = int(np.sum(d == 0))
    d = d[d != 0]
    m = len(d)
    if m == 0:
        raise AllZeroDifferences(f"all {len(x)} paired differences are zero")
    ranks = rankdata(np.abs(d))
    t_plus = float(ranks[d > 0].sum())
    total_rank = m * (m + 1) / 2
    stat = min(t_plus, total_rank - t_plus)

    if m <= WILCOXON_EXACT_MAX:
        # average ranks are multiples of 1/2, so doubled ranks are integers
        doubled = np.rint(2 * ranks).astype(np.int64)
        counts = np.zeros(int(doubled.sum()) + 1, dtype=np.int64)
        counts[0] = 1
        for r in doubled:
            shifted = np.zeros_like(counts)
            shifted[r:] = counts[:-r]
            counts = counts + shifted
        p = _two_sided_from_counts(counts, int(round(2 * t_plus)), 2**m)
        note = f"exact enumeration over 2^{m} sign assignments; {zeros} zero difference(s) dropped"
    else:
        mean = total_rank / 2
        ties = _tie_sizes(np.abs(d))
        var = m * (m + 1) * (2 * m + 1) / 24.0 - float(np.sum(ties**3 - ties)) / 48.0
        z = max(0.0, abs(t_plus - mean) - 0.5) / math.sqrt(var)
        p = math.erfc(z / math.sqrt(2.0))
        note = (
            "normal approximation with tie and continuity correction; "
            f"{zeros} zero difference(s) dropped"
        )
    return TestResult(TestKind.WILCOXON_SIGNED_RANK, stat, _floor(p), m, True, note)


def _mann_whitney_counts(n1: int, n2: int) -> np.ndarray:
    """Null frequency of U for samples of sizes n1, n2 without ties."""
    # table[j] holds the U-distribution for (i, j) while sweeping i upward
    table = [np.ones(1, dtype=np.int64) for _ in range(n2 + 1)]
    for i in range(1, n1 + 1):
        new = [np.ones(1, dtype=np.int64)]
        for j in range(1, n2 + 1):
            size = i * j + 1
            out = np.zeros(size, dtype=np.int64)
            prev_i = table[j]  # (i-1, j): the largest value belongs to sample 1, adds j
            out[j: j + len(prev_i)] += prev_i
            prev_j = new[j - 1]  # (i, j-1)
            out[: len(prev_j)] += prev_j
            new.append(out)
        table = new
    return table[n2]


def _mann_whitney(groups) -> TestResult:
    if len(groups) != 2:
        raise ShapeMismatch("MannWhitneyU needs exactly two groups")
    a, b = groups
    n1, n2 = len(a), len(b)
    ranks = rankdata(np.concatenate([a, b]))
    u1 = float(ranks[:n1].sum()) - n1 * (n1 + 1) / 2
    ties = _tie_sizes(np.concatenate([a, b]))
    if len(ties) == 0 and n1 + n2 <= MANN_WHITNEY_EXACT_MAX:
        counts = _mann_whitney_counts(n1, n2)
        p = _two_sided_from_counts(counts, int(round(u1)), int(counts.sum()))
        note = "exact null distribution"
    else:
        n = n1 + n2
        var = n1 * n2 / 12.0 * ((n + 1) - float(np.sum(ties**3 - ties)) / (n * (n - 1)))
        if var <= 0:
            return TestResult.undefined(TestKind.MANN_WHITNEY_U, n, "all observations tied")
        z = max(0.0, abs(u1 - n1 * n2 / 2) - 0.5) / math.sqrt(var)
        p = math.erfc(z / math.sqrt(2.0))
        note = "normal approximation with tie and continuity correction"
    return TestResult(TestKind.MANN_WHITNEY_U, u1, _floor(p), n1 + n2, True, note)


def kruskal_h(groups) -> float | None:
    pooled = np.concatenate(groups)
    n = len(pooled)
    ranks = rankdata(pooled)
    ties = _tie_sizes(pooled)
    correction = 1.0 - float(np.sum(ties**3 - ties)) / (n**3 - n)
    if correction <= 0:
        return None
    h, start = 0.0, 0
    for g in groups:
        r = ranks[start: start + len(g)]
        h += float(r.sum()) ** 2 / len(g)
        start += len(g)
    h = 12.0 / (n * (n + 1)) * h - 3.0 * (n + 1)
    return max(0.0, h / correction)


def _assignments(items: tuple[int, ...], sizes: Sequence[int]):
    """Every way to split ``items`` into consecutive groups of the given sizes."""
    if len(sizes) == 1:
        yield (items,)
        return
    for chosen in combinations(range(len(items)), sizes[0]):
        picked = set(chosen)
        first = tuple(items[i] for i in chosen)
        rest = tuple(items[i] for i in range(len(items)) if i not in picked)
        for tail in _assignments(rest, sizes[1:]):
            yield (first,) + tail


def _kruskal(groups) -> TestResult:
    if len(groups) < 2:
        raise ShapeMismatch("KruskalWallis needs at least two groups")
    n = sum(len(g) for g in groups)
    h = kruskal_h(groups)
    if h is None:
        return TestResult.undefined(TestKind.KRUSKAL_WALLIS, n, "all observations tied")
    sizes = [len(g) for g in groups]
    n_assign = math.factorial(n)
    for s in sizes:
        n_assign //= math.factorial(s)
    if n_assign <= KRUSKAL_EXACT_MAX_ASSIGNMENTS:
        pooled = np.concatenate(groups)
        hits = 0
        for parts in _assignments(tuple(range(n)), sizes):
            h_perm = kruskal_h([pooled[list(p)] for p in parts])
            if h_perm >= h - 1e-9 * max(1.0, h):
                hits += 1
        p = hits / n_assign
        note = f"exact permutation distribution over {n_assign} assignments"
    else:
        p = float(_dist.chi2.sf(h, len(groups) - 1))
        note = f"chi-square approximation, {len(groups) - 1} df"
    return TestResult(TestKind.KRUSKAL_WALLIS, h, _floor(p), n, True, note)


def _paired_t(groups) -> TestResult:
    if len(groups) != 2 or len(groups[0]) != len(groups[1]):
        raise ShapeMismatch("PairedT needs two equal-length groups")
    d = groups[0] - groups[1]
    n = len(d)
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        return TestResult.undefined(TestKind.PAIRED_T, n, "zero variance of differences")
    t = float(np.mean(d)) / (sd / math.sqrt(n))
    return TestResult(TestKind.PAIRED_T, t, _floor(2 * _dist.t.sf(abs(t), n - 1)), n, True, f"t distribution, {n - 1} df")


def _student_t(groups) -> TestResult:
    if len(groups) != 2:
        raise ShapeMismatch("StudentT needs exactly two groups")
    a, b = groups
    n1, n2 = len(a), len(b)
    df = n1 + n2 - 2
    pooled = (float(np.sum((a - a.mean()) ** 2)) + float(np.sum((b - b.mean()) ** 2))) / df
    if pooled == 0.0:
        return TestResult.undefined(TestKind.STUDENT_T, n1 + n2, "zero pooled variance")
    t = float(a.mean() - b.mean()) / math.sqrt(pooled * (1 / n1 + 1 / n2))
    return TestResult(TestKind.STUDENT_T, t, _floor(2 * _dist.t.sf(abs(t), df)), n1 + n2, True, f"pooled variance, {df} df")


def _anova(groups) -> TestResult:
    if len(groups) < 2:
        raise ShapeMismatch("OneWayAnova needs at least two groups")
    pooled = np.concatenate(groups)
    n, k = len(pooled), len(groups)
    grand = pooled.mean()
    ssb = sum(len(g) * float(g.mean() - grand) ** 2 for g in groups)
    ssw = sum(float(np.sum((g - g.mean()) ** 2)) for g in groups)
    if ssw == 0.0:
        return TestResult.undefined(TestKind.ONE_WAY_ANOVA, n, "zero within-group variance")
    f = (ssb / (k - 1)) / (ssw / (n - k))
    return TestResult(TestKind.ONE_WAY_ANOVA, f, _floor(_dist.f.sf(f, k - 1, n - k)), n, True, f"F({k - 1}, {n - k})")


_LOCATION_TESTS = {
    TestKind.PAIRED_T: _paired_t,
    TestKind.STUDENT_T: _student_t,
    TestKind.MANN_WHITNEY_U: _mann_whitney,
    TestKind.KRUSKAL_WALLIS: _kruskal,
    TestKind.ONE_WAY_ANOVA: _anova,
}


def location_test(kind: TestKind, groups: Sequence[Sequence[float]]) -> TestResult:
    """Compare groups for a location shift.

    F and H statistics use the upper tail; everything else is two-sided.
    """
    kind = TestKind(kind)
    if kind not in _LOCATION_TESTS:
        raise ShapeMismatch(f"{kind.value} is not a location test")
    arrays = [np.asarray(g, dtype=float) for g in groups]
    for g in arrays:
        if len(g) < 2:
            raise TooFewSamples(f"{kind.value}: every group needs at least 2 observations")
        if not np.all(np.isfinite(g)):
            raise ValueError("inputs must be finite")
    return _LOCATION_TESTS[kind](arrays)


def _check_alpha(alpha: float) -> None:
    if not (isinstance(alpha, (int, float)) and 0 < alpha < 1):
        raise InvalidAlpha(f"nominal alpha must lie in (0, 1), got {alpha!r}")


def bonferroni_threshold(nominal_alpha: float, m: int) -> float:
    _check_alpha(nominal_alpha)
    if isinstance(m, bool) or not isinstance(m, int) or m < 1:
        raise ZeroTests(f"need at least one test, got {m!r}")
    return nominal_alpha / m


def _ranked(p_values: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p_values, dtype=float)
    if p.ndim != 1 or len(p) == 0:
        raise InvalidPValue("need a nonempty list of p-values")
    if not np.all((p >= 0) & (p <= 1)):
        raise InvalidPValue("p-values must lie in [0, 1]")
    order = np.argsort(p, kind="stable")
    ranks = np.empty(len(p), dtype=int)
    ranks[order] = np.arange(1, len(p) + 1)
    return p, ranks


def bonferroni(p_values: Sequence[float], nominal_alpha: float) -> CorrectionResult:
    p, ranks = _ranked(p_values)
    thr = bonferroni_threshold(nominal_alpha, len(p))
    per = tuple(PerTestDecision(float(pi), int(r), thr, bool(pi <= thr)) for pi, r in zip(p, ranks))
    return CorrectionResult(nominal_alpha, CorrectionMethod.BONFERRONI, per, thr)


def benjamini_hochberg(p_values: Sequence[float], nominal_alpha: float) -> CorrectionResult:
    """Step-up false discovery rate procedure.

    The largest rank k with p_(k) <= (k/m)*alpha is found and every
    hypothesis ranked 1..k is rejected. Tied p-values always land on the
    same side of that cut.
    """
    _check_alpha(nominal_alpha)
    p, ranks = _ranked(p_values)
    m = len(p)
    # k*alpha/m keeps rank 1 bit-equal to the Bonferroni threshold
    thresholds = tuple(min(nominal_alpha, k * nominal_alpha / m) for k in range(1, m + 1))
    sorted_p = np.sort(p, kind="stable")
    cutoff = 0
    for k in range(m, 0, -1):
        if sorted_p[k - 1] <= thresholds[k - 1]:
            cutoff = k
            break
    per = tuple(
        PerTestDecision(float(pi), int(r), thresholds[r - 1], bool(pi <= sorted_p[cutoff - 1]) if cutoff else False)
        for pi, r in zip(p, ranks)
    )
    return CorrectionResult(nominal_alpha, CorrectionMethod.BENJAMINI_HOCHBERG, per, thresholds)


def correct(p_values: Sequence[float], nominal_alpha: float, method: CorrectionMethod) -> CorrectionResult:
    method = CorrectionMethod(method)
    if len(p_values) == 0:
        return CorrectionResult.empty(method, nominal_alpha)
    if method is CorrectionMethod.BONFERRONI:
        return bonferroni(p_values, nominal_alpha)
    return benjamini_hochberg(p_values, nominal_alpha)
