"""Slow, independent reference computations used to check the kernels.

Nothing here imports the package; everything is plain Python over lists.
"""

import itertools
import math
from fractions import Fraction


def average_ranks(xs):
    # rank = (#smaller) + (#equal + 1) / 2
    return [sum(1 for y in xs if y < x) + (sum(1 for y in xs if y == x) + 1) / 2 for x in xs]


def pearson_by_hand(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sx = math.sqrt(sum((a - mx) ** 2 for a in x))
    sy = math.sqrt(sum((b - my) ** 2 for b in y))
    return cov / (sx * sy)


def spearman_oracle(x, y):
    return pearson_by_hand(average_ranks(x), average_ranks(y))


def kendall_tau_b_oracle(x, y):
    n = len(x)
    conc = disc = tie_x = tie_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                tie_x += 1
                tie_y += 1
            elif dx == 0:
                tie_x += 1
            elif dy == 0:
                tie_y += 1
            elif dx * dy > 0:
                conc += 1
            else:
                disc += 1
    n0 = n * (n - 1) // 2
    return (conc - disc) / math.sqrt((n0 - tie_x) * (n0 - tie_y))


def wilcoxon_enumeration_p(diffs):
    """Two-sided p from all 2^m sign flips of the nonzero |differences|."""
    d = [v for v in diffs if v != 0]
    ranks = average_ranks([abs(v) for v in d])
    observed = sum(r for r, v in zip(ranks, d) if v > 0)
    lower = upper = 0
    for signs in itertools.product((0, 1), repeat=len(d)):
        t = sum(r for r, s in zip(ranks, signs) if s)
        if t <= observed:
            lower += 1
        if t >= observed:
            upper += 1
    return min(1.0, 2 * min(lower, upper) / 2 ** len(d))


def kruskal_h_oracle(groups):
    pooled = [v for g in groups for v in g]
    n = len(pooled)
    ranks = average_ranks(pooled)
    h, start = 0.0, 0
    for g in groups:
        h += sum(ranks[start:start + len(g)]) ** 2 / len(g)
        start += len(g)
    h = 12 / (n * (n + 1)) * h - 3 * (n + 1)
    ties = {}
    for v in pooled:
        ties[v] = ties.get(v, 0) + 1
    return h / (1 - sum(t ** 3 - t for t in ties.values()) / (n ** 3 - n))


def kruskal_permutation_p(groups):
    """Fraction of all orderings of the pooled data whose H is at least the observed H."""
    pooled = [v for g in groups for v in g]
    sizes = [len(g) for g in groups]
    observed = kruskal_h_oracle(groups)
    hits = total = 0
    for perm in itertools.permutations(pooled):
        parts, start = [], 0
        for s in sizes:
            parts.append(perm[start:start + s])
            start += s
        total += 1
        if kruskal_h_oracle(parts) >= observed - 1e-9:
            hits += 1
    return hits / total


def bh_oracle(pvals, alpha):
    """Reject set from the step-up rule, using exact rational thresholds."""
    m = len(pvals)
    order = sorted(range(m), key=lambda i: pvals[i])
    k = 0
    for rank, i in enumerate(order, start=1):
        if Fraction(pvals[i]) <= Fraction(rank, m) * Fraction(alpha):
            k = rank
    return {order[r] for r in range(k)}


def bonferroni_oracle(pvals, alpha):
    return {i for i, p in enumerate(pvals) if Fraction(p) * len(pvals) <= Fraction(alpha)}
