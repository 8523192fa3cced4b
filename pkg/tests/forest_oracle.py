"""Exhaustive root-split search with exact rational arithmetic.

Kept separate from the forest implementation: it enumerates every
(feature, threshold) pair and scores it with ``fractions.Fraction`` so ties
are exact.
"""
from fractions import Fraction


def sse(values):
    if not values:
        return Fraction(0)
    vs = [Fraction(v) for v in values]
    m = sum(vs) / len(vs)
    return sum((v - m) ** 2 for v in vs)


def best_root_split(X, y, min_leaf=1):
    """Return (feature, threshold) minimising child SSE, or None.

    Ties go to the lowest feature index, then the lowest threshold.
    """
    n, d = len(X), len(X[0])
    best = None
    for f in range(d):
        distinct = sorted(set(row[f] for row in X))
        for a, b in zip(distinct, distinct[1:]):
            t = 0.5 * (a + b)
            if not t < b:
                t = a
            left = [y[i] for i in range(n) if X[i][f] <= t]
            right = [y[i] for i in range(n) if X[i][f] > t]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            score = sse(left) + sse(right)
            key = (score, f, t)
            if best is None or key < best:
                best = key
    return None if best is None else (best[1], best[2])
