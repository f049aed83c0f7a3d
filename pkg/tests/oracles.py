"""Straightforward reference implementations used to cross-check the package."""

from __future__ import annotations

import math
import statistics

LAYER_Q = {"shallow": 14.0, "intermediate": 90.0, "deep": 365.0}
LAYER_ALPHA = {"shallow": 0.9, "intermediate": 0.967, "deep": 0.988}


def first_purge_day(layer: str, value: float) -> int:
    """Smallest whole-day age at which an unaccessed event gets dropped."""
    delta = 0
    while True:
        recency = math.exp(-delta / LAYER_Q[layer])
        importance = value * LAYER_ALPHA[layer] ** delta
        if recency < 0.05 or importance < 5.0:
            return delta
        delta += 1


def gamma(layer, value, age, u, v):
    dot = sum(a * b for a, b in zip(u, v))
    cos = dot / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)))
    recency = math.exp(-age / LAYER_Q[layer])
    importance = value * LAYER_ALPHA[layer] ** age
    return recency + max(cos, 0.0) + min(importance / 100.0, 1.0)


def brute_force_top_k(rows, query, k):
    """rows: (id, layer, value, age, vector). Returns {layer: [ids]} of live events."""
    out = {}
    for layer in LAYER_Q:
        live = []
        for rid, lay, value, age, vec in rows:
            if lay != layer or age < 0:
                continue
            if math.exp(-age / LAYER_Q[layer]) < 0.05 or value * LAYER_ALPHA[layer] ** age < 5.0:
                continue
            live.append((-gamma(layer, value, age, vec, query), rid))
        out[layer] = [rid for _, rid in sorted(live)[:k]]
    return out


def metrics(returns):
    """(CR%, SR, AV%, MDD%) by direct definition; MDD is the O(n^2) pairwise scan."""
    n = len(returns)
    cr = 100.0 * math.fsum(returns)
    if n >= 2:
        sd = statistics.stdev(returns)
        sr = statistics.fmean(returns) / sd * math.sqrt(252) if sd > 0 else float("nan")
        av = 100.0 * sd * math.sqrt(252)
    else:
        sr = av = float("nan")
    values = [1.0]
    total = 0.0
    for r in returns:
        total += r
        values.append(math.exp(total))
    return cr, sr, av, mdd_pairwise(values)


def mdd_pairwise(values):
    mdd = 0.0
    for i in range(len(values)):
        for j in range(i, len(values)):
            mdd = max(mdd, (values[i] - values[j]) / values[i])
    return 100.0 * mdd
