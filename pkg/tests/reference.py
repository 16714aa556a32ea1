"""Independent oracles the engine is checked against.

Everything here is deliberately naive: plain loops, exhaustive scans, and
third-party implementations where available.  The greedy references
recompute every component from scratch at every step; the engine's cached
and incremental paths must reproduce their pick sequences exactly.
"""

import itertools
import math

import numpy as np
from scipy.spatial.distance import jensenshannon

from occsel import jsd, robust_normalize


def scipy_jsd(p, q):
    """Base-2 Jensen-Shannon divergence via scipy's distance (squared)."""
    return float(jensenshannon(np.asarray(p, float), np.asarray(q, float),
                               base=2) ** 2)


def tally_distribution(rows):
    """Per-row argmax tally with explicit lowest-index tie-breaking."""
    rows = np.asarray(rows, dtype=float)
    k = rows.shape[1]
    counts = [0] * k
    for row in rows:
        best_c, best_v = 0, row[0]
        for c in range(1, k):
            if row[c] > best_v:
                best_c, best_v = c, row[c]
        counts[best_c] += 1
    return np.array([c / len(rows) for c in counts])


def entropy_mass_loop(rows):
    """Per-class entropy mass by a plain double loop (nats)."""
    rows = np.asarray(rows, dtype=float)
    n, k = rows.shape
    mass = [0.0] * k
    for row in rows:
        for c in range(k):
            p = float(row[c])
            if p > 0.0:
                mass[c] -= p * math.log(p)
    return np.array(mass) / n


def mean_entropy_loop(rows):
    """Mean per-voxel entropy by summing one voxel at a time (nats)."""
    rows = np.asarray(rows, dtype=float)
    total = 0.0
    for row in rows:
        for p in row:
            p = float(p)
            if p > 0.0:
                total -= p * math.log(p)
    return total / rows.shape[0]


def ufw_double_sum(rows, q, epsilon=1e-6):
    """Frequency-weighted uncertainty straight from its double sum."""
    rows = np.asarray(rows, dtype=float)
    q = np.asarray(q, dtype=float)
    n, k = rows.shape
    raw = [1.0 / (q[c] + epsilon) for c in range(k)]
    norm = sum(raw)
    weights = [r / norm for r in raw]
    total = 0.0
    for row in rows:
        for c in range(k):
            p = float(row[c])
            if p > 0.0:
                total -= weights[c] * p * math.log(p)
    return total / n


def min_jsd_scan(query, pool_rows):
    """Exhaustive min-JSD via the scipy implementation."""
    return min(scipy_jsd(query, row) for row in pool_rows)


def reference_select_small(ids, q_rows, mass_rows, labeled_rows, budget,
                           epsilon=1e-6):
    """From-scratch greedy selection with scalar loops (small pools).

    Recomputes raw inter-diversity and uncertainty at every step (their
    values do not change within a cycle, but nothing is cached), and the
    intra-diversity of each remaining candidate against the full running
    selection.  Inter/uncertainty are normalized over the full candidate
    pool; intra is renormalized over the remaining candidates per step.
    Ties go to the lowest id (ids must be ascending).
    """
    from occsel import frequency_weighted_uncertainty

    n = len(ids)
    q_rows = np.asarray(q_rows, dtype=float)
    mass_rows = np.asarray(mass_rows, dtype=float)
    remaining = list(range(n))
    selected = []
    picks = []
    for rank in range(1, budget + 1):
        raw_inter = np.array([
            min((jsd(q_rows[i], l) for l in labeled_rows), default=0.0)
            for i in range(n)
        ])
        raw_ufw = np.array([
            frequency_weighted_uncertainty(q_rows[i], mass_rows[i], epsilon)
            for i in range(n)
        ])
        inter_n = robust_normalize(raw_inter)
        ufw_n = robust_normalize(raw_ufw)
        if rank == 1:
            cas = {
                i: math.sqrt(inter_n[i] ** 2 + ufw_n[i] ** 2)
                for i in remaining
            }
        else:
            raw_intra = np.array([
                min(jsd(q_rows[i], q_rows[s]) for s in selected)
                for i in remaining
            ])
            intra_n = robust_normalize(raw_intra)
            cas = {
                i: math.sqrt(inter_n[i] ** 2 + intra_n[j] ** 2 + ufw_n[i] ** 2)
                for j, i in enumerate(remaining)
            }
        # lowest-id tie-break: scan ascending, only strict improvements win
        best, best_v = remaining[0], cas[remaining[0]]
        for i in remaining[1:]:
            if cas[i] > best_v:
                best, best_v = i, cas[i]
        picks.append(ids[best])
        selected.append(best)
        remaining.remove(best)
    return picks


def reference_select_vectorized(ids, q_rows, mass_rows, labeled_rows, budget,
                                epsilon=1e-6):
    """Full-recompute greedy for mid-size pools (no incremental caching).

    Same decision rule as the engine, but the intra component is rebuilt
    from scratch against the whole running selection at every step.
    """
    from occsel.distributions import (
        frequency_weighted_uncertainty_rows,
        min_jsd_to_set,
    )

    q_rows = np.asarray(q_rows, dtype=float)
    n = len(ids)
    if len(labeled_rows):
        raw_inter, _ = min_jsd_to_set(q_rows, np.asarray(labeled_rows, float))
    else:
        raw_inter = np.zeros(n)
    raw_ufw = frequency_weighted_uncertainty_rows(q_rows, mass_rows, epsilon)
    inter_n = robust_normalize(raw_inter)
    ufw_n = robust_normalize(raw_ufw)
    fixed_sq = inter_n**2 + ufw_n**2
    remaining = np.arange(n)
    selected = []
    picks = []
    for rank in range(1, budget + 1):
        if rank == 1:
            cas = np.sqrt(fixed_sq[remaining])
        else:
            raw_intra, _ = min_jsd_to_set(q_rows[remaining], q_rows[selected])
            cas = np.sqrt(fixed_sq[remaining] + robust_normalize(raw_intra)**2)
        j = int(np.argmax(cas))
        pos = int(remaining[j])
        picks.append(ids[pos])
        selected.append(pos)
        remaining = np.delete(remaining, j)
    return picks


def euclidean_covering_radius(pool, center_rows):
    """Largest distance from any pool point to its nearest center."""
    pool = np.asarray(pool, dtype=float)
    center_rows = np.asarray(center_rows, dtype=float)
    diffs = pool[:, None, :] - center_rows[None, :, :]
    return float(np.sqrt((diffs**2).sum(axis=2)).min(axis=1).max())


def optimal_covering_radius(pool, labeled_rows, m):
    """Exhaustive search over all m-subsets of the pool as added centers."""
    pool = np.asarray(pool, dtype=float)
    best = math.inf
    for subset in itertools.combinations(range(pool.shape[0]), m):
        centers = pool[list(subset)]
        if len(labeled_rows):
            centers = np.vstack([centers, labeled_rows])
        best = min(best, euclidean_covering_radius(pool, centers))
    return best
