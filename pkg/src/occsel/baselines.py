"""Reference acquisition policies: random, mean-entropy, and k-center coreset.

All three emit the same ``SelectionResult`` shape as the combined-score
policy so downstream tooling never cares which policy ran.  Baselines fill
the component scores with zeros and store their own ranking score in the
``cas`` slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Union

import numpy as np

from .distributions import hellinger_embed_rows
from .errors import BudgetExceedsPool, DimensionMismatch, MissingSummary
from .selection import (
    ComponentScores,
    CycleState,
    SelectionConfig,
    SelectionEntry,
    SelectionResult,
    select_batch,
)
from .summaries import SummaryBatch

POLICY_NAMES = ("random", "entropy", "coreset", "cas")

_ZEROES = dict(inter=0.0, intra=None, ufw=0.0,
               inter_norm=0.0, intra_norm=None, ufw_norm=0.0)


@dataclass(frozen=True)
class PolicyConfig:
    """Which policy to run and the knobs it needs.

    ``seed`` is required for the random policy.  The coreset policy runs
    on Hellinger embeddings of the class compositions by default; set
    ``coreset_feature="external"`` and ``feature_path`` to use externally
    produced per-sample feature vectors instead.
    """

    policy: str
    seed: Optional[int] = None
    coreset_feature: str = "hellinger"
    feature_path: Optional[str] = None

    def __post_init__(self):
        if self.policy not in POLICY_NAMES:
            raise ValueError(
                f"unknown policy {self.policy!r}; expected one of {POLICY_NAMES}"
            )
        if self.policy == "random" and self.seed is None:
            raise ValueError("the random policy requires a seed")
        if self.coreset_feature not in ("hellinger", "external"):
            raise ValueError(f"unknown feature source {self.coreset_feature!r}")
        if self.coreset_feature == "external" and not self.feature_path:
            raise ValueError("external coreset features require a feature file")


def _entry(rank, sample_id, score) -> SelectionEntry:
    return SelectionEntry(
        rank=rank, sample_id=sample_id,
        scores=ComponentScores(**_ZEROES), cas=float(score),
    )


def select_random(pool_ids, budget: int, seed: int,
                  cycle_index: int = 1) -> SelectionResult:
    """Uniform sample without replacement; deterministic for a fixed seed."""
    pool_ids = sorted(pool_ids)
    if budget > len(pool_ids):
        raise BudgetExceedsPool(
            f"budget {budget} exceeds pool of {len(pool_ids)}"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(pool_ids), size=budget, replace=False)
    entries = [
        _entry(rank, pool_ids[int(i)], 0.0)
        for rank, i in enumerate(chosen, start=1)
    ]
    return SelectionResult(cycle_index=cycle_index, budget=budget,
                           entries=tuple(entries))


def select_entropy(summaries: Union[Mapping, SummaryBatch], budget: int,
                   cycle_index: int = 1) -> SelectionResult:
    """Top-``budget`` samples by mean voxel entropy, ties to the lowest id.

    The mean (not the sum) keeps samples with different voxel counts
    comparable.  The ranking is invariant to the entropy log base.
    """
    if isinstance(summaries, SummaryBatch):
        batch = summaries
    else:
        batch = SummaryBatch.from_mapping(summaries)
    if budget > len(batch):
        raise BudgetExceedsPool(
            f"budget {budget} exceeds pool of {len(batch)}"
        )
    scores = batch.entropy_mass.sum(axis=1)
    order = np.argsort(-scores, kind="stable")  # stable: ties keep id order
    entries = [
        _entry(rank, batch.ids[int(i)], scores[int(i)])
        for rank, i in enumerate(order[:budget], start=1)
    ]
    return SelectionResult(cycle_index=cycle_index, budget=budget,
                           entries=tuple(entries))


def k_center_greedy(pool_matrix: np.ndarray,
                    labeled_matrix: Optional[np.ndarray],
                    budget: int):
    """Greedy k-center picks over Euclidean features.

    Repeatedly takes the pool point with the largest minimum distance to
    the labeled set plus everything picked so far (the classical
    2-approximation of the optimal covering radius).  Ties go to the
    lowest row index.  With nothing labeled, the first pick falls to row
    0 by the tie rule (every distance is infinite) and its recorded
    distance is 0.0.

    Returns ``(indices, distances_at_pick)``.
    """
    n = pool_matrix.shape[0]
    if labeled_matrix is not None and len(labeled_matrix):
        if labeled_matrix.shape[1] != pool_matrix.shape[1]:
            raise DimensionMismatch(
                f"labeled features have dim {labeled_matrix.shape[1]}, "
                f"pool has {pool_matrix.shape[1]}"
            )
        diffs = pool_matrix[:, None, :] - labeled_matrix[None, :, :]
        min_dist = np.sqrt((diffs**2).sum(axis=2)).min(axis=1)
    else:
        min_dist = np.full(n, np.inf)
    picks, pick_dists = [], []
    for _ in range(budget):
        j = int(np.argmax(min_dist))  # first max = lowest index on ties
        picks.append(j)
        pick_dists.append(float(min_dist[j]) if np.isfinite(min_dist[j]) else 0.0)
        fresh = np.sqrt(((pool_matrix - pool_matrix[j])**2).sum(axis=1))
        min_dist = np.minimum(min_dist, fresh)
        min_dist[j] = -np.inf  # picked points never win again
    return picks, pick_dists


def select_coreset(labeled_features, pool_features, budget: int,
                   cycle_index: int = 1) -> SelectionResult:
    """k-center greedy selection over per-sample feature vectors.

    ``pool_features`` is a mapping id -> vector; ``labeled_features`` is a
    mapping or a plain matrix (may be empty).
    """
    pool_ids = sorted(pool_features)
    if budget > len(pool_ids):
        raise BudgetExceedsPool(
            f"budget {budget} exceeds pool of {len(pool_ids)}"
        )
    pool_matrix = np.stack(
        [np.asarray(pool_features[i], dtype=np.float64) for i in pool_ids]
    )
    if isinstance(labeled_features, Mapping):
        labeled_matrix = (
            np.stack([np.asarray(labeled_features[i], dtype=np.float64)
                      for i in sorted(labeled_features)])
            if labeled_features else None
        )
    else:
        labeled_matrix = (
            np.asarray(labeled_features, dtype=np.float64)
            if labeled_features is not None and len(labeled_features) else None
        )
    picks, dists = k_center_greedy(pool_matrix, labeled_matrix, budget)
    entries = [
        _entry(rank, pool_ids[j], d)
        for rank, (j, d) in enumerate(zip(picks, dists), start=1)
    ]
    return SelectionResult(cycle_index=cycle_index, budget=budget,
                           entries=tuple(entries))


def _candidate_batch(state: CycleState, summaries) -> SummaryBatch:
    ids = sorted(state.unlabeled_ids)
    if isinstance(summaries, SummaryBatch):
        return summaries.subset(ids)
    return SummaryBatch.from_mapping(summaries, ids)


def select_with_policy(state: CycleState,
                       summaries: Union[Mapping, SummaryBatch],
                       budget: int,
                       policy: PolicyConfig,
                       config: SelectionConfig = SelectionConfig(),
                       external_features: Optional[Mapping] = None) -> SelectionResult:
    """Run one acquisition cycle under any policy, sharing one interface.

    Raises:
        BudgetExceedsPool, MissingSummary, DimensionMismatch: as the
            underlying policy does.
    """
    cycle_index = state.cycle_index + 1
    if policy.policy == "cas":
        return select_batch(state, summaries, budget, config)
    if policy.policy == "random":
        if budget > len(state.unlabeled_ids):
            raise BudgetExceedsPool(
                f"budget {budget} exceeds pool of {len(state.unlabeled_ids)}"
            )
        return select_random(state.unlabeled_ids, budget, policy.seed,
                             cycle_index=cycle_index)
    if policy.policy == "entropy":
        batch = _candidate_batch(state, summaries)
        return select_entropy(batch, budget, cycle_index=cycle_index)
    # coreset
    if policy.coreset_feature == "external":
        if external_features is None:
            raise ValueError("external coreset features were not provided")
        try:
            pool_features = {
                i: external_features[i] for i in state.unlabeled_ids
            }
            labeled_features = {
                i: external_features[i] for i in state.labeled
            }
        except KeyError as exc:
            raise MissingSummary(exc.args[0]) from None
    else:
        batch = _candidate_batch(state, summaries)
        emb = hellinger_embed_rows(batch.q)
        pool_features = {i: emb[k] for k, i in enumerate(batch.ids)}
        labeled_features = {
            i: np.sqrt(state.labeled[i].probs) for i in sorted(state.labeled)
        }
    return select_coreset(labeled_features, pool_features, budget,
                          cycle_index=cycle_index)
