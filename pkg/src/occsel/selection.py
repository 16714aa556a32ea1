"""Per-cycle scoring and greedy batch selection.

A cycle scores every unlabeled candidate on three components:

* inter-sample diversity — minimum JSD from the candidate's class
  composition to the labeled set (0 when nothing is labeled yet);
* intra-set diversity — minimum JSD to the samples already picked this
  cycle (defined from the second pick onward, fixed to 0 for the first);
* frequency-weighted uncertainty — entropy mass reweighted by inverse
  class prevalence within the sample.

Each component is robust-normalized to [0, 1] and the candidate with the
largest Euclidean norm of the three is picked greedily.  Inter-diversity
and uncertainty are computed and normalized once per cycle over the full
candidate pool; after each pick only the intra component is refreshed
(one new divergence per remaining candidate) and renormalized over the
remaining candidates.

Candidate scoring is vectorized and order-independent; the greedy pick is
a sequential barrier.  Results are deterministic for fixed inputs: ties on
the combined score go to the lowest sample id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

import numpy as np

from .distributions import (
    ClassDistribution,
    entropy_bits,
    frequency_weighted_uncertainty_rows,
    jsd_to_rows,
    min_jsd_to_set,
    DEFAULT_EPSILON,
)
from .errors import (
    BudgetExceedsPool,
    DimensionMismatch,
    EmptySelection,
    StateCorrupt,
)
from .summaries import SampleSummary, SummaryBatch

SQRT3 = float(np.sqrt(3.0))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ComponentScores:
    """Raw and normalized component scores for one selected sample.

    ``intra``/``intra_norm`` are ``None`` for the first pick of a cycle,
    where no selection exists to diverge from.
    """

    inter: float
    intra: Optional[float]
    ufw: float
    inter_norm: float
    intra_norm: Optional[float]
    ufw_norm: float


@dataclass(frozen=True)
class SelectionEntry:
    rank: int
    sample_id: str
    scores: ComponentScores
    cas: float


@dataclass(frozen=True)
class SelectionResult:
    """Ordered picks of one acquisition cycle."""

    cycle_index: int
    budget: int
    entries: tuple

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if len(entries) != self.budget or self.budget < 1:
            raise ValueError("selection must contain exactly `budget` entries")
        if [e.rank for e in entries] != list(range(1, self.budget + 1)):
            raise ValueError("entry ranks must be 1..budget in order")
        ids = [e.sample_id for e in entries]
        if len(set(ids)) != len(ids):
            raise ValueError("selection contains duplicate sample ids")

    @property
    def sample_ids(self) -> list:
        return [e.sample_id for e in self.entries]


@dataclass
class CycleState:
    """Labeled/unlabeled membership plus cached labeled compositions.

    The labeled mapping stores, for every labeled id, the class
    distribution it carried when it was selected; inter-sample diversity
    in later cycles is measured against these cached compositions.
    """

    labeled: dict
    unlabeled_ids: set
    cycle_index: int = 0

    def __post_init__(self):
        overlap = set(self.labeled) & set(self.unlabeled_ids)
        if overlap:
            raise StateCorrupt(
                f"ids present in both labeled and unlabeled sets: "
                f"{sorted(overlap)[:5]}"
            )
        for sample_id, dist in self.labeled.items():
            if not isinstance(dist, ClassDistribution):
                raise StateCorrupt(
                    f"labeled id {sample_id!r} has no cached distribution"
                )

    @property
    def labeled_ids(self) -> set:
        return set(self.labeled)


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs for one selection cycle.

    ``labeled_index`` may hold a prebuilt divergence index over the
    labeled compositions; when absent, inter-diversity is an exact scan.
    """

    epsilon: float = DEFAULT_EPSILON
    labeled_index: object = None


# ---------------------------------------------------------------------------
# Component operations
# ---------------------------------------------------------------------------


def robust_normalize(scores) -> np.ndarray:
    """Map scores to [0, 1]: center on the median, scale by the IQR, min-max.

    Order-preserving for any input.  A zero IQR skips the scaling step; a
    constant input maps to all zeros.  For positive IQR the output ranking
    is identical to plain min-max scaling (the median/IQR step is affine).
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("cannot normalize an empty score vector")
    med = np.median(scores)
    q1, q3 = np.percentile(scores, (25.0, 75.0))
    shifted = scores - med
    iqr = q3 - q1
    if iqr > 0.0:
        shifted = shifted / iqr
    lo = shifted.min()
    hi = shifted.max()
    if hi > lo:
        return (shifted - lo) / (hi - lo)
    return np.zeros_like(shifted)


def combined_score(inter_norm: float, intra_norm: float, ufw_norm: float) -> float:
    """Euclidean norm of the three normalized components; range [0, sqrt(3)].

    Hyperparameter-free aggregation: no component weights to tune.
    """
    for value in (inter_norm, intra_norm, ufw_norm):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"normalized component {value!r} outside [0, 1]")
    return float(np.sqrt(inter_norm**2 + intra_norm**2 + ufw_norm**2))


def inter_sample_diversity(q, labeled, index=None) -> float:
    """Minimum JSD from a candidate composition to the labeled set.

    Returns 0.0 for an empty labeled set (cold start), which neutralizes
    the term for every candidate symmetrically.  When ``index`` is given
    the query is delegated to it; with a rerank width covering the whole
    index this equals the exact minimum.
    """
    if index is not None:
        _, value = index.min_jsd(q)
        return value
    labeled = list(labeled)
    if not labeled:
        return 0.0
    pool = np.stack([
        d.probs if isinstance(d, ClassDistribution) else np.asarray(d, float)
        for d in labeled
    ])
    q_arr = q.probs if isinstance(q, ClassDistribution) else np.asarray(q, float)
    values, _ = min_jsd_to_set(q_arr[None, :], pool)
    return float(values[0])


def intra_set_diversity(q, selected) -> float:
    """Minimum JSD from a candidate to the samples already selected.

    Raises:
        EmptySelection: if nothing has been selected yet (the first pick
            of a cycle must not call this).
    """
    selected = list(selected)
    if not selected:
        raise EmptySelection("intra-set diversity needs a non-empty selection")
    return inter_sample_diversity(q, selected)


# ---------------------------------------------------------------------------
# Greedy batch selection
# ---------------------------------------------------------------------------


def _candidate_batch(state: CycleState, summaries) -> tuple:
    ids = sorted(state.unlabeled_ids)
    if isinstance(summaries, SummaryBatch):
        return ids, summaries.subset(ids)
    return ids, SummaryBatch.from_mapping(summaries, ids)


def _labeled_matrix(state: CycleState) -> Optional[np.ndarray]:
    if not state.labeled:
        return None
    return np.stack([state.labeled[i].probs for i in sorted(state.labeled)])


def select_batch(state: CycleState,
                 summaries: Union[Mapping, SummaryBatch],
                 budget: int,
                 config: SelectionConfig = SelectionConfig()) -> SelectionResult:
    """Greedily pick ``budget`` unlabeled samples maximizing the combined score.

    Raw inter-diversity and uncertainty are computed once; the running
    intra-diversity of each remaining candidate is maintained by a single
    min-update per pick.  Deterministic: ties on the combined score break
    to the lowest sample id.

    Raises:
        BudgetExceedsPool: if fewer unlabeled candidates than ``budget``.
        MissingSummary: if an unlabeled id has no summary.
        DimensionMismatch: if labeled and candidate class counts differ.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    ids, batch = _candidate_batch(state, summaries)
    if budget > len(ids):
        raise BudgetExceedsPool(
            f"budget {budget} exceeds pool of {len(ids)} unlabeled samples"
        )
    q_rows = batch.q

    labeled = _labeled_matrix(state)
    if labeled is not None and labeled.shape[1] != q_rows.shape[1]:
        raise DimensionMismatch(
            f"labeled set has {labeled.shape[1]} classes, candidates have "
            f"{q_rows.shape[1]}"
        )

    # Raw components, fixed for the whole cycle.
    if config.labeled_index is not None:
        _, raw_inter = config.labeled_index.min_jsd_batch(q_rows)
    elif labeled is None:
        raw_inter = np.zeros(len(ids))
    else:
        raw_inter, _ = min_jsd_to_set(q_rows, labeled)
    raw_ufw = frequency_weighted_uncertainty_rows(
        q_rows, batch.entropy_mass, config.epsilon
    )
    inter_norm = robust_normalize(raw_inter)
    ufw_norm = robust_normalize(raw_ufw)
    fixed_sq = inter_norm**2 + ufw_norm**2

    q_entropy = entropy_bits(q_rows)
    active = np.ones(len(ids), dtype=bool)
    best_intra = None  # running min JSD to the selection, per candidate
    entries = []
    for rank in range(1, budget + 1):
        remaining = np.flatnonzero(active)
        if rank == 1:
            intra_norm_rem = None
            cas_rem = np.sqrt(fixed_sq[remaining])
        else:
            intra_norm_rem = robust_normalize(best_intra[remaining])
            cas_rem = np.sqrt(fixed_sq[remaining] + intra_norm_rem**2)
        local = int(np.argmax(cas_rem))  # first max = lowest id (ids sorted)
        pos = int(remaining[local])
        entries.append(SelectionEntry(
            rank=rank,
            sample_id=ids[pos],
            scores=ComponentScores(
                inter=float(raw_inter[pos]),
                intra=None if rank == 1 else float(best_intra[pos]),
                ufw=float(raw_ufw[pos]),
                inter_norm=float(inter_norm[pos]),
                intra_norm=None if rank == 1 else float(intra_norm_rem[local]),
                ufw_norm=float(ufw_norm[pos]),
            ),
            cas=float(cas_rem[local]),
        ))
        active[pos] = False
        if rank < budget:
            fresh = jsd_to_rows(
                q_rows, q_rows[pos],
                row_entropy=q_entropy, q_entropy=float(q_entropy[pos]),
            )
            best_intra = fresh if best_intra is None else np.minimum(best_intra, fresh)

    return SelectionResult(
        cycle_index=state.cycle_index + 1, budget=budget, entries=tuple(entries)
    )


def apply_selection(state: CycleState,
                    result: SelectionResult,
                    summaries: Union[Mapping, SummaryBatch]) -> CycleState:
    """Move the selected ids to the labeled set, caching their compositions.

    Returns a new state; the input state is left untouched.
    """
    chosen = result.sample_ids
    missing = [i for i in chosen if i not in state.unlabeled_ids]
    if missing:
        raise StateCorrupt(f"selected ids not in unlabeled pool: {missing[:5]}")
    if isinstance(summaries, SummaryBatch):
        picked = summaries.subset(chosen)
        new_dists = {
            sample_id: ClassDistribution(picked.q[i])
            for i, sample_id in enumerate(picked.ids)
        }
    else:
        new_dists = {i: summaries[i].q for i in chosen}
    labeled = dict(state.labeled)
    labeled.update(new_dists)
    return CycleState(
        labeled=labeled,
        unlabeled_ids=set(state.unlabeled_ids) - set(chosen),
        cycle_index=result.cycle_index,
    )
