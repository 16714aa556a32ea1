"""Synthetic long-tail pools, a surrogate learner, and multi-cycle runs.

The harness answers one question at desk scale: does the combined-score
policy actually steer annotation toward rare classes, and does that
exposure pay off?  No network is trained.  Instead:

* Pools draw each sample's true class mix from a Dirichlet prior whose
  concentration vector carries the long tail; voxel labels are a
  multinomial draw from the mix.
* Predictions for a voxel of true class c share a per-(sample, class)
  probability row: ``a_c`` of the mass on the true class and the rest on
  a fixed per-sample confusion direction.  ``a_c`` is the surrogate's
  current accuracy on class c.
* The surrogate's per-class accuracy follows a saturating curve in the
  number of labeled voxels of that class, so policies that label
  rare-class voxels measurably improve rare-class predictions.

Rows within a (sample, true class) pair are identical, which makes every
summary computable in closed form from the count matrix; grids are only
materialized on demand.  Everything is deterministic per (spec, seed,
policy), and independent seeds can run in parallel without affecting
results.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from .baselines import PolicyConfig, select_with_policy
from .distributions import VoxelProbabilityGrid, _xlnx, min_jsd_to_set
from .errors import BudgetExceedsPool, InvalidSpec
from .poolio import ManifestEntry, write_grid, write_manifest
from .selection import CycleState, SelectionConfig, apply_selection
from .summaries import SummaryBatch


def long_tail_concentration(num_classes: int, ratio: float = 0.65,
                            scale: float = 5.0, floor: float = 0.01) -> np.ndarray:
    """Geometrically decaying Dirichlet concentration: a few heavy classes,
    a long tail of rare ones."""
    idx = np.arange(num_classes)
    return scale * ratio**idx + floor


@dataclass(frozen=True)
class PoolSpec:
    """Generator parameters for one synthetic pool."""

    pool_size: int
    num_classes: int = 17
    voxels_per_sample: int = 400
    concentration: Optional[Sequence[float]] = None  # default: long tail
    initial_accuracy: float = 0.4
    max_accuracy: float = 0.97
    exposure_scale: float = 2000.0  # labeled voxels per ~63% of the climb
    confusion_concentration: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.pool_size < 1:
            raise InvalidSpec("pool_size must be >= 1")
        if self.num_classes < 2:
            raise InvalidSpec("num_classes must be >= 2")
        if self.voxels_per_sample < 1:
            raise InvalidSpec("voxels_per_sample must be >= 1")
        if self.concentration is not None:
            conc = np.asarray(self.concentration, dtype=np.float64)
            if conc.shape != (self.num_classes,) or (conc <= 0).any():
                raise InvalidSpec(
                    "concentration must be positive with one entry per class")
        if not (1.0 / self.num_classes < self.initial_accuracy
                <= self.max_accuracy <= 1.0):
            raise InvalidSpec(
                "need 1/K < initial_accuracy <= max_accuracy <= 1")
        if self.exposure_scale <= 0 or self.confusion_concentration <= 0:
            raise InvalidSpec("scales must be positive")

    def concentration_vector(self) -> np.ndarray:
        if self.concentration is not None:
            return np.asarray(self.concentration, dtype=np.float64)
        return long_tail_concentration(self.num_classes)

    @classmethod
    def from_json(cls, path) -> "PoolSpec":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                record = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidSpec(f"{path}: not valid JSON ({exc})") from exc
        try:
            return cls(**record)
        except TypeError as exc:
            raise InvalidSpec(f"{path}: {exc}") from exc


@dataclass
class SurrogateLearner:
    """Per-class accuracy as a saturating function of labeled-voxel exposure."""

    initial_accuracy: float
    max_accuracy: float
    exposure_scale: float
    exposure: np.ndarray  # labeled voxels seen per class

    @classmethod
    def fresh(cls, spec: PoolSpec) -> "SurrogateLearner":
        return cls(spec.initial_accuracy, spec.max_accuracy,
                   spec.exposure_scale,
                   np.zeros(spec.num_classes, dtype=np.int64))

    def accuracies(self) -> np.ndarray:
        climb = self.max_accuracy - self.initial_accuracy
        return self.max_accuracy - climb * np.exp(
            -self.exposure / self.exposure_scale)

    def observe(self, labeled_counts: np.ndarray) -> None:
        """Reveal true labels for newly annotated samples."""
        self.exposure = self.exposure + labeled_counts.sum(axis=0)

    @property
    def macro_accuracy(self) -> float:
        return float(self.accuracies().mean())


class SimPool:
    """A generated pool: hidden truth plus on-demand predicted grids."""

    def __init__(self, spec: PoolSpec, ids, true_counts, confusion):
        self.spec = spec
        self.ids = ids
        self.true_counts = true_counts  # (n, K) voxels of each true class
        self.confusion = confusion      # (n, K, K) per-(sample, class) rows
        totals = true_counts.sum(axis=0)
        quartile = max(1, spec.num_classes // 4)
        order = np.argsort(totals, kind="stable")
        self.rare_classes = np.sort(order[:quartile])
        self.true_dists = true_counts / spec.voxels_per_sample

    def __len__(self) -> int:
        return len(self.ids)

    def _templates(self, accuracies: np.ndarray) -> np.ndarray:
        """Predicted probability row for each (sample, true class)."""
        spread = (1.0 - accuracies)[None, :, None] * self.confusion
        k = self.spec.num_classes
        spread[:, np.arange(k), np.arange(k)] += accuracies
        return spread

    def summaries(self, accuracies: np.ndarray) -> SummaryBatch:
        """Closed-form summaries of the predicted grids at given accuracies."""
        n, k = self.true_counts.shape
        rows = self._templates(accuracies)
        labels = np.argmax(rows, axis=2)  # ties: lowest class index
        q = np.zeros((n, k), dtype=np.float64)
        np.add.at(q, (np.arange(n)[:, None], labels), self.true_counts)
        q /= self.spec.voxels_per_sample
        mass = np.einsum("sc,sck->sk", self.true_counts, _xlnx(rows))
        mass /= -self.spec.voxels_per_sample
        np.maximum(mass, 0.0, out=mass)  # -0.0 and last-ulp dips
        return SummaryBatch(self.ids, q, mass,
                            np.full(n, self.spec.voxels_per_sample))

    def grid(self, index: int, accuracies: np.ndarray) -> VoxelProbabilityGrid:
        """Materialize one predicted grid (rows grouped by true class)."""
        rows = self._templates(accuracies)[index]
        probs = np.repeat(rows, self.true_counts[index], axis=0)
        return VoxelProbabilityGrid(self.ids[index], probs)

    def write_grids(self, directory, accuracies: Optional[np.ndarray] = None):
        """Write every predicted grid plus a manifest; returns manifest path.

        Defaults to the initial (exposure-free) predictions.
        """
        from pathlib import Path

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        if accuracies is None:
            accuracies = np.full(self.spec.num_classes,
                                 self.spec.initial_accuracy)
        entries = []
        for i, sample_id in enumerate(self.ids):
            name = f"{sample_id}.ocgp"
            write_grid(self.grid(i, accuracies), directory / name)
            entries.append(ManifestEntry(sample_id, grid_path=Path(name)))
        manifest = directory / "manifest.jsonl"
        write_manifest(entries, manifest)
        return manifest


def generate_pool(spec: PoolSpec) -> SimPool:
    """Draw a pool from the spec; byte-identical for identical specs."""
    rng = np.random.default_rng(spec.seed)
    mixes = rng.dirichlet(spec.concentration_vector(), size=spec.pool_size)
    counts = rng.multinomial(spec.voxels_per_sample, mixes)
    confusion = rng.dirichlet(
        np.full(spec.num_classes, spec.confusion_concentration),
        size=(spec.pool_size, spec.num_classes),
    )
    width = max(6, len(str(spec.pool_size - 1)))
    ids = [f"s{i:0{width}d}" for i in range(spec.pool_size)]
    return SimPool(spec, ids, counts, confusion)


@dataclass(frozen=True)
class CycleReport:
    """Where one policy stood after one acquisition cycle."""

    cycle_index: int
    policy: str
    seed: int
    labeled_count: int
    rare_class_exposure: float  # fraction of labeled voxels in rare classes
    coverage: float  # covering radius: worst min-JSD from any pool
    # composition to the labeled set (lower = better covered)
    macro_accuracy: float

    def to_record(self) -> dict:
        return {
            "cycle": self.cycle_index,
            "policy": self.policy,
            "seed": self.seed,
            "labeled_count": self.labeled_count,
            "rare_class_exposure": self.rare_class_exposure,
            "coverage": self.coverage,
            "macro_accuracy": self.macro_accuracy,
        }


def simulate_cycles(pool: SimPool, policy: PolicyConfig, cycles: int,
                    budget: int, seed: int = 0,
                    config: SelectionConfig = SelectionConfig()) -> list:
    """Run ``cycles`` acquisition rounds of ``budget`` samples each.

    Per cycle: the surrogate regenerates predictions from its current
    exposure, the policy selects, true labels of the picks are revealed,
    and exposure grows.  Each pool sample's minimum divergence to the
    labeled set (true compositions; labeled samples contribute zero) is
    maintained incrementally, and the reported coverage is the worst such
    divergence over the pool -- the covering radius of the labeled set in
    composition space.  It never increases as labels accumulate.

    Raises:
        BudgetExceedsPool: if cycles * budget exceeds the pool.
    """
    if cycles * budget > len(pool):
        raise BudgetExceedsPool(
            f"{cycles} cycles of {budget} exceed pool of {len(pool)}")
    learner = SurrogateLearner.fresh(pool.spec)
    state = CycleState(labeled={}, unlabeled_ids=set(pool.ids))
    position = {sample_id: i for i, sample_id in enumerate(pool.ids)}
    cover_min = np.full(len(pool), np.inf)
    rare = pool.rare_classes
    reports = []
    for _ in range(cycles):
        batch = pool.summaries(learner.accuracies())
        result = select_with_policy(state, batch, budget, policy, config)
        state = apply_selection(state, result, batch)
        picked = np.array([position[i] for i in result.sample_ids])
        learner.observe(pool.true_counts[picked])
        fresh, _ = min_jsd_to_set(pool.true_dists, pool.true_dists[picked])
        np.minimum(cover_min, fresh, out=cover_min)
        labeled_voxels = learner.exposure
        reports.append(CycleReport(
            cycle_index=state.cycle_index,
            policy=policy.policy,
            seed=seed,
            labeled_count=len(state.labeled),
            rare_class_exposure=float(labeled_voxels[rare].sum()
                                      / labeled_voxels.sum()),
            coverage=float(cover_min.max()),
            macro_accuracy=learner.macro_accuracy,
        ))
    return reports


# ---------------------------------------------------------------------------
# Multi-seed policy comparison
# ---------------------------------------------------------------------------

METRICS = ("rare_class_exposure", "coverage", "macro_accuracy")


@dataclass(frozen=True)
class PairTest:
    metric: str
    policy_a: str
    policy_b: str
    cycle_index: int
    mean_a: float
    mean_b: float
    mean_diff: float
    positives: int
    negatives: int
    ties: int
    p_greater: float
    p_two_sided: float


@dataclass
class ComparisonReport:
    policies: list
    seeds: list
    cycles: int
    budget: int
    reports: list = field(default_factory=list)  # every CycleReport
    tests: list = field(default_factory=list)  # every PairTest

    def mean(self, policy: str, cycle_index: int, metric: str) -> float:
        values = [getattr(r, metric) for r in self.reports
                  if r.policy == policy and r.cycle_index == cycle_index]
        return float(np.mean(values))

    def test(self, metric: str, policy_a: str, policy_b: str,
             cycle_index: int) -> PairTest:
        for t in self.tests:
            if (t.metric, t.policy_a, t.policy_b, t.cycle_index) == (
                    metric, policy_a, policy_b, cycle_index):
                return t
        raise KeyError((metric, policy_a, policy_b, cycle_index))

    def to_records(self) -> list:
        return [r.to_record() for r in self.reports]

    def to_table(self) -> str:
        """Plain-text summary: per-cycle means and pairwise sign tests."""
        lines = []
        header = f"{'metric':<22}{'policy':<10}" + "".join(
            f"C{c:<9}" for c in range(1, self.cycles + 1))
        lines.append(header)
        lines.append("-" * len(header))
        for metric in METRICS:
            for policy in self.policies:
                cells = "".join(
                    f"{self.mean(policy, c, metric):<10.4f}"
                    for c in range(1, self.cycles + 1))
                lines.append(f"{metric:<22}{policy:<10}{cells}")
        lines.append("")
        lines.append("paired sign tests (a vs b, p one-sided a>b / two-sided)")
        for t in self.tests:
            lines.append(
                f"  {t.metric:<22}{t.policy_a}>{t.policy_b:<9} C{t.cycle_index}"
                f"  diff={t.mean_diff:+.5f}  +{t.positives}/-{t.negatives}"
                f"/={t.ties}  p={t.p_greater:.4f}/{t.p_two_sided:.4f}")
        return "\n".join(lines) + "\n"


def _run_seed(spec: PoolSpec, policies, cycles, budget, seed) -> list:
    pool = generate_pool(replace(spec, seed=seed))
    reports = []
    for name in policies:
        policy = PolicyConfig(policy=name, seed=seed)
        reports.extend(simulate_cycles(pool, policy, cycles, budget, seed=seed))
    return reports


def _sign_test(diffs) -> tuple:
    positives = int(sum(d > 0 for d in diffs))
    negatives = int(sum(d < 0 for d in diffs))
    ties = len(diffs) - positives - negatives
    n = positives + negatives
    if n == 0:
        return positives, negatives, ties, 1.0, 1.0
    greater = binomtest(positives, n, 0.5, alternative="greater").pvalue
    two = binomtest(positives, n, 0.5, alternative="two-sided").pvalue
    return positives, negatives, ties, float(greater), float(two)


def compare_policies(spec: PoolSpec, policies: Sequence[str], cycles: int,
                     budget: int, seeds: Sequence[int],
                     workers: int = 1) -> ComparisonReport:
    """Paired multi-seed comparison of policies on one pool spec.

    Every policy sees the identical pool for a given seed, so per-seed
    differences are paired observations; the sign test is computed per
    cycle for every policy pair and metric.

    Raises:
        ValueError: with fewer than 2 policies or fewer than 2 seeds.
    """
    policies = list(policies)
    seeds = list(seeds)
    if len(policies) < 2:
        raise ValueError("comparison needs at least 2 policies")
    if len(seeds) < 2:
        raise ValueError("comparison needs at least 2 seeds")
    if len(set(seeds)) != len(seeds):
        raise ValueError("seeds must be distinct")

    per_seed = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool_exec:
            futures = {
                seed: pool_exec.submit(_run_seed, spec, policies, cycles,
                                       budget, seed)
                for seed in seeds
            }
            for seed in seeds:
                per_seed[seed] = futures[seed].result()
    else:
        for seed in seeds:
            per_seed[seed] = _run_seed(spec, policies, cycles, budget, seed)

    report = ComparisonReport(policies=policies, seeds=seeds, cycles=cycles,
                              budget=budget)
    for seed in seeds:
        report.reports.extend(per_seed[seed])

    by_key = {
        (r.policy, r.seed, r.cycle_index): r for r in report.reports
    }
    for metric in METRICS:
        for i, a in enumerate(policies):
            for b in policies[i + 1:]:
                for cycle in range(1, cycles + 1):
                    diffs = [
                        getattr(by_key[(a, s, cycle)], metric)
                        - getattr(by_key[(b, s, cycle)], metric)
                        for s in seeds
                    ]
                    pos, neg, ties, p_greater, p_two = _sign_test(diffs)
                    mean_a = float(np.mean(
                        [getattr(by_key[(a, s, cycle)], metric) for s in seeds]))
                    mean_b = float(np.mean(
                        [getattr(by_key[(b, s, cycle)], metric) for s in seeds]))
                    report.tests.append(PairTest(
                        metric=metric, policy_a=a, policy_b=b,
                        cycle_index=cycle, mean_a=mean_a, mean_b=mean_b,
                        mean_diff=mean_a - mean_b, positives=pos,
                        negatives=neg, ties=ties, p_greater=p_greater,
                        p_two_sided=p_two,
                    ))
    return report
