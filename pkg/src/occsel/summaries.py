"""Compact per-sample records sufficient for every acquisition policy.

A summary carries the sample's class composition and its per-class entropy
mass.  Every score the engine computes (inter-sample diversity, intra-set
diversity, frequency-weighted uncertainty, plain entropy, Hellinger
features for the coreset baseline) is a function of these two vectors, so
full grids never need to be revisited after summarization.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .distributions import (
    ClassDistribution,
    VoxelProbabilityGrid,
    class_distribution,
    per_class_entropy_mass,
)
from .errors import MissingSummary


@dataclass(frozen=True, eq=False)
class SampleSummary:
    """Class composition plus per-class entropy mass for one sample."""

    sample_id: str
    num_classes: int
    voxel_count: int
    q: ClassDistribution
    entropy_mass: np.ndarray  # nats, one entry per class, all >= 0

    def __post_init__(self):
        mass = np.array(self.entropy_mass, dtype=np.float64)
        mass.setflags(write=False)
        object.__setattr__(self, "entropy_mass", mass)
        if self.voxel_count < 1:
            raise ValueError("summary voxel count must be >= 1")
        if self.q.num_classes != self.num_classes or mass.size != self.num_classes:
            raise ValueError("summary fields disagree on class count")
        if mass.min() < 0.0:
            raise ValueError("entropy mass entries must be nonnegative")

    @property
    def mean_voxel_entropy(self) -> float:
        """Mean per-voxel entropy in nats (sum of the per-class mass)."""
        return float(self.entropy_mass.sum())


def summarize_grid(grid: VoxelProbabilityGrid) -> SampleSummary:
    """Reduce a voxel probability grid to its acquisition summary.

    Raises:
        EmptyGrid: if the grid has no visible voxels.
    """
    q = class_distribution(grid)
    mass = per_class_entropy_mass(grid)
    return SampleSummary(
        sample_id=grid.sample_id,
        num_classes=grid.num_classes,
        voxel_count=grid.num_voxels,
        q=q,
        entropy_mass=mass,
    )


class SummaryBatch:
    """Columnar view over many summaries, ordered by ascending sample id.

    Scoring a large pool one dataclass at a time is too slow and too
    memory-hungry; this keeps the pool as three aligned arrays.  Ids must
    be unique and sorted ascending (tie-breaking everywhere relies on it).
    """

    __slots__ = ("ids", "q", "entropy_mass", "voxel_counts")

    def __init__(self, ids, q, entropy_mass, voxel_counts):
        self.ids = list(ids)
        self.q = np.asarray(q, dtype=np.float64)
        self.entropy_mass = np.asarray(entropy_mass, dtype=np.float64)
        self.voxel_counts = np.asarray(voxel_counts, dtype=np.int64)
        n = len(self.ids)
        if self.q.shape[0] != n or self.entropy_mass.shape != self.q.shape:
            raise ValueError("batch arrays disagree on pool size or class count")
        if self.voxel_counts.shape != (n,):
            raise ValueError("voxel counts must be one per sample")
        if any(a >= b for a, b in zip(self.ids, self.ids[1:])):
            raise ValueError("batch ids must be unique and ascending")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def num_classes(self) -> int:
        return int(self.q.shape[1])

    @classmethod
    def from_mapping(cls, summaries: Mapping[str, SampleSummary],
                     ids: Iterable[str] | None = None) -> "SummaryBatch":
        """Assemble a batch for ``ids`` (default: every key, sorted).

        Raises:
            MissingSummary: if a requested id has no record.
        """
        ids = sorted(summaries) if ids is None else sorted(ids)
        rows = []
        for sample_id in ids:
            try:
                rows.append(summaries[sample_id])
            except KeyError:
                raise MissingSummary(sample_id) from None
        q = np.stack([s.q.probs for s in rows]) if rows else np.empty((0, 0))
        mass = np.stack([s.entropy_mass for s in rows]) if rows else np.empty((0, 0))
        counts = np.array([s.voxel_count for s in rows], dtype=np.int64)
        return cls(ids, q, mass, counts)

    def subset(self, ids: Iterable[str]) -> "SummaryBatch":
        """Batch restricted to ``ids`` (sorted); fast path when identical.

        Raises:
            MissingSummary: if an id is absent from this batch.
        """
        ids = sorted(ids)
        if ids == self.ids:
            return self
        position = {sample_id: i for i, sample_id in enumerate(self.ids)}
        try:
            take = np.array([position[i] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise MissingSummary(exc.args[0]) from None
        return SummaryBatch(
            ids, self.q[take], self.entropy_mass[take], self.voxel_counts[take]
        )

    def summary(self, index: int) -> SampleSummary:
        """Materialize the dataclass record for one row."""
        return SampleSummary(
            sample_id=self.ids[index],
            num_classes=self.num_classes,
            voxel_count=int(self.voxel_counts[index]),
            q=ClassDistribution(self.q[index]),
            entropy_mass=self.entropy_mass[index],
        )
