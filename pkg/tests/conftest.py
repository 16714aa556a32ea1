import numpy as np
import pytest

from occsel import ClassDistribution, SummaryBatch, VoxelProbabilityGrid
from occsel.summaries import SampleSummary


def make_rng(seed=0):
    return np.random.default_rng(seed)


def random_distribution(rng, k, alpha=1.0):
    return ClassDistribution(rng.dirichlet(np.full(k, alpha)))


def random_grid(rng, k, n, sample_id="g", peaked=False):
    """Random valid grid; `peaked` concentrates rows near one-hot."""
    alpha = 0.3 if peaked else 1.0
    rows = rng.dirichlet(np.full(k, alpha), size=n)
    return VoxelProbabilityGrid(sample_id, rows)


def random_summary_batch(rng, k, n, prefix="s"):
    q = rng.dirichlet(np.ones(k), size=n)
    mass = rng.uniform(0.0, np.log(k) / k, size=(n, k))
    ids = [f"{prefix}{i:04d}" for i in range(n)]
    return SummaryBatch(ids, q, mass, rng.integers(50, 500, size=n))


def batch_as_mapping(batch):
    return {batch.ids[i]: batch.summary(i) for i in range(len(batch))}


def make_summary(sample_id, q, mass, n=100):
    q = np.asarray(q, dtype=float)
    return SampleSummary(
        sample_id=sample_id,
        num_classes=q.size,
        voxel_count=n,
        q=ClassDistribution(q),
        entropy_mass=np.asarray(mass, dtype=float),
    )


@pytest.fixture
def rng():
    return make_rng(1234)
