"""Core numeric kernels: class compositions, divergences, entropies, weights.

Everything here is a pure function of immutable inputs and is safe to call
concurrently.  Reductions over voxel rows run in fixed-size blocks
(``ROW_CHUNK`` rows, accumulated in file order), so results are
bit-reproducible for a given chunk size.  All accumulation happens in
float64 regardless of the storage dtype of the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyGrid, InvalidRow

# Tolerance for "sums to one" on exact (float64) probability vectors.
SIMPLEX_ATOL = 1e-9
# Tolerance for per-voxel rows held in memory (float64 pipelines).
ROW_SUM_ATOL = 1e-6
# Prevalence-weight stabilizer; keeps 1/(q_c + eps) finite for absent classes.
DEFAULT_EPSILON = 1e-6
# Voxel rows accumulated per block; fixed so reductions are reproducible.
ROW_CHUNK = 4096
# Query rows per block in pairwise divergence scans (bounds temp memory).
PAIR_CHUNK = 256


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


def _frozen_array(values, dtype=np.float64):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ClassDistribution:
    """A length-K probability vector: the class composition of one sample.

    Invariants: every entry in [0, 1], entries sum to 1 within
    ``SIMPLEX_ATOL``, and K >= 2.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen_array(self.probs)
        if probs.ndim != 1 or probs.size < 2:
            raise ValueError("class distribution must be a vector of length >= 2")
        if probs.min() < 0.0 or probs.max() > 1.0:
            raise ValueError("class distribution entries must lie in [0, 1]")
        total = float(probs.sum())
        if abs(total - 1.0) > SIMPLEX_ATOL:
            raise ValueError(f"class distribution sums to {total!r}, expected 1")
        object.__setattr__(self, "probs", probs)

    @property
    def num_classes(self) -> int:
        return int(self.probs.size)


@dataclass(frozen=True, eq=False)
class VoxelProbabilityGrid:
    """Per-voxel class probabilities for the visible voxels of one sample.

    ``probs`` has one row per visible voxel and one column per class; each
    row sums to 1 within ``row_atol``.  Grids loaded from float32 storage
    carry a looser ``row_atol`` than grids built in float64.  N = 0 grids
    are representable but most operations reject them.
    """

    sample_id: str
    probs: np.ndarray
    row_atol: float = ROW_SUM_ATOL

    def __post_init__(self):
        probs = np.ascontiguousarray(self.probs)
        if probs.ndim != 2 or probs.shape[1] < 2:
            raise ValueError("grid must be an N x K matrix with K >= 2")
        if probs.size:
            if probs.min() < 0.0 or probs.max() > 1.0:
                raise ValueError("grid entries must lie in [0, 1]")
            sums = probs.sum(axis=1, dtype=np.float64)
            bad = np.flatnonzero(np.abs(sums - 1.0) > self.row_atol)
            if bad.size:
                raise InvalidRow(
                    f"grid {self.sample_id!r}: row {bad[0]} sums to {sums[bad[0]]!r}"
                )
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def num_voxels(self) -> int:
        return int(self.probs.shape[0])

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[1])


@dataclass(frozen=True, eq=False)
class WeightVector:
    """Normalized per-class weights; strictly positive, summing to 1."""

    weights: np.ndarray

    def __post_init__(self):
        weights = _frozen_array(self.weights)
        if weights.ndim != 1 or weights.size < 2:
            raise ValueError("weight vector must have length >= 2")
        if weights.min() <= 0.0:
            raise ValueError("weights must be strictly positive")
        total = float(weights.sum())
        if abs(total - 1.0) > SIMPLEX_ATOL:
            raise ValueError(f"weights sum to {total!r}, expected 1")
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """Element-wise square root of a class distribution; unit Euclidean norm."""

    coords: np.ndarray

    def __post_init__(self):
        coords = _frozen_array(self.coords)
        if coords.ndim != 1 or coords.size < 2:
            raise ValueError("embedding must be a vector of length >= 2")
        norm = float(np.linalg.norm(coords))
        if abs(norm - 1.0) > SIMPLEX_ATOL:
            raise ValueError(f"embedding norm is {norm!r}, expected 1")
        object.__setattr__(self, "coords", coords)


def _dist_array(value) -> np.ndarray:
    """Coerce a ClassDistribution or array-like to a float64 vector."""
    if isinstance(value, ClassDistribution):
        return value.probs
    return np.asarray(value, dtype=np.float64)


# ---------------------------------------------------------------------------
# Guarded x*log(x) kernels (0 log 0 contributes exactly 0)
# ---------------------------------------------------------------------------


def _xlog2x(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros_like(values)
    np.log2(values, out=out, where=values > 0.0)
    out *= values
    return out


def _xlnx(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros_like(values)
    np.log(values, out=out, where=values > 0.0)
    out *= values
    return out


def entropy_bits(rows) -> np.ndarray:
    """Shannon entropy in bits along the last axis, with guarded 0 log 0."""
    return -np.sum(_xlog2x(rows), axis=-1)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def class_distribution(grid: VoxelProbabilityGrid) -> ClassDistribution:
    """Fraction of visible voxels whose argmax prediction falls in each class.

    Argmax ties are broken by the lowest class index, so the result is
    deterministic across platforms.

    Raises:
        EmptyGrid: if the grid has no visible voxels.
    """
    n = grid.num_voxels
    if n == 0:
        raise EmptyGrid(f"grid {grid.sample_id!r} has no visible voxels")
    labels = np.argmax(grid.probs, axis=1)  # first max wins ties
    counts = np.bincount(labels, minlength=grid.num_classes)
    return ClassDistribution(counts / n)


def jsd(p, q) -> float:
    """Jensen-Shannon divergence with base-2 logs; symmetric, in [0, 1].

    Evaluated as H(m) - (H(p) + H(q)) / 2 with m the pointwise mean, which
    makes jsd(p, q) and jsd(q, p) bit-identical.  The result is clipped to
    [0, 1] to absorb last-ulp rounding.

    Raises:
        DimensionMismatch: if p and q have different lengths.
    """
    pa = _dist_array(p)
    qa = _dist_array(q)
    if pa.shape != qa.shape:
        raise DimensionMismatch(
            f"distributions have {pa.size} and {qa.size} classes"
        )
    return float(jsd_to_rows(pa[None, :], qa)[0])


def jsd_to_rows(rows, q, row_entropy=None, q_entropy=None,
                chunk: int = 65536) -> np.ndarray:
    """JSD between each row of ``rows`` and the single distribution ``q``.

    Entropies may be passed in when already known (they are the cacheable
    half of the divergence).  Work proceeds in blocks of ``chunk`` rows so
    temporaries stay small on large pools.
    """
    rows = np.asarray(rows, dtype=np.float64)
    q = _dist_array(q)
    if rows.shape[1] != q.size:
        raise DimensionMismatch(
            f"rows have {rows.shape[1]} classes, query has {q.size}"
        )
    if row_entropy is None:
        row_entropy = entropy_bits(rows)
    if q_entropy is None:
        q_entropy = float(entropy_bits(q))
    out = np.empty(rows.shape[0], dtype=np.float64)
    for start in range(0, rows.shape[0], chunk):
        stop = min(start + chunk, rows.shape[0])
        mix = 0.5 * (rows[start:stop] + q)
        out[start:stop] = entropy_bits(mix)
    out -= 0.5 * (row_entropy + q_entropy)
    np.clip(out, 0.0, 1.0, out=out)
    return out


def min_jsd_to_set(rows, pool, chunk: int = PAIR_CHUNK):
    """Exact minimum JSD from each row of ``rows`` to any row of ``pool``.

    Returns ``(values, argmin)`` where ``argmin[i]`` is the pool row index
    achieving the minimum (first such row on ties).  Scans in blocks of
    ``chunk`` query rows to bound temporary memory at chunk x |pool| x K.
    """
    rows = np.asarray(rows, dtype=np.float64)
    pool = np.asarray(pool, dtype=np.float64)
    if rows.shape[1] != pool.shape[1]:
        raise DimensionMismatch(
            f"rows have {rows.shape[1]} classes, pool has {pool.shape[1]}"
        )
    row_ent = entropy_bits(rows)
    pool_ent = entropy_bits(pool)
    values = np.empty(rows.shape[0], dtype=np.float64)
    argmin = np.empty(rows.shape[0], dtype=np.int64)
    for start in range(0, rows.shape[0], chunk):
        stop = min(start + chunk, rows.shape[0])
        mix = 0.5 * (rows[start:stop, None, :] + pool[None, :, :])
        mat = entropy_bits(mix)
        mat -= 0.5 * (row_ent[start:stop, None] + pool_ent[None, :])
        np.clip(mat, 0.0, 1.0, out=mat)
        argmin[start:stop] = np.argmin(mat, axis=1)
        values[start:stop] = mat[np.arange(stop - start), argmin[start:stop]]
    return values, argmin


def hellinger_embed(q) -> EmbeddingVector:
    """Map a class distribution onto the unit sphere via element-wise sqrt.

    Euclidean proximity between embeddings proxies distributional
    similarity, which is what makes fast nearest-neighbor retrieval sound:
    the embedding distance is 0 exactly when the JSD is 0.
    """
    return EmbeddingVector(np.sqrt(_dist_array(q)))


def hellinger_embed_rows(rows) -> np.ndarray:
    """Bulk form of :func:`hellinger_embed`; one embedding per input row."""
    return np.sqrt(np.asarray(rows, dtype=np.float64))


def voxel_entropy(row, atol: float = ROW_SUM_ATOL) -> float:
    """Shannon entropy of one voxel's class probabilities, in nats.

    Raises:
        InvalidRow: if the row is not a probability vector within ``atol``.
    """
    row = np.asarray(row, dtype=np.float64)
    total = float(row.sum())
    if abs(total - 1.0) > atol or row.min() < 0.0:
        raise InvalidRow(f"row sums to {total!r}, expected 1")
    return -float(_xlnx(row).sum())


def prevalence_weights(q, epsilon: float = DEFAULT_EPSILON) -> WeightVector:
    """Inverse-prevalence class weights: w_c proportional to 1/(q_c + eps).

    Rarer classes receive larger weight; classes entirely absent from the
    sample (q_c = 0) get weight proportional to 1/eps, as the formula
    dictates.  Weights are normalized to sum to 1.
    """
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    q = _dist_array(q)
    raw = 1.0 / (q + epsilon)
    return WeightVector(raw / raw.sum())


def prevalence_weight_rows(rows, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Bulk inverse-prevalence weights; one normalized row per input row."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    rows = np.asarray(rows, dtype=np.float64)
    raw = 1.0 / (rows + epsilon)
    raw /= raw.sum(axis=1, keepdims=True)
    return raw


def per_class_entropy_mass(grid: VoxelProbabilityGrid,
                           chunk: int = ROW_CHUNK) -> np.ndarray:
    """Per-class share of the mean voxel entropy, in nats.

    Entry c is -(1/N) * sum_i p_i(c) * ln p_i(c); the entries sum to the
    mean voxel entropy of the grid.  Keeping the per-class split (rather
    than a pre-weighted scalar) lets the prevalence weighting be reapplied
    later with a different epsilon without re-reading the grid.

    Rows are accumulated in blocks of ``chunk`` rows, in storage order,
    with float64 accumulation, so the result is reproducible bit-for-bit
    for a given chunk size.

    Raises:
        EmptyGrid: if the grid has no visible voxels.
    """
    n = grid.num_voxels
    if n == 0:
        raise EmptyGrid(f"grid {grid.sample_id!r} has no visible voxels")
    total = np.zeros(grid.num_classes, dtype=np.float64)
    for start in range(0, n, chunk):
        block = np.asarray(grid.probs[start:start + chunk], dtype=np.float64)
        total += _xlnx(block).sum(axis=0)
    return -total / n


def frequency_weighted_uncertainty(q, entropy_mass,
                                   epsilon: float = DEFAULT_EPSILON) -> float:
    """Sample-level uncertainty with rare classes amplified.

    The per-class entropy mass is contracted against inverse-prevalence
    weights, so uncertainty on classes that are rare within the sample
    dominates the score.  Equals the full double sum over voxels and
    classes by linearity.

    Raises:
        DimensionMismatch: if q and the entropy mass differ in length.
    """
    q = _dist_array(q)
    entropy_mass = np.asarray(entropy_mass, dtype=np.float64)
    if q.shape != entropy_mass.shape:
        raise DimensionMismatch(
            f"distribution has {q.size} classes, entropy mass has "
            f"{entropy_mass.size}"
        )
    weights = prevalence_weights(q, epsilon)
    return float(weights.weights @ entropy_mass)


def frequency_weighted_uncertainty_rows(q_rows, entropy_mass_rows,
                                        epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Bulk form of :func:`frequency_weighted_uncertainty`."""
    q_rows = np.asarray(q_rows, dtype=np.float64)
    mass = np.asarray(entropy_mass_rows, dtype=np.float64)
    if q_rows.shape != mass.shape:
        raise DimensionMismatch(
            f"shape mismatch: {q_rows.shape} vs {mass.shape}"
        )
    weights = prevalence_weight_rows(q_rows, epsilon)
    return np.einsum("ij,ij->i", weights, mass)
