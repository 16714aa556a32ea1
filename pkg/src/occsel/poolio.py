"""File formats: binary grids, manifests, summaries, selections, cycle state.

Grid files are binary with a 16-byte header followed by the probability
payload::

    offset  size  field
    0       4     magic bytes "OCGP"
    4       2     format version, little-endian u16 (currently 1)
    6       8     N, visible-voxel count, little-endian u64
    14      2     K, class count, little-endian u16
    16      N*K*4 probabilities, little-endian float32, row-major

Only visible voxels are stored; there is no mask in the file.  Rows must
sum to 1 within ``GRID_ROW_ATOL`` (float32 storage tolerance).  Everything
else is line-delimited JSON with one record per line, except the cycle
state, which is a single JSON document written atomically
(temp-then-rename).  Floats serialize via ``repr`` and round-trip exactly.

Readers never repair malformed input; they raise with the offending line
or row.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .distributions import ClassDistribution, VoxelProbabilityGrid
from .errors import (
    BadMagic,
    DimensionMismatch,
    DuplicateId,
    RecordFormatError,
    RowNotNormalized,
    StateCorrupt,
    TruncatedPayload,
    VersionUnsupported,
)
from .selection import (
    ComponentScores,
    CycleState,
    SelectionEntry,
    SelectionResult,
)
from .summaries import SampleSummary, summarize_grid  # noqa: F401  (re-export)

GRID_MAGIC = b"OCGP"
GRID_VERSION = 1
GRID_HEADER = struct.Struct("<4sHQH")
GRID_ROW_ATOL = 1e-4

STATE_FORMAT = "occsel-cycle-state"
STATE_VERSION = 1


# ---------------------------------------------------------------------------
# Binary grid files
# ---------------------------------------------------------------------------


def write_grid(grid: VoxelProbabilityGrid, path) -> None:
    """Serialize a grid; probabilities are stored as little-endian float32."""
    payload = np.ascontiguousarray(grid.probs, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(GRID_HEADER.pack(GRID_MAGIC, GRID_VERSION,
                                  grid.num_voxels, grid.num_classes))
        fh.write(payload.tobytes())


def read_grid(path, sample_id: Optional[str] = None) -> VoxelProbabilityGrid:
    """Read and validate a grid file.

    Raises:
        BadMagic, VersionUnsupported, TruncatedPayload: on structural damage.
        RowNotNormalized: if a stored row does not sum to 1 within
            ``GRID_ROW_ATOL`` (carries the row index).
    """
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.read(GRID_HEADER.size)
        if header[:4] != GRID_MAGIC:
            raise BadMagic(f"{path}: expected magic {GRID_MAGIC!r}")
        if len(header) < GRID_HEADER.size:
            raise TruncatedPayload(f"{path}: header cut short")
        _, version, n, k = GRID_HEADER.unpack(header)
        if version != GRID_VERSION:
            raise VersionUnsupported(f"{path}: version {version}")
        body = fh.read()
    expected = n * k * 4
    if len(body) != expected:
        raise TruncatedPayload(
            f"{path}: payload holds {len(body)} bytes, header promises {expected}"
        )
    probs = np.frombuffer(body, dtype="<f4").reshape(n, k)
    if n:
        sums = probs.sum(axis=1, dtype=np.float64)
        bad = np.flatnonzero(np.abs(sums - 1.0) > GRID_ROW_ATOL)
        if bad.size:
            raise RowNotNormalized(int(bad[0]), float(sums[bad[0]]))
    return VoxelProbabilityGrid(
        sample_id=sample_id if sample_id is not None else path.stem,
        probs=probs,
        row_atol=GRID_ROW_ATOL,
    )


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    """One pool member: a grid file reference or an inline summary."""

    sample_id: str
    grid_path: Optional[Path] = None
    summary: Optional[SampleSummary] = None


def write_manifest(entries, path) -> None:
    """Write manifest records; grid paths must already be relative."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            record = {"sample_id": entry.sample_id}
            if entry.grid_path is not None:
                record["grid"] = str(entry.grid_path)
            else:
                record["summary"] = _summary_record(entry.summary)
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_manifest(path) -> list:
    """Parse a manifest; grid paths resolve relative to the manifest's dir.

    Raises:
        RecordFormatError: on parse failures or duplicate ids (with the
            line number).
    """
    path = Path(path)
    base = path.parent
    entries = []
    seen = set()
    for lineno, record in _json_lines(path):
        sample_id = _required(record, "sample_id", lineno)
        if sample_id in seen:
            raise RecordFormatError(f"duplicate sample id {sample_id!r}", lineno)
        seen.add(sample_id)
        if "grid" in record:
            entries.append(ManifestEntry(sample_id, grid_path=base / record["grid"]))
        elif "summary" in record:
            summary = _parse_summary(record["summary"], lineno)
            if summary.sample_id != sample_id:
                raise RecordFormatError(
                    f"inline summary id {summary.sample_id!r} does not match "
                    f"manifest id {sample_id!r}", lineno)
            entries.append(ManifestEntry(sample_id, summary=summary))
        else:
            raise RecordFormatError(
                "manifest entry needs a 'grid' path or an inline 'summary'",
                lineno)
    return entries


# ---------------------------------------------------------------------------
# Summary files
# ---------------------------------------------------------------------------


def _summary_record(summary: SampleSummary) -> dict:
    return {
        "sample_id": summary.sample_id,
        "num_classes": summary.num_classes,
        "voxel_count": summary.voxel_count,
        "class_distribution": summary.q.probs.tolist(),
        "entropy_mass": summary.entropy_mass.tolist(),
    }


def _parse_summary(record: dict, lineno: int) -> SampleSummary:
    try:
        return SampleSummary(
            sample_id=record["sample_id"],
            num_classes=int(record["num_classes"]),
            voxel_count=int(record["voxel_count"]),
            q=ClassDistribution(record["class_distribution"]),
            entropy_mass=np.asarray(record["entropy_mass"], dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordFormatError(f"bad summary record: {exc}", lineno) from exc


def write_summaries(summaries, path) -> None:
    """Write summaries (mapping or iterable) as one JSON record per line."""
    if hasattr(summaries, "values"):
        summaries = summaries.values()
    with open(path, "w", encoding="utf-8") as fh:
        for summary in summaries:
            fh.write(json.dumps(_summary_record(summary), sort_keys=True) + "\n")


def read_summaries(path) -> dict:
    """Read a summary file into a mapping id -> SampleSummary.

    Raises:
        RecordFormatError: on parse/validation failures (with line number).
    """
    out = {}
    for lineno, record in _json_lines(path):
        summary = _parse_summary(record, lineno)
        if summary.sample_id in out:
            raise RecordFormatError(
                f"duplicate sample id {summary.sample_id!r}", lineno)
        out[summary.sample_id] = summary
    return out


# ---------------------------------------------------------------------------
# Selection files
# ---------------------------------------------------------------------------


def write_selection(result: SelectionResult, path) -> None:
    """One JSON record per selected sample, in rank order."""
    with open(path, "w", encoding="utf-8") as fh:
        for entry in result.entries:
            s = entry.scores
            record = {
                "cycle": result.cycle_index,
                "rank": entry.rank,
                "sample_id": entry.sample_id,
                "inter": s.inter,
                "intra": s.intra,
                "ufw": s.ufw,
                "inter_norm": s.inter_norm,
                "intra_norm": s.intra_norm,
                "ufw_norm": s.ufw_norm,
                "cas": entry.cas,
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_selection(path) -> SelectionResult:
    """Parse a selection file back into a SelectionResult.

    Raises:
        RecordFormatError: on parse errors, rank gaps, duplicate ids,
            inconsistent cycle indices, or an empty file.
    """
    entries = []
    cycle = None
    for lineno, record in _json_lines(path):
        try:
            if cycle is None:
                cycle = int(record["cycle"])
            elif int(record["cycle"]) != cycle:
                raise RecordFormatError(
                    f"cycle changes mid-file ({cycle} -> {record['cycle']})",
                    lineno)
            entries.append(SelectionEntry(
                rank=int(record["rank"]),
                sample_id=record["sample_id"],
                scores=ComponentScores(
                    inter=float(record["inter"]),
                    intra=None if record["intra"] is None else float(record["intra"]),
                    ufw=float(record["ufw"]),
                    inter_norm=float(record["inter_norm"]),
                    intra_norm=(None if record["intra_norm"] is None
                                else float(record["intra_norm"])),
                    ufw_norm=float(record["ufw_norm"]),
                ),
                cas=float(record["cas"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordFormatError(f"bad selection record: {exc}", lineno) from exc
    if not entries:
        raise RecordFormatError(f"{path}: selection file holds no entries")
    try:
        return SelectionResult(cycle_index=cycle, budget=len(entries),
                               entries=tuple(entries))
    except ValueError as exc:
        raise RecordFormatError(str(exc)) from exc


# ---------------------------------------------------------------------------
# Cycle state
# ---------------------------------------------------------------------------


def save_state(state: CycleState, path) -> None:
    """Persist labeled/unlabeled membership atomically (temp then rename)."""
    document = {
        "format": STATE_FORMAT,
        "version": STATE_VERSION,
        "cycle_index": state.cycle_index,
        "labeled": [
            {"sample_id": i, "class_distribution": state.labeled[i].probs.tolist()}
            for i in sorted(state.labeled)
        ],
        "unlabeled_ids": sorted(state.unlabeled_ids),
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(document, fh, sort_keys=True, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def load_state(path) -> CycleState:
    """Load a cycle state, verifying its structural invariants.

    Raises:
        StateCorrupt: on overlap between labeled and unlabeled ids, missing
            or invalid cached distributions, or a malformed document.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    except json.JSONDecodeError as exc:
        raise StateCorrupt(f"{path}: not valid JSON ({exc})") from exc
    if document.get("format") != STATE_FORMAT:
        raise StateCorrupt(f"{path}: not a cycle-state document")
    if document.get("version") != STATE_VERSION:
        raise StateCorrupt(f"{path}: unsupported version {document.get('version')}")
    try:
        labeled = {}
        for item in document["labeled"]:
            sample_id = item["sample_id"]
            if sample_id in labeled:
                raise StateCorrupt(f"duplicate labeled id {sample_id!r}")
            labeled[sample_id] = ClassDistribution(item["class_distribution"])
        unlabeled = document["unlabeled_ids"]
        if len(set(unlabeled)) != len(unlabeled):
            raise StateCorrupt("duplicate unlabeled ids")
        return CycleState(
            labeled=labeled,
            unlabeled_ids=set(unlabeled),
            cycle_index=int(document["cycle_index"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise StateCorrupt(f"{path}: invalid state document ({exc})") from exc


# ---------------------------------------------------------------------------
# External feature files (coreset escape hatch)
# ---------------------------------------------------------------------------


def write_features(features, path) -> None:
    """Write per-sample feature vectors, one JSON record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for sample_id in sorted(features):
            vec = np.asarray(features[sample_id], dtype=np.float64)
            fh.write(json.dumps(
                {"sample_id": sample_id, "feature": vec.tolist()},
                sort_keys=True) + "\n")


def read_features(path) -> dict:
    """Read per-sample feature vectors; all must share one dimension.

    Raises:
        RecordFormatError: on parse failures or duplicate ids.
        DimensionMismatch: on inconsistent feature lengths.
    """
    out = {}
    dim = None
    for lineno, record in _json_lines(path):
        try:
            sample_id = record["sample_id"]
            vec = np.asarray(record["feature"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise RecordFormatError(f"bad feature record: {exc}", lineno) from exc
        if sample_id in out:
            raise RecordFormatError(f"duplicate sample id {sample_id!r}", lineno)
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DimensionMismatch(
                f"line {lineno}: feature has {vec.size} dims, expected {dim}")
        out[sample_id] = vec
    return out


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _json_lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordFormatError(f"invalid JSON: {exc}", lineno) from exc


def _required(record, key, lineno):
    try:
        return record[key]
    except KeyError:
        raise RecordFormatError(f"missing field {key!r}", lineno) from None


def convert_dense_tensor(tensor, visibility_mask, sample_id):
    """Importer stub for dataset-native dense occupancy tensors.

    The expected inputs are a dense (X, Y, Z, K) float array of per-voxel
    class probabilities and an (X, Y, Z) boolean visibility mask; the grid
    rows would be the masked voxels flattened in C order.  Writing actual
    importers for specific dataset layouts is out of scope here.
    """
    raise NotImplementedError(
        "dataset-native importers are not provided; build a "
        "VoxelProbabilityGrid from the masked, flattened tensor instead"
    )
