"""Cumulative ordinal multi-label encoding and class-balancing resampling.

A severity grade g in 0..4 becomes a 4-bit target whose first g bits are 1:
grade 4 is [1, 1, 1, 1], grade 0 is [0, 0, 0, 0].  Bit k therefore means
"severity is at least k+1", which respects the progressive nature of the
disease.  Decoding takes the longest prefix of probabilities above a
threshold.

Resampling rebalances a dataset so every grade hits the same target count:
minority classes are replicated (each index floor(target/n) times plus a
random remainder drawn without replacement), majority classes are subsampled
without replacement.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dataset import DatasetManifest, SampleRecord
from .errors import EmptyClassError, IndexOutOfRangeError, InvalidGradeError

NUM_BITS = 4

_REPLICA_SUFFIX = re.compile(r"~r\d+$")


def encode(grade: int) -> np.ndarray:
    """Ordinal target for one grade: bits[i] = 1 iff i < grade."""
    if not isinstance(grade, (int, np.integer)) or not (0 <= grade <= 4):
        raise InvalidGradeError(f"grade must be an integer in 0..4, got {grade!r}")
    return (np.arange(NUM_BITS) < grade).astype(np.float64)


def encode_batch(grades) -> np.ndarray:
    """Ordinal targets for a sequence of grades, shape (N, 4)."""
    grades = np.asarray(grades)
    if grades.size and (grades.min() < 0 or grades.max() > 4):
        raise InvalidGradeError(f"grades must lie in 0..4, got range "
                                f"[{grades.min()}, {grades.max()}]")
    return (np.arange(NUM_BITS)[None, :] < grades[:, None]).astype(np.float64)


def decode(probs, threshold: float = 0.5) -> int:
    """Grade = length of the longest prefix with every entry above threshold.

    Robust to non-monotone probability vectors: the prefix stops at the first
    entry <= threshold even if later entries exceed it.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape != (NUM_BITS,):
        raise ValueError(f"expected a length-{NUM_BITS} vector, got shape {probs.shape}")
    above = probs > threshold
    grade = 0
    while grade < NUM_BITS and above[grade]:
        grade += 1
    return grade


def decode_batch(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Vectorized decode for an (N, 4) probability array."""
    probs = np.asarray(probs, dtype=np.float64)
    above = probs > threshold
    # prefix length = index of first False, or 4 when all True
    stops = np.argmin(above, axis=1)
    return np.where(above.all(axis=1), NUM_BITS, stops).astype(np.int64)


@dataclass(frozen=True)
class ResamplePlan:
    """Per-class replication table: mapping[grade] lists, for every output
    slot, which source index (position within that grade's records) fills it."""

    per_class_target: int
    mapping: dict[int, np.ndarray]
    seed: int


def build_resample_plan(
    class_counts: Mapping[int, int], per_class_target: int = 700, seed: int = 0
) -> ResamplePlan:
    """Plan index replication so every class ends up at per_class_target.

    For a class with n sources and n <= target: each index appears
    floor(target/n) times and (target mod n) distinct indices, drawn
    uniformly without replacement, appear once more.  Classes with
    n > target are subsampled without replacement.
    """
    if per_class_target < 1:
        raise ValueError(f"per_class_target must be >= 1, got {per_class_target}")
    rng = np.random.default_rng(seed)
    mapping: dict[int, np.ndarray] = {}
    for cls in sorted(class_counts):
        n = class_counts[cls]
        if n < 1:
            raise EmptyClassError(f"class {cls} has no samples")
        if n >= per_class_target:
            chosen = rng.choice(n, size=per_class_target, replace=False)
        else:
            base = per_class_target // n
            remainder = per_class_target - base * n
            extras = rng.choice(n, size=remainder, replace=False)
            chosen = np.concatenate([np.repeat(np.arange(n), base), extras])
        mapping[cls] = chosen.astype(np.int64)
    return ResamplePlan(per_class_target, mapping, seed)


def apply_resample_plan(plan: ResamplePlan, manifest: DatasetManifest) -> DatasetManifest:
    """Materialize a plan against a manifest.

    Replicated records keep their source image path; their ids get a ~r<k>
    suffix so ids stay unique within the manifest (strip it back with
    source_id).  The output order is shuffled deterministically by the
    plan's seed.
    """
    by_class = manifest.records_by_class()
    if set(plan.mapping) != set(by_class):
        raise IndexOutOfRangeError(
            f"plan classes {sorted(plan.mapping)} != manifest classes {sorted(by_class)}"
        )
    records: list[SampleRecord] = []
    for cls in sorted(plan.mapping):
        sources = by_class[cls]
        seen: dict[int, int] = {}
        for idx in plan.mapping[cls]:
            idx = int(idx)
            if not (0 <= idx < len(sources)):
                raise IndexOutOfRangeError(
                    f"class {cls}: index {idx} out of range for {len(sources)} sources"
                )
            occurrence = seen.get(idx, 0)
            seen[idx] = occurrence + 1
            src = sources[idx]
            if occurrence == 0:
                records.append(src)
            else:
                records.append(
                    SampleRecord(f"{src.id}~r{occurrence}", src.image_path, src.grade)
                )
    rng = np.random.default_rng(plan.seed)
    records = [records[i] for i in rng.permutation(len(records))]
    return DatasetManifest(
        tuple(records),
        manifest.split_tag,
        manifest.provenance + f" resampled(target={plan.per_class_target}, seed={plan.seed})",
    )


def source_id(record_id: str) -> str:
    """Strip the ~r<k> replica suffix added by apply_resample_plan, if any."""
    return _REPLICA_SUFFIX.sub("", record_id)
