"""Dataset manifests, APTOS-layout ingest, synthetic data, stratified splits.

A manifest is an ordered list of (id, image path, grade) records; images stay
on disk until a loader turns a manifest into arrays.  The synthetic generator
produces a desk-scale stand-in task whose severity signal (number of bright
lesion-like blobs on a dark disc) is genuinely ordinal and easy to learn.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import (
    ClassTooSmallError,
    InvalidGradeError,
    MalformedCSVError,
    NoValidRecordsError,
)

NUM_GRADES = 5
GRADE_NAMES = ("no DR", "mild", "moderate", "severe", "proliferative")


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: Path | None
    grade: int

    def __post_init__(self):
        if not (0 <= self.grade <= 4):
            raise InvalidGradeError(f"grade must be in 0..4, got {self.grade}")


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered sample records plus a split tag and a provenance note."""

    records: tuple[SampleRecord, ...]
    split_tag: str = "all"
    provenance: str = ""

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            seen, dupes = set(), set()
            for i in ids:
                (dupes if i in seen else seen).add(i)
            raise ValueError(f"duplicate ids in manifest: {sorted(dupes)[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def class_counts(self) -> dict[int, int]:
        counts = {g: 0 for g in range(NUM_GRADES)}
        for r in self.records:
            counts[r.grade] += 1
        return {g: n for g, n in counts.items() if n > 0}

    def records_by_class(self) -> dict[int, list[SampleRecord]]:
        by_class: dict[int, list[SampleRecord]] = {}
        for r in self.records:
            by_class.setdefault(r.grade, []).append(r)
        return by_class

    def grades(self) -> np.ndarray:
        return np.array([r.grade for r in self.records], dtype=np.int64)


@dataclass
class ArrayDataset:
    """In-memory samples: x is (N,H,W,C) images or (N,D) feature vectors."""

    x: np.ndarray
    grades: np.ndarray
    ids: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.grades)


@dataclass
class IngestStats:
    n_rows: int = 0
    n_missing_image: int = 0
    n_bad_grade: int = 0
    n_corrupt_image: int = 0


def load_image(path: Path | str, mode: str = "RGB") -> np.ndarray:
    """Decode a PNG/JPEG into an (H, W, C) float array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert(mode), dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_image(path: Path | str, img: np.ndarray) -> None:
    """Write an (H, W, C) float array in [0, 1] as an 8-bit PNG/JPEG."""
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    if arr.shape[-1] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def ingest_aptos(
    csv_path: Path | str, image_dir: Path | str
) -> tuple[DatasetManifest, IngestStats]:
    """Read an APTOS-layout dataset: a CSV with id_code,diagnosis columns and
    one <id_code>.png (or .jpg/.jpeg) per row in image_dir.

    Rows with grades outside 0..4 are rejected; rows whose image file is
    missing or does not decode are skipped.  All three cases are counted in
    the returned stats.
    """
    csv_path = Path(csv_path)
    image_dir = Path(image_dir)
    stats = IngestStats()
    records: list[SampleRecord] = []
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "id_code" not in header or "diagnosis" not in header:
            raise MalformedCSVError(
                f"{csv_path}: expected columns id_code,diagnosis, got {header}"
            )
        for row in reader:
            stats.n_rows += 1
            sample_id = (row["id_code"] or "").strip()
            try:
                grade = int((row["diagnosis"] or "").strip())
            except ValueError:
                grade = -1
            if not sample_id or not (0 <= grade <= 4):
                stats.n_bad_grade += 1
                continue
            path = _find_image(image_dir, sample_id)
            if path is None:
                stats.n_missing_image += 1
                continue
            if not _image_decodes(path):
                stats.n_corrupt_image += 1
                continue
            records.append(SampleRecord(sample_id, path, grade))
    if not records:
        raise NoValidRecordsError(f"no usable records in {csv_path}")
    manifest = DatasetManifest(
        tuple(records), split_tag="all", provenance=f"aptos({csv_path.name})"
    )
    return manifest, stats


def _find_image(image_dir: Path, sample_id: str) -> Path | None:
    for ext in (".png", ".jpg", ".jpeg"):
        candidate = image_dir / f"{sample_id}{ext}"
        if candidate.is_file():
            return candidate
    return None


def _image_decodes(path: Path) -> bool:
    """Cheap header-level validation; does not read the full pixel data."""
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except Exception:
        return False


def generate_synthetic(
    n_per_class: int, size: int, seed: int, out_dir: Path | str
) -> DatasetManifest:
    """Render a labeled synthetic fundus-like dataset to out_dir.

    Each image is a dark frame with a reddish disc; grade g gets 6*g bright
    lesion-like blobs scattered on the disc, so severity is visible both in
    blob count and in mean intensity.  Deterministic for a given seed.
    """
    if n_per_class < 1:
        raise ValueError(f"n_per_class must be >= 1, got {n_per_class}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    for grade in range(NUM_GRADES):
        for i in range(n_per_class):
            img = _synthetic_image(grade, size, rng)
            sample_id = f"synth_g{grade}_{i:04d}"
            path = out_dir / f"{sample_id}.png"
            save_image(path, img)
            records.append(SampleRecord(sample_id, path, grade))
    manifest = DatasetManifest(
        tuple(records),
        split_tag="all",
        provenance=f"synthetic(seed={seed}, n_per_class={n_per_class}, size={size})",
    )
    save_manifest_csv(out_dir / "manifest.csv", manifest)
    return manifest


def _synthetic_image(grade: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    center = size / 2.0
    dist = np.hypot(yy - center, xx - center)

    disc_radius = 0.47 * size
    disc = (dist <= disc_radius).astype(np.float64)

    base = np.array([0.45, 0.25, 0.12]) + rng.uniform(-0.03, 0.03, size=3)
    img = np.full((size, size, 3), 0.02)
    img += disc[:, :, None] * (base[None, None, :] - 0.02)

    n_blobs = 6 * grade
    blob_color = np.array([0.50, 0.45, 0.30])
    for _ in range(n_blobs):
        angle = rng.uniform(0.0, 2.0 * np.pi)
        radius = disc_radius * 0.85 * np.sqrt(rng.uniform(0.0, 1.0))
        by = center + radius * np.sin(angle)
        bx = center + radius * np.cos(angle)
        sigma = size * rng.uniform(0.035, 0.055)
        bump = np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2.0 * sigma**2))
        img += (bump * disc)[:, :, None] * blob_color[None, None, :]

    img += rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def split(
    manifest: DatasetManifest, split_fraction: float, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    """Stratified train/validation split: per grade, round(fraction * n) records
    go to train (at least 1 on each side).  Deterministic for a given seed."""
    if not (0.0 < split_fraction < 1.0):
        raise ValueError(f"split_fraction must be in (0, 1), got {split_fraction}")
    rng = np.random.default_rng(seed)
    train: list[SampleRecord] = []
    val: list[SampleRecord] = []
    for grade, recs in sorted(manifest.records_by_class().items()):
        if len(recs) < 2:
            raise ClassTooSmallError(
                f"grade {grade} has {len(recs)} record(s); need >= 2 to split"
            )
        n_train = int(round(split_fraction * len(recs)))
        n_train = min(max(n_train, 1), len(recs) - 1)
        order = rng.permutation(len(recs))
        train.extend(recs[i] for i in order[:n_train])
        val.extend(recs[i] for i in order[n_train:])
    train = [train[i] for i in rng.permutation(len(train))]
    val = [val[i] for i in rng.permutation(len(val))]
    note = f" split(fraction={split_fraction}, seed={seed})"
    return (
        DatasetManifest(tuple(train), "train", manifest.provenance + note),
        DatasetManifest(tuple(val), "val", manifest.provenance + note),
    )


def save_manifest_csv(path: Path | str, manifest: DatasetManifest) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "grade", "path"])
        for r in manifest.records:
            writer.writerow([r.id, r.grade, str(r.image_path or "")])


def load_manifest_csv(
    path: Path | str, split_tag: str = "all", provenance: str = ""
) -> DatasetManifest:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or {"id", "grade", "path"} - set(reader.fieldnames):
            raise MalformedCSVError(f"{path}: expected columns id,grade,path")
        for row in reader:
            img = Path(row["path"]) if row["path"] else None
            records.append(SampleRecord(row["id"], img, int(row["grade"])))
    return DatasetManifest(tuple(records), split_tag, provenance or f"csv({path})")
