"""Checkpoint I/O: weight blobs with a plain-text metadata sidecar.

A checkpoint named <name> in a directory consists of
    <name>.weights.npz   -- the parameter arrays (opaque blob)
    <name>.meta.txt      -- key: value lines (spec fingerprint, epoch,
                            best-epoch validation metrics)
    <name>.history.csv   -- per-epoch epoch,train_loss,val_loss,val_acc,val_qwk

The fingerprint is a hash of the model's canonical spec; loading into a
model built from a different spec fails loudly instead of producing a
silently wrong network.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import CheckpointMismatchError
from .model import SequentialModel, TrainingHistory


def spec_fingerprint(spec: dict) -> str:
    canonical = json.dumps(spec, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def save_checkpoint(
    directory: Path | str,
    name: str,
    model: SequentialModel,
    history: TrainingHistory | None = None,
) -> Path:
    """Write weights + sidecar (+ history, when given); returns the weights path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    weights_path = directory / f"{name}.weights.npz"
    np.savez(weights_path, **model.network.state())

    meta_lines = [
        f"name: {name}",
        f"spec_fingerprint: {spec_fingerprint(model.spec)}",
        f"spec: {json.dumps(model.spec, sort_keys=True)}",
    ]
    if history is not None and len(history) > 0:
        best = history.best_epoch if history.best_epoch is not None else 0
        meta_lines += [
            f"epoch: {best}",
            f"epochs_trained: {len(history)}",
            f"best_val_loss: {history.val_loss[best]!r}",
            f"best_val_acc: {history.val_acc[best]!r}",
            f"best_val_qwk: {history.val_qwk[best]!r}",
        ]
    else:
        meta_lines.append("epoch: 0")
    (directory / f"{name}.meta.txt").write_text("\n".join(meta_lines) + "\n")

    if history is not None:
        header, rows = history.history_rows()
        write_csv(directory / f"{name}.history.csv", header, rows)
    return weights_path


def load_checkpoint(directory: Path | str, name: str, model: SequentialModel) -> SequentialModel:
    """Load weights into a freshly built model of the same spec."""
    directory = Path(directory)
    meta = read_meta(directory / f"{name}.meta.txt")
    expected = meta.get("spec_fingerprint", "")
    actual = spec_fingerprint(model.spec)
    if expected != actual:
        raise CheckpointMismatchError(
            f"{name}: checkpoint fingerprint {expected[:12]}... does not match "
            f"model {actual[:12]}...; was the model built from a different spec?"
        )
    with np.load(directory / f"{name}.weights.npz") as blob:
        model.network.set_state({key: blob[key] for key in blob.files})
    return model


def read_meta(path: Path | str) -> dict[str, str]:
    meta = {}
    for line in Path(path).read_text().splitlines():
        if ": " in line:
            key, value = line.split(": ", 1)
            meta[key] = value
    return meta


def write_csv(path: Path | str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def _format_cell(value):
    if isinstance(value, float):
        return repr(value)  # full precision, round-trips exactly
    return value
