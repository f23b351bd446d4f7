"""Label audit tooling: before/after agreement sheets and per-attribute sample grids."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import load_dataset
from .evalkit import emit_grid

ROW_SAMPLES = 10  # samples shown per before/after grid row


class AuditError(ValueError):
    pass


@dataclass
class AuditSheet:
    attribute_id: int
    holders_before: list[str]
    holders_after: list[str]
    agreement_before: float | None  # vs oracle labels, when available
    agreement_after: float | None
    flips: int


def audit_attribute(
    before_root,
    after_root,
    attribute_id: int,
    oracle_labels: np.ndarray | None = None,
    split: str = "train",
    grid_path=None,
    csv_path=None,
) -> AuditSheet:
    """Compare one attribute column across two datasets sharing sample ids.

    Emits a two-row grid (up to 10 holders before / after) and a CSV sheet
    when paths are given. oracle_labels, when provided, must align with the
    before-dataset's record order."""
    before, manifest_b = load_dataset(before_root, split)
    after, manifest_a = load_dataset(after_root, split)
    ids_b = [s.sample_id for s in before]
    ids_a = [s.sample_id for s in after]
    if ids_b != ids_a:
        raise AuditError("datasets do not share sample ids")
    n_attrs = len(manifest_b.attribute_names)
    if not 0 <= attribute_id < n_attrs:
        raise AuditError(f"unknown attribute id {attribute_id} (have {n_attrs})")

    col_b = np.array([s.attributes[attribute_id] for s in before])
    col_a = np.array([s.attributes[attribute_id] for s in after])
    holders_b = [s.sample_id for s, v in zip(before, col_b) if v]
    holders_a = [s.sample_id for s, v in zip(after, col_a) if v]
    flips = int((col_b != col_a).sum())
    agree_b = agree_a = None
    if oracle_labels is not None:
        oracle_col = np.asarray(oracle_labels)[:, attribute_id]
        agree_b = float((col_b == oracle_col).mean())
        agree_a = float((col_a == oracle_col).mean())
    sheet = AuditSheet(attribute_id, holders_b, holders_a, agree_b, agree_a, flips)

    if grid_path is not None:
        imgs = []
        for dataset, col in ((before, col_b), (after, col_a)):
            holders = [s for s, v in zip(dataset, col) if v][:ROW_SAMPLES]
            row = [s.image for s in holders]
            blank = np.full_like(before[0].image, -1.0)
            row += [blank] * (ROW_SAMPLES - len(row))
            imgs.extend(row)
        emit_grid(np.stack(imgs), 2, ROW_SAMPLES, grid_path)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["attribute_id", "flips", "agreement_before", "agreement_after",
                 "holders_before", "holders_after"]
            )
            writer.writerow(
                [attribute_id, flips,
                 "" if agree_b is None else f"{agree_b:.6f}",
                 "" if agree_a is None else f"{agree_a:.6f}",
                 len(holders_b), len(holders_a)]
            )
    return sheet


def audit_all(
    before_root, after_root, out_dir, oracle_labels: np.ndarray | None = None, split: str = "train"
) -> list[AuditSheet]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _, manifest = load_dataset(before_root, split)
    sheets = []
    for a in range(len(manifest.attribute_names)):
        sheets.append(
            audit_attribute(
                before_root, after_root, a, oracle_labels, split,
                grid_path=out_dir / f"attr_{a:03d}.png",
                csv_path=out_dir / f"attr_{a:03d}.csv",
            )
        )
    return sheets
