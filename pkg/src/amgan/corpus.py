"""Synthetic shapes corpus: generation, disk format, loading, planted label noise.

Dataset layout (one directory per split):

    root/
      train/
        manifest.txt          # line-oriented key-value, one `record` line per sample
        {id}.png              # 8-bit RGB image
        {id}.mask.png         # 8-bit grayscale, 0 or 255
        {id}.attr.txt         # space-separated 0/1, length A
      test/
        ...

Images are stored as uint8 PNG and mapped to [-1, 1] on load.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

SHAPES = ("circle", "square", "triangle", "diamond")
COLORS = ("red", "green", "blue", "yellow", "magenta", "cyan")
COLOR_RGB = {
    "red": (220, 40, 40),
    "green": (40, 200, 40),
    "blue": (40, 80, 230),
    "yellow": (230, 220, 40),
    "magenta": (210, 40, 210),
    "cyan": (40, 210, 210),
}
SIZES = ("small", "medium", "large")
SIZE_RADIUS = {"small": 10, "medium": 15, "large": 20}

NUM_SHAPES = len(SHAPES)
NUM_COLORS = len(COLORS)
NUM_SIZES = len(SIZES)

# attribute vector layout: [shape one-hot | fill one-hot | border one-hot | size one-hot]
SHAPE_OFFSET = 0
FILL_OFFSET = NUM_SHAPES
BORDER_OFFSET = NUM_SHAPES + NUM_COLORS
SIZE_OFFSET = NUM_SHAPES + 2 * NUM_COLORS
NUM_ATTRIBUTES = NUM_SHAPES + 2 * NUM_COLORS + NUM_SIZES  # 19

BORDER_WIDTH = 3
MAX_CLASSES = NUM_SHAPES * NUM_COLORS


class CorpusError(Exception):
    """Base error for corpus generation/loading problems."""


class SpecError(CorpusError):
    pass


class LoadError(CorpusError):
    pass


class SplitOverlapError(CorpusError):
    pass


def attribute_names() -> list[str]:
    names = [f"shape:{s}" for s in SHAPES]
    names += [f"fill:{c}" for c in COLORS]
    names += [f"border:{c}" for c in COLORS]
    names += [f"size:{s}" for s in SIZES]
    return names


FILL_ATTRIBUTE_IDS = tuple(range(FILL_OFFSET, FILL_OFFSET + NUM_COLORS))


@dataclass
class ShapeSpec:
    """Factor vocabulary and class layout of the synthetic corpus.

    A class is a (shape kind, fill color) pair; border color and size vary
    freely per sample. Every attribute index maps to exactly one factor value.
    """

    image_size: int = 64
    num_classes: int = 10
    num_attributes: int = NUM_ATTRIBUTES

    def __post_init__(self):
        if self.image_size < 32:
            raise SpecError(f"image_size {self.image_size} too small (min 32)")
        if not (1 <= self.num_classes <= MAX_CLASSES):
            raise SpecError(
                f"num_classes must be in [1, {MAX_CLASSES}], got {self.num_classes}"
            )
        if self.num_attributes < NUM_ATTRIBUTES:
            raise SpecError(
                f"num_attributes {self.num_attributes} < {NUM_ATTRIBUTES} factor values"
            )

    def class_factors(self, class_id: int) -> tuple[int, int]:
        """(shape index, fill color index) for a class id; the interleaved
        mapping keeps any contiguous class range varied in both factors."""
        if not 0 <= class_id < self.num_classes:
            raise SpecError(f"class_id {class_id} out of range")
        shape = class_id % NUM_SHAPES
        fill = (class_id // NUM_SHAPES + shape) % NUM_COLORS
        return shape, fill

    def attribute_vector(self, shape_idx, fill_idx, border_idx, size_idx) -> np.ndarray:
        vec = np.zeros(self.num_attributes, dtype=np.int8)
        vec[SHAPE_OFFSET + shape_idx] = 1
        vec[FILL_OFFSET + fill_idx] = 1
        vec[BORDER_OFFSET + border_idx] = 1
        vec[SIZE_OFFSET + size_idx] = 1
        return vec


@dataclass
class DatasetManifest:
    split: str
    class_ids: list[int]
    sample_count: int
    attribute_names: list[str]
    records: list[tuple[str, int]] = field(default_factory=list)  # (sample_id, class_id)


@dataclass
class Sample:
    sample_id: str
    image: np.ndarray  # float32 H×W×3 in [-1, 1]
    mask: np.ndarray  # uint8 H×W, values {0, 1}
    attributes: np.ndarray  # int8 length A, values {0, 1}
    class_id: int


def _shape_region(shape_idx: int, radius: float, center: tuple[int, int], size: int) -> np.ndarray:
    cy, cx = center
    yy, xx = np.mgrid[0:size, 0:size]
    dy = yy - cy
    dx = xx - cx
    name = SHAPES[shape_idx]
    if name == "circle":
        return dx * dx + dy * dy <= radius * radius
    if name == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= radius
    if name == "triangle":
        return (dy <= radius) & (dy >= 2 * np.abs(dx) - radius)
    if name == "diamond":
        return np.abs(dx) + np.abs(dy) <= radius
    raise SpecError(f"unknown shape index {shape_idx}")


def render_sample(
    spec: ShapeSpec,
    shape_idx: int,
    fill_idx: int,
    border_idx: int,
    size_idx: int,
    center: tuple[int, int],
) -> tuple[np.ndarray, np.ndarray]:
    """Rasterize one shape; returns (uint8 image H×W×3, uint8 mask H×W in {0,1})."""
    size = spec.image_size
    radius = SIZE_RADIUS[SIZES[size_idx]] * size / 64.0
    outer = _shape_region(shape_idx, radius, center, size)
    inner = _shape_region(shape_idx, radius - BORDER_WIDTH, center, size)
    img = np.zeros((size, size, 3), dtype=np.uint8)
    img[outer] = COLOR_RGB[COLORS[border_idx]]
    img[inner] = COLOR_RGB[COLORS[fill_idx]]
    mask = outer.astype(np.uint8)
    return img, mask


def _sample_center(rng: np.random.Generator, spec: ShapeSpec, size_idx: int) -> tuple[int, int]:
    margin = int(SIZE_RADIUS[SIZES[size_idx]] * spec.image_size / 64.0) + 1
    lo, hi = margin, spec.image_size - margin
    return int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1))


def image_to_unit(img_u8: np.ndarray) -> np.ndarray:
    return (img_u8.astype(np.float32) / 127.5) - 1.0


def unit_to_image(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _manifest_path(root: Path, split: str) -> Path:
    return Path(root) / split / "manifest.txt"


def write_manifest(manifest: DatasetManifest, path: Path) -> None:
    lines = [
        f"split {manifest.split}",
        "classes " + ",".join(str(c) for c in manifest.class_ids),
        f"sample_count {manifest.sample_count}",
        "attribute_names " + ",".join(manifest.attribute_names),
    ]
    lines += [f"record {sid} {cid}" for sid, cid in manifest.records]
    path.write_text("\n".join(lines) + "\n")


def read_manifest(path: Path) -> DatasetManifest:
    if not path.is_file():
        raise LoadError(f"manifest not found: {path}")
    split = None
    class_ids: list[int] = []
    sample_count = -1
    names: list[str] = []
    records: list[tuple[str, int]] = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" ")
        if key == "split":
            split = value
        elif key == "classes":
            class_ids = [int(v) for v in value.split(",") if v]
        elif key == "sample_count":
            sample_count = int(value)
        elif key == "attribute_names":
            names = value.split(",")
        elif key == "record":
            sid, cid = value.split()
            records.append((sid, int(cid)))
        else:
            raise LoadError(f"unknown manifest key {key!r} in {path}")
    if split is None or sample_count < 0:
        raise LoadError(f"incomplete manifest: {path}")
    if sample_count != len(records):
        raise LoadError(
            f"manifest {path} declares {sample_count} samples but lists {len(records)} records"
        )
    return DatasetManifest(split, class_ids, sample_count, names, records)


def generate_synthetic_dataset(
    spec: ShapeSpec,
    n_per_class: int,
    seed: int,
    root: str | os.PathLike,
    train_fraction: float = 0.8,
) -> dict[str, DatasetManifest]:
    """Render the full corpus to disk; train/test class sets are disjoint.

    Same (spec, n_per_class, seed) reproduces byte-identical files.
    """
    if n_per_class < 1:
        raise SpecError("n_per_class must be >= 1")
    root = Path(root)
    n_train_classes = max(1, round(train_fraction * spec.num_classes))
    n_train_classes = min(n_train_classes, spec.num_classes - 1) if spec.num_classes > 1 else 1
    splits = {
        "train": list(range(n_train_classes)),
        "test": list(range(n_train_classes, spec.num_classes)),
    }
    rng = np.random.default_rng(seed)
    manifests: dict[str, DatasetManifest] = {}
    names = attribute_names()
    for split, class_ids in splits.items():
        split_dir = root / split
        try:
            split_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise CorpusError(f"cannot create {split_dir}: {exc}") from exc
        records = []
        for cid in class_ids:
            shape_idx, fill_idx = spec.class_factors(cid)
            for k in range(n_per_class):
                border_idx = int(rng.integers(0, NUM_COLORS))
                size_idx = int(rng.integers(0, NUM_SIZES))
                center = _sample_center(rng, spec, size_idx)
                img, mask = render_sample(spec, shape_idx, fill_idx, border_idx, size_idx, center)
                attrs = spec.attribute_vector(shape_idx, fill_idx, border_idx, size_idx)
                sid = f"c{cid:03d}_s{k:04d}"
                Image.fromarray(img).save(split_dir / f"{sid}.png")
                Image.fromarray(mask * 255).save(split_dir / f"{sid}.mask.png")
                (split_dir / f"{sid}.attr.txt").write_text(
                    " ".join(str(int(b)) for b in attrs) + "\n"
                )
                records.append((sid, cid))
        manifest = DatasetManifest(split, class_ids, len(records), names, records)
        write_manifest(manifest, _manifest_path(root, split))
        manifests[split] = manifest
    return manifests


def _load_record(split_dir: Path, sid: str, cid: int, num_attrs: int) -> Sample:
    img_path = split_dir / f"{sid}.png"
    mask_path = split_dir / f"{sid}.mask.png"
    attr_path = split_dir / f"{sid}.attr.txt"
    for p in (img_path, mask_path, attr_path):
        if not p.is_file():
            raise LoadError(f"record {sid}: missing file {p.name}")
    img_u8 = np.asarray(Image.open(img_path).convert("RGB"))
    mask_u8 = np.asarray(Image.open(mask_path).convert("L"))
    if not np.isin(mask_u8, (0, 255)).all():
        raise LoadError(f"record {sid}: mask is not binary")
    attrs = np.array(attr_path.read_text().split(), dtype=np.int8)
    if attrs.size != num_attrs:
        raise LoadError(f"record {sid}: expected {num_attrs} attributes, got {attrs.size}")
    if not np.isin(attrs, (0, 1)).all():
        raise LoadError(f"record {sid}: attributes are not binary")
    return Sample(sid, image_to_unit(img_u8), (mask_u8 // 255).astype(np.uint8), attrs, cid)


def load_dataset(root: str | os.PathLike, split: str) -> tuple[list[Sample], DatasetManifest]:
    """Load every record of a split; verifies train/test class disjointness."""
    root = Path(root)
    manifest = read_manifest(_manifest_path(root, split))
    other = "test" if split == "train" else "train"
    other_path = _manifest_path(root, other)
    if other_path.is_file():
        other_manifest = read_manifest(other_path)
        overlap = set(manifest.class_ids) & set(other_manifest.class_ids)
        if overlap:
            raise SplitOverlapError(f"train/test class sets overlap: {sorted(overlap)}")
    num_attrs = len(manifest.attribute_names)
    samples = [_load_record(root / split, sid, cid, num_attrs) for sid, cid in manifest.records]
    return samples, manifest


def flip_labels(
    labels: np.ndarray, flip_rate: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Flip bits of a binary matrix i.i.d. with probability flip_rate.

    Returns (flipped labels, boolean flip mask)."""
    if not 0.0 <= flip_rate <= 1.0:
        raise ValueError(f"flip_rate must be in [0, 1], got {flip_rate}")
    flips = rng.random(labels.shape) < flip_rate
    return np.where(flips, 1 - labels, labels).astype(labels.dtype), flips


def corrupt_attributes(
    root: str | os.PathLike,
    out_root: str | os.PathLike,
    flip_rate: float,
    seed: int,
    splits: tuple[str, ...] = ("train",),
) -> dict[str, np.ndarray]:
    """Copy the dataset to out_root with attribute bits flipped i.i.d. in the
    given splits; the original is untouched.

    Writes a flip log `fliplog_{split}.txt` (lines `<sample_id> <attr_idx>`)
    per corrupted split. Returns the boolean flip masks keyed by split.
    """
    root, out_root = Path(root), Path(out_root)
    rng = np.random.default_rng(seed)
    flip_masks: dict[str, np.ndarray] = {}
    for split_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        split = split_dir.name
        manifest = read_manifest(_manifest_path(root, split))
        out_dir = out_root / split
        out_dir.mkdir(parents=True, exist_ok=True)
        labels = np.stack(
            [
                np.array((split_dir / f"{sid}.attr.txt").read_text().split(), dtype=np.int8)
                for sid, _ in manifest.records
            ]
        )
        if split in splits:
            labels, flips = flip_labels(labels, flip_rate, rng)
            flip_masks[split] = flips
            log_lines = [
                f"{manifest.records[i][0]} {j}" for i, j in zip(*np.nonzero(flips))
            ]
            (out_root / f"fliplog_{split}.txt").write_text("\n".join(log_lines) + "\n")
        for i, (sid, _) in enumerate(manifest.records):
            for suffix in (".png", ".mask.png"):
                (out_dir / f"{sid}{suffix}").write_bytes(
                    (split_dir / f"{sid}{suffix}").read_bytes()
                )
            (out_dir / f"{sid}.attr.txt").write_text(
                " ".join(str(int(b)) for b in labels[i]) + "\n"
            )
        write_manifest(manifest, _manifest_path(out_root, split))
    return flip_masks


def read_flip_log(path: str | os.PathLike) -> list[tuple[str, int]]:
    lines = Path(path).read_text().splitlines()
    out = []
    for line in lines:
        if line.strip():
            sid, idx = line.split()
            out.append((sid, int(idx)))
    return out


def label_matrix(samples: list[Sample]) -> np.ndarray:
    return np.stack([s.attributes for s in samples]).astype(np.int8)


def validate_dataset(root: str | os.PathLike) -> dict[str, int]:
    """Check split disjointness and per-record invariants; returns split sizes."""
    root = Path(root)
    sizes = {}
    for split in ("train", "test"):
        if _manifest_path(root, split).is_file():
            samples, manifest = load_dataset(root, split)
            for s in samples:
                if not np.isfinite(s.image).all():
                    raise LoadError(f"record {s.sample_id}: non-finite image")
            sizes[split] = manifest.sample_count
    if not sizes:
        raise LoadError(f"no splits found under {root}")
    return sizes
