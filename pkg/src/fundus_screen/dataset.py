"""Label tables, split manifests and synthetic fixtures.

Splits are taken as provided: a manifest is the label table joined with the
image directory, sorted by id, never reshuffled.
"""
from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

SPLIT_NAMES = ("train", "validation", "test")
DEFAULT_ID_COLUMN = "ID"
DEFAULT_LABEL_COLUMN = "Disease_Risk"
DEFAULT_FILENAME_TEMPLATE = "{id}.png"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    id: int
    path: Path
    label: int


@dataclass(frozen=True)
class LabelTable:
    labels: dict[int, int]
    source: Path | None = None

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class DatasetSplit:
    name: str
    records: tuple[SampleRecord, ...]
    class_counts: tuple[int, int] = field(init=False)

    def __post_init__(self) -> None:
        if self.name not in SPLIT_NAMES:
            raise DatasetError(f"unknown split name {self.name!r}")
        records = tuple(sorted(self.records, key=lambda r: r.id))
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise DatasetError(f"duplicate ids in split {self.name!r}")
        object.__setattr__(self, "records", records)
        counts = [0, 0]
        for r in records:
            counts[r.label] += 1
        object.__setattr__(self, "class_counts", tuple(counts))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)


@dataclass(frozen=True)
class SplitSummary:
    counts: tuple[int, int]
    imbalance_ratio: float
    ratio_defined: bool

    @property
    def total(self) -> int:
        return sum(self.counts)


def _parse_label(raw: str, row_number: int) -> int:
    value = raw.strip()
    if value in ("0", "1"):
        return int(value)
    try:
        as_float = float(value)
    except ValueError:
        as_float = None
    if as_float in (0.0, 1.0):
        return int(as_float)
    raise DatasetError(f"row {row_number}: label {raw!r} is not 0 or 1")


def load_label_table(
    csv_path: str | os.PathLike,
    id_column: str = DEFAULT_ID_COLUMN,
    label_column: str = DEFAULT_LABEL_COLUMN,
) -> LabelTable:
    """Read an ``ID,Disease_Risk`` style CSV. Extra columns are ignored.

    Row numbers in errors count the header as row 1.
    """
    path = Path(csv_path)
    if not path.is_file():
        raise DatasetError(f"label file not found: {path}")
    labels: dict[int, int] = {}
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in (id_column, label_column) if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing required column(s) {', '.join(missing)}")
        for row_number, row in enumerate(reader, start=2):
            raw_id = (row.get(id_column) or "").strip()
            try:
                sample_id = int(raw_id)
            except ValueError:
                raise DatasetError(f"row {row_number}: id {raw_id!r} is not an integer") from None
            if sample_id in labels:
                raise DatasetError(f"row {row_number}: duplicate id {sample_id}")
            labels[sample_id] = _parse_label(row.get(label_column) or "", row_number)
    return LabelTable(labels, path)


def write_label_table(table: LabelTable, csv_path: str | os.PathLike) -> None:
    path = Path(csv_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([DEFAULT_ID_COLUMN, DEFAULT_LABEL_COLUMN])
        for sample_id in sorted(table.labels):
            w.writerow([sample_id, table.labels[sample_id]])


def _check_readable(path: Path) -> None:
    try:
        with PILImage.open(path) as im:
            im.verify()
    except Exception as exc:
        raise DatasetError(f"unreadable image {path}: {exc}") from exc


def build_manifest(
    table: LabelTable,
    image_dir: str | os.PathLike,
    split_name: str,
    filename_template: str = DEFAULT_FILENAME_TEMPLATE,
    verify_images: bool = True,
) -> DatasetSplit:
    image_dir = Path(image_dir)
    if not table.labels:
        raise DatasetError(f"split {split_name!r}: label table is empty")
    records = []
    missing = []
    for sample_id in sorted(table.labels):
        path = image_dir / filename_template.format(id=sample_id, ID=sample_id)
        if not path.is_file():
            missing.append(sample_id)
            continue
        if verify_images:
            _check_readable(path)
        records.append(SampleRecord(sample_id, path, table.labels[sample_id]))
    if missing:
        shown = ", ".join(str(i) for i in missing)
        raise DatasetError(f"split {split_name!r}: no image file for id(s) {shown}")
    return DatasetSplit(split_name, tuple(records))


def summarize_split(split: DatasetSplit) -> SplitSummary:
    if len(split) == 0:
        raise DatasetError(f"split {split.name!r} is empty")
    counts = (0, 0)
    for r in split.records:
        counts = (counts[0] + (r.label == 0), counts[1] + (r.label == 1))
    if min(counts) == 0:
        return SplitSummary(counts, math.inf, False)
    return SplitSummary(counts, max(counts) / min(counts), True)


def write_manifest(split: DatasetSplit, path: str | os.PathLike, root: str | os.PathLike) -> None:
    """``id,relative_path,label`` lines in id order, paths relative to ``root``."""
    path = Path(path)
    root = Path(root)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in split.records:
            w.writerow([r.id, os.path.relpath(r.path, root), r.label])


def read_manifest(path: str | os.PathLike, root: str | os.PathLike, split_name: str) -> DatasetSplit:
    root = Path(root)
    records = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if len(row) != 3:
                raise DatasetError(f"{path}:{line_no}: expected id,relative_path,label")
            records.append(SampleRecord(int(row[0]), root / row[1], _parse_label(row[2], line_no)))
    return DatasetSplit(split_name, tuple(records))


def split_checksum(split: DatasetSplit) -> str:
    """sha256 over ids, labels and image bytes, in manifest order."""
    h = hashlib.sha256()
    for r in split.records:
        h.update(f"{r.id},{r.label},".encode())
        h.update(hashlib.sha256(r.path.read_bytes()).digest())
    return h.hexdigest()


# --------------------------------------------------------------------------
# synthetic fixtures

FIXTURE_INTENSITY_OFFSET = 60


def _fixture_image(rng: np.random.Generator, size: int, label: int) -> np.ndarray:
    # dim reddish disc on a dark background; diseased images are brighter
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2
    r = np.hypot(yy - c, xx - c) / (size / 2)
    disc = np.clip(1.0 - r, 0.0, 1.0)[..., None]
    base = np.array([150.0, 70.0, 40.0]) + (FIXTURE_INTENSITY_OFFSET if label else 0)
    noise = rng.normal(0.0, 12.0, size=(size, size, 3))
    img = 20.0 + disc * base + noise
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def generate_synthetic_fixture(
    out_dir: str | os.PathLike,
    n_per_class: int,
    image_size: int,
    seed: int,
    split_name: str = "train",
    first_id: int = 1,
) -> DatasetSplit:
    """Write ``2 * n_per_class`` PNGs plus ``labels.csv`` under ``out_dir``.

    Class 1 images carry a fixed brightness offset so the two classes are
    separable by mean intensity. Output is a pure function of the arguments.
    """
    if n_per_class < 1:
        raise DatasetError(f"n_per_class must be >= 1, got {n_per_class}")
    if image_size < 1:
        raise DatasetError(f"image_size must be >= 1, got {image_size}")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    try:
        image_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot create fixture directory {image_dir}: {exc}") from exc

    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat([0, 1], n_per_class))
    records = []
    for offset, label in enumerate(labels.tolist()):
        sample_id = first_id + offset
        path = image_dir / DEFAULT_FILENAME_TEMPLATE.format(id=sample_id)
        try:
            PILImage.fromarray(_fixture_image(rng, image_size, label)).save(path, format="PNG")
        except OSError as exc:
            raise DatasetError(f"cannot write fixture image {path}: {exc}") from exc
        records.append(SampleRecord(sample_id, path, label))
    split = DatasetSplit(split_name, tuple(records))
    write_label_table(LabelTable({r.id: r.label for r in records}), out_dir / "labels.csv")
    return split


def generate_fixture_dataset(
    root: str | os.PathLike,
    n_per_class: int,
    image_size: int,
    seed: int,
    eval_n_per_class: int | None = None,
) -> dict[str, DatasetSplit]:
    """Three fixture splits in the default ``<split>/labels.csv`` +
    ``<split>/images/`` layout, with disjoint ids."""
    root = Path(root)
    eval_n = n_per_class if eval_n_per_class is None else eval_n_per_class
    splits = {}
    next_id = 1
    for i, name in enumerate(SPLIT_NAMES):
        n = n_per_class if name == "train" else eval_n
        splits[name] = generate_synthetic_fixture(
            root / name, n, image_size, seed * 1000 + i, split_name=name, first_id=next_id
        )
        next_id += 2 * n
    return splits
