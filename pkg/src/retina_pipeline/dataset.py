"""Manifest ingestion, label regrouping, splitting and oversampling."""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DuplicateId, EmptyClass, EmptyManifest, MalformedRow, MissingFile

MANIFEST_HEADER = ("id_code", "diagnosis")
SPLIT_HEADER = ("id_code", "diagnosis", "task_label", "synthetic", "aug_seed", "source_id")


class TaskKind(enum.Enum):
    BINARY = 2
    THREE = 3
    FIVE = 5

    @property
    def class_count(self) -> int:
        return self.value

    @classmethod
    def parse(cls, value) -> "TaskKind":
        if isinstance(value, TaskKind):
            return value
        try:
            if isinstance(value, int) and not isinstance(value, bool):
                return cls(value)
            return cls[str(value).upper()]
        except (KeyError, ValueError):
            from .errors import InvalidTask

            raise InvalidTask(f"unknown task {value!r}; expected one of {[t.name for t in cls]}") from None


# grade -> task label
_GROUPING = {
    TaskKind.BINARY: (0, 1, 1, 1, 1),
    TaskKind.THREE: (0, 1, 1, 2, 2),
    TaskKind.FIVE: (0, 1, 2, 3, 4),
}


@dataclass(frozen=True)
class ImageRecord:
    id: str
    image_path: Path
    grade: int
    task_label: int | None = None
    synthetic: bool = False
    aug_seed: int | None = None
    source_id: str | None = None

    @property
    def source(self) -> str:
        """Id of the original image whose pixels back this record."""
        return self.source_id or self.id


@dataclass(frozen=True)
class DatasetSplits:
    train: list[ImageRecord]
    val: list[ImageRecord]
    test: list[ImageRecord]
    seed: int


def load_manifest(path, image_dir=None) -> list[ImageRecord]:
    """Read an ``id_code,diagnosis`` CSV into image records.

    Images are resolved as ``<image_dir>/<id_code>.png``; ``image_dir``
    defaults to the manifest's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    image_dir = Path(image_dir) if image_dir is not None else path.parent
    records: list[ImageRecord] = []
    seen: set[str] = set()
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header[:2]) != MANIFEST_HEADER:
            raise MalformedRow(1, f"expected header {','.join(MANIFEST_HEADER)}")
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) < 2:
                raise MalformedRow(line, "expected two columns")
            image_id, raw = row[0].strip(), row[1].strip()
            try:
                grade = int(raw)
            except ValueError:
                raise MalformedRow(line, f"grade {raw!r} is not an integer") from None
            if not 0 <= grade <= 4:
                raise MalformedRow(line, f"grade {grade} outside 0-4")
            if image_id in seen:
                raise DuplicateId(image_id)
            seen.add(image_id)
            records.append(ImageRecord(image_id, image_dir / f"{image_id}.png", grade))
    return records


def regroup_label(grade: int, task: TaskKind) -> int:
    return _GROUPING[task][grade]


def regroup_labels(manifest: Iterable[ImageRecord], task: TaskKind) -> list[ImageRecord]:
    return [replace(r, task_label=regroup_label(r.grade, task)) for r in manifest]


def _round_half_up(x: Fraction) -> int:
    return math.floor(x + Fraction(1, 2))


def split_sizes(n: int, test_frac: float, val_frac: float) -> tuple[int, int, int]:
    """Return ``(train, val, test)`` sizes for ``n`` records."""
    # Fraction(str(.)) keeps 0.2 exact so half-way cases round deterministically
    n_test = _round_half_up(Fraction(str(test_frac)) * n)
    n_val = _round_half_up(Fraction(str(val_frac)) * (n - n_test))
    return n - n_test - n_val, n_val, n_test


def split(
    manifest: Sequence[ImageRecord],
    test_frac: float = 0.2,
    val_frac: float = 0.2,
    seed: int = 0,
    stratified: bool = False,
) -> DatasetSplits:
    """Uniform random train/val/test partition.

    With ``stratified=True`` the same sizes are drawn per task label, which
    needs labels assigned first.
    """
    if not manifest:
        raise EmptyManifest("cannot split an empty manifest")
    for frac in (test_frac, val_frac):
        if not 0 < frac < 1:
            raise ValueError(f"split fractions must lie in (0, 1), got {frac}")
    rng = np.random.default_rng(seed)
    records = list(manifest)
    if not stratified:
        groups = [np.arange(len(records))]
    else:
        labels = np.array([r.task_label for r in records])
        groups = [np.flatnonzero(labels == c) for c in np.unique(labels)]
    train, val, test = [], [], []
    for idx in groups:
        order = idx[rng.permutation(len(idx))]
        n_train, n_val, _ = split_sizes(len(order), test_frac, val_frac)
        train.extend(order[:n_train])
        val.extend(order[n_train : n_train + n_val])
        test.extend(order[n_train + n_val :])
    pick = lambda ids: [records[i] for i in sorted(ids)]  # noqa: E731
    return DatasetSplits(pick(train), pick(val), pick(test), seed)


def class_distribution(records: Iterable[ImageRecord], class_count: int | None = None) -> np.ndarray:
    labels = [r.task_label for r in records]
    if any(lab is None for lab in labels):
        raise ValueError("task labels must be assigned before counting")
    if class_count is None:
        class_count = max(labels) + 1 if labels else 0
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=class_count)


def oversample(train: Sequence[ImageRecord], seed: int = 0, class_count: int | None = None) -> list[ImageRecord]:
    """Top up every class to the majority count with augmented copies.

    Synthetic copies point at a uniformly drawn original of their class and
    carry an ``aug_seed`` from which the pixels are regenerated later.
    """
    counts = class_distribution(train, class_count)
    for label, c in enumerate(counts):
        if c == 0:
            raise EmptyClass(label)
    rng = np.random.default_rng(seed)
    target = int(counts.max())
    out = list(train)
    by_class = [[r for r in train if r.task_label == c] for c in range(len(counts))]
    for label, members in enumerate(by_class):
        deficit = target - len(members)
        if deficit == 0:
            continue
        picks = rng.integers(0, len(members), size=deficit)
        seeds = rng.integers(0, 2**31 - 1, size=deficit)
        for n, (i, s) in enumerate(zip(picks, seeds)):
            src = members[i]
            out.append(
                replace(
                    src,
                    id=f"{src.id}__aug{label}_{n:05d}",
                    synthetic=True,
                    aug_seed=int(s),
                    source_id=src.id,
                )
            )
    return out


def write_split_csv(records: Iterable[ImageRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SPLIT_HEADER)
        for r in records:
            w.writerow(
                [
                    r.id,
                    r.grade,
                    "" if r.task_label is None else r.task_label,
                    int(r.synthetic),
                    "" if r.aug_seed is None else r.aug_seed,
                    r.source_id or "",
                ]
            )


def read_split_csv(path, image_dir) -> list[ImageRecord]:
    path, image_dir = Path(path), Path(image_dir)
    if not path.is_file():
        raise MissingFile(f"split file not found: {path}")
    out = []
    with path.open(newline="", encoding="utf-8") as fh:
        for line, row in enumerate(csv.DictReader(fh), start=2):
            try:
                source = row["source_id"] or row["id_code"]
                out.append(
                    ImageRecord(
                        id=row["id_code"],
                        image_path=image_dir / f"{source}.png",
                        grade=int(row["diagnosis"]),
                        task_label=int(row["task_label"]) if row["task_label"] else None,
                        synthetic=bool(int(row["synthetic"])),
                        aug_seed=int(row["aug_seed"]) if row["aug_seed"] else None,
                        source_id=row["source_id"] or None,
                    )
                )
            except (KeyError, ValueError) as exc:
                raise MalformedRow(line, str(exc)) from None
    return out
