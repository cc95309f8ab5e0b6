"""Labeled clip datasets: line-delimited label files next to the clips.

Format (tab-separated records):
    class\t<index>\t<name>
    item\t<relative clip path>\t<class index>
Paths are stored relative to the label file so datasets relocate cleanly.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class LabeledDataset:
    paths: list[str]          # absolute clip paths
    labels: np.ndarray        # int class indices, aligned with paths
    class_names: list[str]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.paths)


def write_labels(path: str | Path, dataset: LabeledDataset) -> None:
    path = Path(path)
    base = path.parent
    with open(path, "w", encoding="utf-8") as f:
        for i, name in enumerate(dataset.class_names):
            f.write(f"class\t{i}\t{name}\n")
        for p, y in zip(dataset.paths, dataset.labels):
            rel = Path(p).relative_to(base) if Path(p).is_absolute() else Path(p)
            f.write(f"item\t{rel.as_posix()}\t{int(y)}\n")


def read_labels(path: str | Path) -> LabeledDataset:
    path = Path(path)
    base = path.parent
    class_names: dict[int, str] = {}
    paths: list[str] = []
    labels: list[int] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            kind, a, b = line.split("\t")
            if kind == "class":
                class_names[int(a)] = b
            elif kind == "item":
                paths.append(str(base / a))
                labels.append(int(b))
            else:
                raise ValueError(f"{path}:{line_no}: unknown record '{kind}'")
    names = [class_names[i] for i in range(len(class_names))]
    y = np.asarray(labels, dtype=np.int64)
    if y.size and (y.min() < 0 or y.max() >= len(names)):
        raise ValueError(f"{path}: label index outside [0, {len(names)})")
    return LabeledDataset(paths=paths, labels=y, class_names=names)
