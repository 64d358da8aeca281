"""Per-class visual statistics paired with class-name embeddings.

The bank stores one mean visual feature and one name embedding per base
class. Means are accumulated with compensated 64-bit summation so the
result is exact to the last bit regardless of record order, and persisted
as 64-bit floats to keep save/load an identity.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pmce._binio import f64_bytes, f64_from_bytes, fnv1a_64
from pmce.feature_store import (
    ChecksumError,
    DatasetSplit,
    TruncatedFileError,
    UnknownVersionError,
)

BANK_VERSION = 1


@dataclass
class KnowledgeBank:
    """Mean visual feature and name embedding per base class."""

    class_names: list[str]
    means: np.ndarray  # (num_classes, d_v) float64
    name_embs: np.ndarray  # (num_classes, d_t) float64

    def __post_init__(self) -> None:
        self.means = np.asarray(self.means, dtype=np.float64)
        self.name_embs = np.asarray(self.name_embs, dtype=np.float64)
        n = len(self.class_names)
        if self.means.shape[0] != n or self.name_embs.shape[0] != n:
            raise ValueError(
                f"bank rows disagree: {n} names, {self.means.shape[0]} means, "
                f"{self.name_embs.shape[0]} name embeddings"
            )
        if not (np.isfinite(self.means).all() and np.isfinite(self.name_embs).all()):
            raise ValueError("bank contains non-finite values")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def d_v(self) -> int:
        return int(self.means.shape[1])

    @property
    def d_t(self) -> int:
        return int(self.name_embs.shape[1])


def build_bank(base: DatasetSplit) -> KnowledgeBank:
    """Average each class's visual features into one bank row.

    Per-component sums use math.fsum, so the mean is independent of the
    order records appear in the split.
    """
    means = np.empty((base.num_classes, base.d_v), dtype=np.float64)
    for j in range(base.num_classes):
        rows = base.visual[base.class_ids == j].astype(np.float64)
        if rows.shape[0] == 0:
            raise ValueError(f"class {j} has no records")
        for c in range(base.d_v):
            means[j, c] = math.fsum(rows[:, c]) / rows.shape[0]
    return KnowledgeBank(
        class_names=list(base.class_names),
        means=means,
        name_embs=base.name_embs.astype(np.float64),
    )


def save_bank(bank: KnowledgeBank, path: str | Path) -> None:
    """Write bank.json plus bank.means / bank.names_emb under *path*."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    means_bytes = f64_bytes(bank.means)
    names_bytes = f64_bytes(bank.name_embs)
    (path / "bank.means").write_bytes(means_bytes)
    (path / "bank.names_emb").write_bytes(names_bytes)
    header = {
        "version": BANK_VERSION,
        "d_v": bank.d_v,
        "d_t": bank.d_t,
        "num_classes": bank.num_classes,
        "class_names": list(bank.class_names),
        "means_fnv1a": fnv1a_64(means_bytes),
        "names_emb_fnv1a": fnv1a_64(names_bytes),
    }
    (path / "bank.json").write_text(
        json.dumps(header, indent=2, sort_keys=True), encoding="utf-8"
    )


def load_bank(path: str | Path) -> KnowledgeBank:
    """Load a bank directory, verifying version, sizes and checksums."""
    path = Path(path)
    header = json.loads((path / "bank.json").read_text(encoding="utf-8"))
    if header["version"] != BANK_VERSION:
        raise UnknownVersionError(f"unknown bank version {header['version']}")
    n, d_v, d_t = header["num_classes"], header["d_v"], header["d_t"]

    means_bytes = (path / "bank.means").read_bytes()
    names_bytes = (path / "bank.names_emb").read_bytes()
    for name, data, expected, size in (
        ("bank.means", means_bytes, header["means_fnv1a"], n * d_v * 8),
        ("bank.names_emb", names_bytes, header["names_emb_fnv1a"], n * d_t * 8),
    ):
        actual = fnv1a_64(data)
        if actual != expected:
            raise ChecksumError(
                f"{name}: checksum {actual} does not match manifest {expected}"
            )
        if len(data) != size:
            raise TruncatedFileError(f"{name}: {len(data)} bytes, expected {size}")

    return KnowledgeBank(
        class_names=list(header["class_names"]),
        means=f64_from_bytes(means_bytes, (n, d_v)).copy(),
        name_embs=f64_from_bytes(names_bytes, (n, d_t)).copy(),
    )
