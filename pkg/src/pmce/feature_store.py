"""Bit-exact interchange format for precomputed embedding datasets.

A store is a directory holding ``manifest.json`` plus, per split, a
``<split>.records`` file (one record = little-endian u32 class id followed
by d_v then d_t IEEE-754 32-bit floats) and a ``<split>.names`` file
(num_classes rows of d_t 32-bit floats, one class-name embedding per row,
in class order). Each binary file carries a 64-bit FNV-1a checksum in the
manifest.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from pmce._binio import f32_bytes, f32_from_bytes, fnv1a_64

STORE_VERSION = 1
SPLIT_NAMES = ("base", "validation", "novel")


class StoreError(Exception):
    """Base class for store format violations."""


class DimensionMismatchError(StoreError):
    pass


class ChecksumError(StoreError):
    pass


class TruncatedFileError(StoreError):
    pass


class UnknownVersionError(StoreError):
    pass


class InvalidValueError(StoreError):
    """A record contains NaN or Inf; the message names the record index."""


@dataclass(frozen=True)
class FeatureRecord:
    """One sample: its class index plus visual and caption embeddings."""

    class_id: int
    visual: np.ndarray
    caption_emb: np.ndarray


@dataclass
class DatasetSplit:
    """One split of a store, held columnar (float32 in memory).

    ``class_ids`` indexes into ``class_names``; ``name_embs`` holds one
    class-name embedding per class, row-aligned with ``class_names``.
    """

    split_name: str
    class_names: list[str]
    name_embs: np.ndarray  # (num_classes, d_t) float32
    class_ids: np.ndarray  # (num_records,) int64
    visual: np.ndarray  # (num_records, d_v) float32
    caption_emb: np.ndarray  # (num_records, d_t) float32

    def __post_init__(self) -> None:
        if self.split_name not in SPLIT_NAMES:
            raise ValueError(
                f"split_name must be one of {SPLIT_NAMES}, got {self.split_name!r}"
            )
        self.name_embs = np.asarray(self.name_embs, dtype=np.float32)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.visual = np.asarray(self.visual, dtype=np.float32)
        self.caption_emb = np.asarray(self.caption_emb, dtype=np.float32)
        if self.name_embs.shape[0] != len(self.class_names):
            raise ValueError(
                f"name_embs has {self.name_embs.shape[0]} rows for "
                f"{len(self.class_names)} class names"
            )
        if self.class_ids.size and (
            self.class_ids.min() < 0 or self.class_ids.max() >= len(self.class_names)
        ):
            raise ValueError("class_ids out of range of the class table")
        present = np.unique(self.class_ids)
        if present.size != len(self.class_names):
            missing = sorted(set(range(len(self.class_names))) - set(present.tolist()))
            raise ValueError(f"classes without records: {missing}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def num_records(self) -> int:
        return int(self.class_ids.shape[0])

    @property
    def d_v(self) -> int:
        return int(self.visual.shape[1])

    @property
    def d_t(self) -> int:
        return int(self.caption_emb.shape[1])

    def record(self, i: int) -> FeatureRecord:
        return FeatureRecord(
            class_id=int(self.class_ids[i]),
            visual=self.visual[i],
            caption_emb=self.caption_emb[i],
        )

    def records(self) -> Iterator[FeatureRecord]:
        for i in range(self.num_records):
            yield self.record(i)

    @classmethod
    def from_records(
        cls,
        split_name: str,
        class_names: list[str],
        name_embs: np.ndarray,
        records: list[FeatureRecord],
    ) -> "DatasetSplit":
        if not records:
            raise ValueError("a split needs at least one record")
        return cls(
            split_name=split_name,
            class_names=class_names,
            name_embs=name_embs,
            class_ids=np.array([r.class_id for r in records], dtype=np.int64),
            visual=np.stack([np.asarray(r.visual) for r in records]),
            caption_emb=np.stack([np.asarray(r.caption_emb) for r in records]),
        )


@dataclass
class StoreManifest:
    version: int
    d_v: int
    d_t: int
    splits: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StoreManifest":
        raw = json.loads(text)
        return cls(
            version=raw["version"], d_v=raw["d_v"], d_t=raw["d_t"], splits=raw["splits"]
        )


def _check_finite(split: DatasetSplit) -> None:
    for name, arr in (("visual", split.visual), ("caption_emb", split.caption_emb)):
        bad = ~np.isfinite(arr).all(axis=1)
        if bad.any():
            idx = int(np.argmax(bad))
            raise InvalidValueError(
                f"split {split.split_name!r}: non-finite {name} at record {idx}"
            )
    if not np.isfinite(split.name_embs).all():
        raise InvalidValueError(
            f"split {split.split_name!r}: non-finite class-name embedding"
        )


def _records_bytes(split: DatasetSplit) -> bytes:
    chunks = []
    for i in range(split.num_records):
        chunks.append(struct.pack("<I", int(split.class_ids[i])))
        chunks.append(f32_bytes(split.visual[i]))
        chunks.append(f32_bytes(split.caption_emb[i]))
    return b"".join(chunks)


def write_store(splits: list[DatasetSplit], path: str | Path) -> StoreManifest:
    """Write *splits* under *path* and return the manifest that was written.

    Raises DimensionMismatchError if the splits disagree on d_v or d_t.
    """
    if not splits:
        raise ValueError("write_store needs at least one split")
    d_v, d_t = splits[0].d_v, splits[0].d_t
    for s in splits[1:]:
        if s.d_v != d_v or s.d_t != d_t:
            raise DimensionMismatchError(
                f"split {s.split_name!r} has dims ({s.d_v}, {s.d_t}), "
                f"expected ({d_v}, {d_t})"
            )
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    manifest = StoreManifest(version=STORE_VERSION, d_v=d_v, d_t=d_t)
    for split in splits:
        _check_finite(split)
        rec_bytes = _records_bytes(split)
        names_bytes = f32_bytes(split.name_embs)
        (path / f"{split.split_name}.records").write_bytes(rec_bytes)
        (path / f"{split.split_name}.names").write_bytes(names_bytes)
        manifest.splits[split.split_name] = {
            "num_classes": split.num_classes,
            "num_records": split.num_records,
            "class_names": list(split.class_names),
            "records_fnv1a": fnv1a_64(rec_bytes),
            "names_fnv1a": fnv1a_64(names_bytes),
        }
    (path / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest


def _read_checked(path: Path, expected_fnv: str) -> bytes:
    data = path.read_bytes()
    actual = fnv1a_64(data)
    if actual != expected_fnv:
        raise ChecksumError(
            f"{path.name}: checksum {actual} does not match manifest {expected_fnv}"
        )
    return data


def read_store(path: str | Path) -> tuple[StoreManifest, list[DatasetSplit]]:
    """Load a store directory, verifying version, sizes and checksums."""
    path = Path(path)
    manifest = StoreManifest.from_json(
        (path / "manifest.json").read_text(encoding="utf-8")
    )
    if manifest.version != STORE_VERSION:
        raise UnknownVersionError(f"unknown store version {manifest.version}")
    d_v, d_t = manifest.d_v, manifest.d_t
    record_size = 4 + 4 * (d_v + d_t)

    splits = []
    for split_name, meta in manifest.splits.items():
        rec_bytes = _read_checked(path / f"{split_name}.records", meta["records_fnv1a"])
        names_bytes = _read_checked(path / f"{split_name}.names", meta["names_fnv1a"])
        n = meta["num_records"]
        if len(rec_bytes) != n * record_size:
            raise TruncatedFileError(
                f"{split_name}.records: {len(rec_bytes)} bytes, "
                f"expected {n * record_size}"
            )
        if len(names_bytes) != meta["num_classes"] * d_t * 4:
            raise TruncatedFileError(
                f"{split_name}.names: {len(names_bytes)} bytes, "
                f"expected {meta['num_classes'] * d_t * 4}"
            )

        class_ids = np.empty(n, dtype=np.int64)
        visual = np.empty((n, d_v), dtype=np.float32)
        caption = np.empty((n, d_t), dtype=np.float32)
        for i in range(n):
            off = i * record_size
            (class_ids[i],) = struct.unpack_from("<I", rec_bytes, off)
            row = f32_from_bytes(
                rec_bytes[off + 4 : off + record_size], (d_v + d_t,)
            )
            visual[i] = row[:d_v]
            caption[i] = row[d_v:]
        if n and class_ids.max() >= meta["num_classes"]:
            raise StoreError(
                f"{split_name}.records: class id {class_ids.max()} out of range"
            )
        split = DatasetSplit(
            split_name=split_name,
            class_names=list(meta["class_names"]),
            name_embs=f32_from_bytes(names_bytes, (meta["num_classes"], d_t)).copy(),
            class_ids=class_ids,
            visual=visual,
            caption_emb=caption,
        )
        _check_finite(split)
        splits.append(split)
    return manifest, splits
