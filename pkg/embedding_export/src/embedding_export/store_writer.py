"""Writer for the embedding interchange format.

A store is a directory holding ``manifest.json`` plus, per split, a
``<split>.records`` file (one record = little-endian u32 class id followed
by d_v then d_t IEEE-754 32-bit floats) and a ``<split>.names`` file
(num_classes rows of d_t 32-bit floats, one class-name embedding per row,
in class order). The manifest carries a 64-bit FNV-1a checksum per binary
file. This module implements the format from the published byte layout on
purpose, so exported stores prove the contract rather than assume it.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

STORE_VERSION = 1
SPLIT_NAMES = ("base", "validation", "novel")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class StoreWriteError(Exception):
    """The split data violates the interchange contract."""


def fnv1a_hex(data: bytes) -> str:
    """64-bit FNV-1a hash of *data*, as a 16-char lowercase hex string."""
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return f"{h:016x}"


def f32_bytes(arr: np.ndarray) -> bytes:
    """Little-endian IEEE-754 32-bit floats in C order."""
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


@dataclass
class SplitData:
    """One split ready for serialization; arrays are cast to float32."""

    split_name: str
    class_names: list[str]
    name_embs: np.ndarray  # (num_classes, d_t)
    class_ids: np.ndarray  # (num_records,)
    visual: np.ndarray  # (num_records, d_v)
    caption_emb: np.ndarray  # (num_records, d_t)

    def __post_init__(self) -> None:
        if self.split_name not in SPLIT_NAMES:
            raise StoreWriteError(
                f"split name must be one of {SPLIT_NAMES}, got {self.split_name!r}"
            )
        self.name_embs = np.asarray(self.name_embs, dtype=np.float32)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        self.visual = np.asarray(self.visual, dtype=np.float32)
        self.caption_emb = np.asarray(self.caption_emb, dtype=np.float32)
        n_cls = len(self.class_names)
        if self.name_embs.shape[0] != n_cls:
            raise StoreWriteError(
                f"{self.name_embs.shape[0]} name embeddings for {n_cls} classes"
            )
        if self.class_ids.size == 0:
            raise StoreWriteError("a split needs at least one record")
        if self.class_ids.min() < 0 or self.class_ids.max() >= n_cls:
            raise StoreWriteError("class ids out of range of the class table")
        if len(set(self.class_ids.tolist())) != n_cls:
            raise StoreWriteError("every class must have at least one record")
        if self.visual.shape[0] != self.class_ids.shape[0] or self.caption_emb.shape[
            0
        ] != self.class_ids.shape[0]:
            raise StoreWriteError("record arrays disagree on the number of rows")
        if self.caption_emb.shape[1] != self.name_embs.shape[1]:
            raise StoreWriteError("caption and name embeddings disagree on d_t")
        for label, arr in (
            ("visual", self.visual),
            ("caption", self.caption_emb),
            ("name", self.name_embs),
        ):
            if not np.isfinite(arr).all():
                raise StoreWriteError(f"non-finite {label} embedding")

    @property
    def d_v(self) -> int:
        return int(self.visual.shape[1])

    @property
    def d_t(self) -> int:
        return int(self.caption_emb.shape[1])


def _records_bytes(split: SplitData) -> bytes:
    chunks = []
    for i in range(split.class_ids.shape[0]):
        chunks.append(struct.pack("<I", int(split.class_ids[i])))
        chunks.append(f32_bytes(split.visual[i]))
        chunks.append(f32_bytes(split.caption_emb[i]))
    return b"".join(chunks)


def write_store(splits: list[SplitData], path: str | Path) -> dict:
    """Write *splits* under directory *path*; return the manifest dict."""
    if not splits:
        raise StoreWriteError("write_store needs at least one split")
    d_v, d_t = splits[0].d_v, splits[0].d_t
    for s in splits[1:]:
        if s.d_v != d_v or s.d_t != d_t:
            raise StoreWriteError(
                f"split {s.split_name!r} has dims ({s.d_v}, {s.d_t}), "
                f"expected ({d_v}, {d_t})"
            )
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)

    manifest: dict = {"version": STORE_VERSION, "d_v": d_v, "d_t": d_t, "splits": {}}
    for split in splits:
        rec_bytes = _records_bytes(split)
        names_bytes = f32_bytes(split.name_embs)
        (path / f"{split.split_name}.records").write_bytes(rec_bytes)
        (path / f"{split.split_name}.names").write_bytes(names_bytes)
        manifest["splits"][split.split_name] = {
            "num_classes": len(split.class_names),
            "num_records": int(split.class_ids.shape[0]),
            "class_names": list(split.class_names),
            "records_fnv1a": fnv1a_hex(rec_bytes),
            "names_fnv1a": fnv1a_hex(names_bytes),
        }
    (path / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    return manifest
