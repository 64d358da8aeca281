"""Batch export of image datasets into the embedding interchange format.

The split file is JSON of the form::

    {"splits": {"novel": {"robin": ["birds/r1.png", ...], ...}, ...}}

with image paths relative to the image root. For every image the pipeline
emits a visual feature from the frozen backbone and a caption embedded by
the frozen text encoder; every class name is embedded once through the
fixed prompt template. A sidecar ``export_log.json`` inside the store
directory records the encoder choices, the decoding strategy, every
caption string, and all skipped or degraded items.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from embedding_export.encoders import (
    CAPTION_MAX_TOKENS,
    CAPTIONERS,
    PROMPT_TEMPLATE,
    TEXT_ENCODERS,
    VISUAL_ENCODERS,
    CaptionError,
    make,
)
from embedding_export.store_writer import SPLIT_NAMES, SplitData, write_store

EXPORT_LOG_NAME = "export_log.json"


class ExportError(Exception):
    """The export job cannot produce a valid store."""


@dataclass
class ExportJob:
    """One export run: where the images live and which encoders to use."""

    image_root: str | Path
    split_file: str | Path
    out: str | Path
    visual_encoder: str = "toy"
    text_encoder: str = "toy"
    captioner: str = "toy"
    batch_size: int = 32
    device: str = "cpu"

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def _load_split_file(path: Path) -> dict[str, dict[str, list[str]]]:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ExportError(f"cannot read split file {path}: {exc}") from exc
    if not isinstance(raw, dict) or "splits" not in raw:
        raise ExportError(f"split file {path} must be a JSON object with a 'splits' key")
    splits = raw["splits"]
    if not isinstance(splits, dict) or not splits:
        raise ExportError("'splits' must be a non-empty object")
    for split_name, classes in splits.items():
        if split_name not in SPLIT_NAMES:
            raise ExportError(
                f"split name must be one of {SPLIT_NAMES}, got {split_name!r}"
            )
        if not isinstance(classes, dict) or not classes:
            raise ExportError(f"split {split_name!r} must map class names to path lists")
        for cls_name, paths in classes.items():
            if not isinstance(paths, list) or not all(
                isinstance(p, str) for p in paths
            ):
                raise ExportError(
                    f"class {cls_name!r} in split {split_name!r} must list image paths"
                )
    return splits


def _encode_texts(encoder, texts: list[str], batch_size: int) -> np.ndarray:
    rows = [
        encoder.encode_batch(texts[i : i + batch_size])
        for i in range(0, len(texts), batch_size)
    ]
    return np.concatenate(rows, axis=0)


def _check_dim(declared: int | None, actual: int, what: str) -> None:
    if declared is not None and actual != declared:
        raise ExportError(
            f"{what} emitted {actual}-dim features but declares {declared}"
        )


def export(job: ExportJob) -> Path:
    """Run *job* and return the store directory path.

    Unreadable images are skipped with a warning and logged; an image whose
    caption fails falls back to the class-name prompt embedding and is
    flagged. Classes left with zero readable images are dropped from the
    store (and logged), because the format requires every listed class to
    own at least one record.
    """
    image_root = Path(job.image_root)
    split_map = _load_split_file(Path(job.split_file))

    visual = make(VISUAL_ENCODERS, job.visual_encoder, job.device)
    text = make(TEXT_ENCODERS, job.text_encoder, job.device)
    captioner = make(CAPTIONERS, job.captioner, job.device)

    log: dict = {
        "encoders": {
            "visual": job.visual_encoder,
            "text": job.text_encoder,
            "captioner": job.captioner,
        },
        "decoding": {"strategy": "greedy", "max_tokens": CAPTION_MAX_TOKENS},
        "skipped": {},
        "caption_fallbacks": {},
        "dropped_classes": {},
        "captions": {},
    }

    splits: list[SplitData] = []
    for split_name, classes in split_map.items():
        skipped: list[str] = []
        fallbacks: list[str] = []
        captions: dict[str, str] = {}
        kept_names: list[str] = []
        kept_rows: list[tuple[int, bytes, str]] = []  # (class idx, bytes, caption)

        for cls_name, rel_paths in classes.items():
            cls_rows: list[tuple[bytes, str]] = []
            for rel in rel_paths:
                try:
                    blob = (image_root / rel).read_bytes()
                except OSError as exc:
                    warnings.warn(
                        f"skipping unreadable image {rel!r}: {exc}", stacklevel=2
                    )
                    skipped.append(rel)
                    continue
                try:
                    cap = captioner.caption(blob)
                except CaptionError:
                    cap = PROMPT_TEMPLATE.format(name=cls_name)
                    fallbacks.append(rel)
                captions[rel] = cap
                cls_rows.append((blob, cap))
            if not cls_rows:
                log["dropped_classes"].setdefault(split_name, []).append(cls_name)
                continue
            idx = len(kept_names)
            kept_names.append(cls_name)
            kept_rows.extend((idx, blob, cap) for blob, cap in cls_rows)

        if skipped:
            log["skipped"][split_name] = skipped
        if fallbacks:
            log["caption_fallbacks"][split_name] = fallbacks
        log["captions"][split_name] = captions
        if not kept_rows:
            raise ExportError(f"split {split_name!r} has no readable images")

        blobs = [blob for _, blob, _ in kept_rows]
        vis_rows = [
            visual.encode_batch(blobs[i : i + job.batch_size])
            for i in range(0, len(blobs), job.batch_size)
        ]
        vis = np.concatenate(vis_rows, axis=0)
        cap_emb = _encode_texts(text, [cap for _, _, cap in kept_rows], job.batch_size)
        prompts = [PROMPT_TEMPLATE.format(name=n) for n in kept_names]
        name_embs = _encode_texts(text, prompts, job.batch_size)

        _check_dim(VISUAL_ENCODERS[job.visual_encoder][0], vis.shape[1], "visual encoder")
        _check_dim(TEXT_ENCODERS[job.text_encoder][0], cap_emb.shape[1], "text encoder")

        splits.append(
            SplitData(
                split_name=split_name,
                class_names=kept_names,
                name_embs=name_embs,
                class_ids=np.array([cid for cid, _, _ in kept_rows], dtype=np.int64),
                visual=vis,
                caption_emb=cap_emb,
            )
        )

    out = Path(job.out)
    write_store(splits, out)
    (out / EXPORT_LOG_NAME).write_text(
        json.dumps(log, indent=2, sort_keys=True), encoding="utf-8"
    )
    return out
