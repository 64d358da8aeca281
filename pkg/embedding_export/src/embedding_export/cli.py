"""Command-line entry point: ``embedding-export export ...``.

Exit codes: 0 success, 1 runtime failure (unloadable encoder, bad data),
2 usage error.
"""

from __future__ import annotations

import argparse
import sys

from embedding_export.encoders import (
    CAPTIONERS,
    TEXT_ENCODERS,
    VISUAL_ENCODERS,
    EncoderLoadError,
)
from embedding_export.export import ExportError, ExportJob, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="embedding-export",
        description="Export image datasets into the embedding interchange format.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="encode images and write a feature store")
    p.add_argument("--images", required=True, help="image root directory")
    p.add_argument("--split-file", required=True, help="JSON mapping splits to images")
    p.add_argument("--out", required=True, help="output store directory")
    p.add_argument(
        "--visual-encoder", default="toy", choices=sorted(VISUAL_ENCODERS)
    )
    p.add_argument("--text-encoder", default="toy", choices=sorted(TEXT_ENCODERS))
    p.add_argument("--captioner", default="toy", choices=sorted(CAPTIONERS))
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--device", default="cpu")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            image_root=args.images,
            split_file=args.split_file,
            out=args.out,
            visual_encoder=args.visual_encoder,
            text_encoder=args.text_encoder,
            captioner=args.captioner,
            batch_size=args.batch_size,
            device=args.device,
        )
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        out = export(job)
    except (EncoderLoadError, ExportError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote store to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
