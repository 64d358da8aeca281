"""Export real image datasets into the embedding interchange format."""

from embedding_export.encoders import (
    CAPTION_MAX_TOKENS,
    CAPTIONERS,
    PROMPT_TEMPLATE,
    TEXT_ENCODERS,
    VISUAL_ENCODERS,
    BlipCaptioner,
    CaptionError,
    ClipTextEncoder,
    ClipVisualEncoder,
    EncoderLoadError,
    ToyCaptioner,
    ToyTextEncoder,
    ToyVisualEncoder,
    make,
)
from embedding_export.export import (
    EXPORT_LOG_NAME,
    ExportError,
    ExportJob,
    export,
)
from embedding_export.store_writer import (
    SPLIT_NAMES,
    STORE_VERSION,
    SplitData,
    StoreWriteError,
    f32_bytes,
    fnv1a_hex,
    write_store,
)

__version__ = "0.1.0"

__all__ = [
    "BlipCaptioner",
    "CAPTION_MAX_TOKENS",
    "CAPTIONERS",
    "CaptionError",
    "ClipTextEncoder",
    "ClipVisualEncoder",
    "EncoderLoadError",
    "EXPORT_LOG_NAME",
    "ExportError",
    "ExportJob",
    "PROMPT_TEMPLATE",
    "SPLIT_NAMES",
    "STORE_VERSION",
    "SplitData",
    "StoreWriteError",
    "TEXT_ENCODERS",
    "ToyCaptioner",
    "ToyTextEncoder",
    "ToyVisualEncoder",
    "VISUAL_ENCODERS",
    "export",
    "f32_bytes",
    "fnv1a_hex",
    "make",
    "write_store",
]
