"""Frozen encoders behind small registries: deterministic toys plus real backends.

The toy encoders derive every output from content hashes, so repeated
exports are bit-identical without model downloads. The real entries wrap
pretrained vision-language models behind guarded imports: when the heavy
dependencies are missing, construction raises EncoderLoadError and the
export aborts cleanly. No encoder is ever fine-tuned here.
"""

from __future__ import annotations

import numpy as np

PROMPT_TEMPLATE = "a photo of a {name}"
CAPTION_MAX_TOKENS = 30  # greedy decoding with a fixed cap, part of the contract

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


class EncoderLoadError(RuntimeError):
    """An encoder backend cannot be loaded; the export must abort."""


class CaptionError(RuntimeError):
    """The captioner could not describe one image."""


def _fnv1a(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


class ToyVisualEncoder:
    """Hash-seeded pseudo-features: equal bytes always give equal features."""

    d_v = 16

    def __init__(self, device: str = "cpu") -> None:
        del device  # pure numpy, nothing to place

    def encode_batch(self, images: list[bytes]) -> np.ndarray:
        out = np.empty((len(images), self.d_v), dtype=np.float64)
        for i, blob in enumerate(images):
            rng = np.random.default_rng(_fnv1a(blob))
            out[i] = rng.normal(size=self.d_v)
        return out


class ToyTextEncoder:
    """Bag-of-hashed-words embedding, L2-normalized."""

    d_t = 12

    def __init__(self, device: str = "cpu") -> None:
        del device

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.d_t), dtype=np.float64)
        for i, text in enumerate(texts):
            for word in text.lower().split():
                h = _fnv1a(word.encode("utf-8"))
                out[i, h % self.d_t] += 1.0 if (h >> 8) % 2 else -1.0
            norm = np.linalg.norm(out[i])
            if norm > 0:
                out[i] /= norm
            else:
                out[i, 0] = 1.0  # empty or fully cancelled text: fixed unit vector
        return out


_ADJECTIVES = ("small", "large", "bright", "dark", "striped", "plain")
_SETTINGS = ("grass", "sand", "snow", "pavement", "water", "foliage")
_POSES = ("resting", "moving", "facing left", "facing right")


class ToyCaptioner:
    """Deterministic captions chosen by content hash, capped at CAPTION_MAX_TOKENS."""

    def __init__(self, device: str = "cpu") -> None:
        del device

    def caption(self, image: bytes) -> str:
        if not image:
            raise CaptionError("empty image content")
        h = _fnv1a(image)
        text = (
            f"a {_ADJECTIVES[h % 6]} subject {_POSES[(h >> 4) % 4]} "
            f"on {_SETTINGS[(h >> 8) % 6]}"
        )
        return " ".join(text.split()[:CAPTION_MAX_TOKENS])


def _require_torch_stack(who: str):
    try:
        import torch
        import transformers
        from PIL import Image
    except ImportError as exc:
        raise EncoderLoadError(
            f"{who} needs torch, transformers and pillow ({exc}); "
            f"install them or pick the 'toy' backend"
        ) from exc
    return torch, transformers, Image


class ClipVisualEncoder:
    """Frozen CLIP ViT-B/32 image tower; 512-dim projected features."""

    d_v = 512
    _MODEL = "openai/clip-vit-base-patch32"

    def __init__(self, device: str = "cpu") -> None:
        torch, transformers, Image = _require_torch_stack("visual encoder 'clip'")
        self._torch, self._Image = torch, Image
        try:
            self._processor = transformers.CLIPProcessor.from_pretrained(self._MODEL)
            self._model = transformers.CLIPModel.from_pretrained(self._MODEL)
        except Exception as exc:
            raise EncoderLoadError(f"cannot load {self._MODEL}: {exc}") from exc
        self._model.eval().to(device)
        self._device = device

    def encode_batch(self, images: list[bytes]) -> np.ndarray:
        import io

        pil = [self._Image.open(io.BytesIO(b)).convert("RGB") for b in images]
        inputs = self._processor(images=pil, return_tensors="pt").to(self._device)
        with self._torch.no_grad():
            feats = self._model.get_image_features(**inputs)
        return feats.cpu().numpy().astype(np.float64)


class ClipTextEncoder:
    """Frozen CLIP ViT-B/32 text tower; 512-dim projected features."""

    d_t = 512
    _MODEL = "openai/clip-vit-base-patch32"

    def __init__(self, device: str = "cpu") -> None:
        torch, transformers, _ = _require_torch_stack("text encoder 'clip'")
        self._torch = torch
        try:
            self._tokenizer = transformers.CLIPTokenizer.from_pretrained(self._MODEL)
            self._model = transformers.CLIPModel.from_pretrained(self._MODEL)
        except Exception as exc:
            raise EncoderLoadError(f"cannot load {self._MODEL}: {exc}") from exc
        self._model.eval().to(device)
        self._device = device

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        inputs = self._tokenizer(
            texts, padding=True, truncation=True, return_tensors="pt"
        ).to(self._device)
        with self._torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return feats.cpu().numpy().astype(np.float64)


class BlipCaptioner:
    """Frozen BLIP captioner with greedy decoding (deterministic)."""

    _MODEL = "Salesforce/blip-image-captioning-base"

    def __init__(self, device: str = "cpu") -> None:
        torch, transformers, Image = _require_torch_stack("captioner 'blip'")
        self._torch, self._Image = torch, Image
        try:
            self._processor = transformers.BlipProcessor.from_pretrained(self._MODEL)
            self._model = transformers.BlipForConditionalGeneration.from_pretrained(
                self._MODEL
            )
        except Exception as exc:
            raise EncoderLoadError(f"cannot load {self._MODEL}: {exc}") from exc
        self._model.eval().to(device)
        self._device = device

    def caption(self, image: bytes) -> str:
        import io

        try:
            pil = self._Image.open(io.BytesIO(image)).convert("RGB")
        except Exception as exc:
            raise CaptionError(f"cannot decode image: {exc}") from exc
        inputs = self._processor(images=pil, return_tensors="pt").to(self._device)
        with self._torch.no_grad():
            ids = self._model.generate(
                **inputs,
                num_beams=1,
                do_sample=False,
                max_new_tokens=CAPTION_MAX_TOKENS,
            )
        return self._processor.decode(ids[0], skip_special_tokens=True).strip()


# registries: name -> (declared output dim or None, factory taking device=)
VISUAL_ENCODERS = {
    "toy": (ToyVisualEncoder.d_v, ToyVisualEncoder),
    "clip": (ClipVisualEncoder.d_v, ClipVisualEncoder),
}
TEXT_ENCODERS = {
    "toy": (ToyTextEncoder.d_t, ToyTextEncoder),
    "clip": (ClipTextEncoder.d_t, ClipTextEncoder),
}
CAPTIONERS = {
    "toy": (None, ToyCaptioner),
    "blip": (None, BlipCaptioner),
}


def make(registry: dict, name: str, device: str = "cpu"):
    """Instantiate a registered encoder or raise on an unknown name."""
    if name not in registry:
        raise ValueError(f"unknown encoder {name!r}, choices are {sorted(registry)}")
    _, factory = registry[name]
    return factory(device=device)
