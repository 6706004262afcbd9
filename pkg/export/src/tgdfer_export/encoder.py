"""Frame/text encoders producing unit-norm float32 embeddings.

``ClipEncoder`` wraps a local CLIP ViT-B/32 checkpoint (weights must already
be on disk; nothing is downloaded). ``StubEncoder`` is a seeded deterministic
stand-in with the same interface for pipeline tests and dry runs.
"""

from __future__ import annotations

import hashlib

import numpy as np

EMBED_DIM = 512
MAX_TEXT_TOKENS = 77


class MissingWeightsError(RuntimeError):
    pass


class PromptTooLongError(ValueError):
    pass


def _l2_rows(mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float32)
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    return mat / np.maximum(norms, 1e-12)


class ClipEncoder:
    """Frozen CLIP ViT-B/32 via transformers, loaded from a local path only."""

    dim = EMBED_DIM

    def __init__(self, weights_path: str, device: str = "cpu", batch_size: int = 32):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise MissingWeightsError(
                "torch/transformers are not installed; install the [clip] extra"
            ) from exc
        try:
            self._model = CLIPModel.from_pretrained(weights_path, local_files_only=True)
            self._processor = CLIPProcessor.from_pretrained(weights_path, local_files_only=True)
        except Exception as exc:
            raise MissingWeightsError(
                f"CLIP weights not found at {weights_path!r}: {exc}"
            ) from exc
        self._torch = torch
        self._device = device
        self._batch_size = batch_size
        self._model.eval().to(device)
        for p in self._model.parameters():
            p.requires_grad_(False)

    def count_tokens(self, text: str) -> int:
        return len(self._processor.tokenizer(text)["input_ids"])

    def encode_images(self, frames: np.ndarray) -> np.ndarray:
        """(N, H, W, 3) uint8 RGB -> (N, 512) unit-norm float32."""
        torch = self._torch
        outputs = []
        with torch.no_grad():
            for start in range(0, len(frames), self._batch_size):
                chunk = [frames[i] for i in range(start, min(start + self._batch_size, len(frames)))]
                inputs = self._processor(images=chunk, return_tensors="pt").to(self._device)
                feats = self._model.get_image_features(**inputs)
                outputs.append(feats.cpu().numpy())
        return _l2_rows(np.concatenate(outputs, axis=0))

    def encode_texts(self, texts: list) -> np.ndarray:
        torch = self._torch
        inputs = self._processor(text=list(texts), return_tensors="pt", padding=True).to(self._device)
        with torch.no_grad():
            feats = self._model.get_text_features(**inputs)
        return _l2_rows(feats.cpu().numpy())


class StubEncoder:
    """Deterministic hash-seeded embeddings; exercises the full export path."""

    dim = EMBED_DIM

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _vector(self, blob: bytes) -> np.ndarray:
        digest = hashlib.sha256(blob + self.seed.to_bytes(4, "little")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(self.dim)

    def count_tokens(self, text: str) -> int:
        return len(text.split()) + 2  # start/end sentinels

    def encode_images(self, frames: np.ndarray) -> np.ndarray:
        rows = [self._vector(np.ascontiguousarray(f).tobytes()) for f in frames]
        return _l2_rows(np.stack(rows))

    def encode_texts(self, texts: list) -> np.ndarray:
        rows = [self._vector(t.encode("utf-8")) for t in texts]
        return _l2_rows(np.stack(rows))


def build_encoder(kind: str, weights: str | None = None, seed: int = 0):
    if kind == "clip":
        if not weights:
            raise MissingWeightsError("the clip encoder needs --weights pointing at a local checkout")
        return ClipEncoder(weights)
    if kind == "stub":
        return StubEncoder(seed=seed)
    raise ValueError(f"unknown encoder kind {kind!r}")
