"""Deterministic frozen stand-ins for the pretrained text/image encoders.

The real pipeline assumes an external vision-language backbone that stays
frozen during training. Here that boundary is a hashing tokenizer plus a
seeded embedding-table/projection pair: differentiable with respect to any
continuous inputs (learnable context vectors, prepended visual tokens) while
the table and projection themselves never receive gradients.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat_rows,
    l2_normalize,
    matmul,
    mean_rows,
    reshape,
)

VOCAB_SIZE = 4096
MAX_TOKENS = 77
DEFAULT_ENCODER_SEED = 7

_SPLIT_TABLE = str.maketrans({c: " " for c in ",.;:!?()[]{}'\"/\\|-_"})


@dataclass(frozen=True)
class TokenSequence:
    """Hashed token ids for one text, at most ``MAX_TOKENS`` long."""

    ids: tuple

    def __len__(self) -> int:
        return len(self.ids)


def _hash_token(token: str) -> int:
    # FNV-1a over utf-8 bytes; stable across processes, unlike hash().
    h = 0x811C9DC5
    for byte in token.encode("utf-8"):
        h = ((h ^ byte) * 0x01000193) & 0xFFFFFFFF
    return h % VOCAB_SIZE


def tokenize(text: str, max_tokens: int = MAX_TOKENS) -> TokenSequence:
    """Lowercase, split on whitespace/punctuation, hash into the fixed vocabulary."""
    words = text.lower().translate(_SPLIT_TABLE).split()
    if not words:
        raise ValueError(f"cannot tokenize empty text {text!r}")
    return TokenSequence(tuple(_hash_token(w) for w in words[:max_tokens]))


@dataclass
class FrozenEncoder:
    """Seeded embedding table + projection; weights are constants forever.

    ``mock_text`` maps token ids (plus optional continuous context rows) to a
    unit-norm feature vector; ``mock_image`` maps a pixel seed to unit-norm
    per-frame feature rows.
    """

    kind: str
    seed: int
    feature_dim: int
    token_dim: int = 0  # 0 means same as feature_dim
    vocab_size: int = VOCAB_SIZE
    table: Tensor = field(init=False, repr=False)
    projection: Tensor = field(init=False, repr=False)
    bias: Tensor = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ("mock_text", "mock_image"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.token_dim <= 0:
            self.token_dim = self.feature_dim
        rng = np.random.default_rng(self.seed)
        self.table = Tensor(rng.standard_normal((self.vocab_size, self.token_dim)))
        self.projection = Tensor(
            rng.standard_normal((self.token_dim, self.feature_dim)) / np.sqrt(self.token_dim)
        )
        # The bias keeps the map sensitive to pooled magnitude: without it,
        # occupancy changes (more pooling slots) would vanish under the final
        # normalization. Kept small so unrelated texts stay weakly correlated.
        self.bias = Tensor(0.4 * rng.standard_normal(self.feature_dim) / np.sqrt(self.token_dim))

    def checksum(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.table.values.tobytes())
        digest.update(self.projection.values.tobytes())
        digest.update(self.bias.values.tobytes())
        return digest.hexdigest()

    def encode_text(self, tokens: TokenSequence, context: Tensor | None = None,
                    prepended: Tensor | None = None) -> Tensor:
        """Embed, pool and project a token sequence to a unit-norm vector.

        ``context`` (M x token_dim) and ``prepended`` (token_dim,) are inserted
        ahead of the token embeddings and are the only inputs gradients can
        flow to; the frozen table contributes constants.
        """
        if self.kind != "mock_text":
            raise ValueError(f"encode_text needs a mock_text encoder, got {self.kind!r}")
        rows = [Tensor(self.table.values[np.asarray(tokens.ids, dtype=np.intp)])]
        if context is not None:
            if context.values.ndim != 2 or context.shape[1] != self.token_dim:
                raise ShapeError(
                    f"context shape {context.shape} does not match token width {self.token_dim}"
                )
            rows.insert(0, context)
        if prepended is not None:
            if prepended.shape != (self.token_dim,):
                raise ShapeError(
                    f"prepended token shape {prepended.shape} does not match ({self.token_dim},)"
                )
            rows.insert(0, reshape(prepended, (1, self.token_dim)))
        pooled = mean_rows(concat_rows(rows))
        return l2_normalize(add(matmul(pooled, self.projection), self.bias))

    def encode_frames_mock(self, pixel_seed: int, frames: int) -> Tensor:
        """Deterministic pseudo-random unit-norm frame features from a pixel seed."""
        if self.kind != "mock_image":
            raise ValueError(f"encode_frames_mock needs a mock_image encoder, got {self.kind!r}")
        if frames < 1:
            raise ValueError(f"frame count must be >= 1, got {frames}")
        rng = np.random.default_rng(pixel_seed)
        raw = rng.standard_normal((frames, self.token_dim))
        return l2_normalize(Tensor(raw @ self.projection.values + self.bias.values))
