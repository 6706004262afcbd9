"""Multi-grained temporal network over per-frame features.

A fine branch runs a shared transformer stack over overlapping fixed-width
windows and scatter-averages the per-window outputs back onto the frame axis;
a coarse branch runs a stack over the full sequence. A fully-connected map
over the concatenated branches yields the per-frame instance features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensor import (
    ParameterSet,
    ShapeError,
    Tensor,
    add,
    concat_cols,
    gelu,
    layer_norm,
    linear,
    matmul,
    overlap_mean,
    relu,
    scale,
    slice_cols,
    slice_rows,
    softmax,
    transpose,
    truncated_normal,
)

_ACTIVATIONS = {"gelu": gelu, "relu": relu}


@dataclass(frozen=True)
class SegmentationConfig:
    """Window width, stride and tail handling for the fine branch."""

    window: int
    stride: int
    cover_tail: bool = True

    def __post_init__(self):
        if not 1 <= self.stride <= self.window:
            raise ValueError(f"need 1 <= stride <= window, got stride={self.stride} window={self.window}")

    @property
    def overlap(self) -> int:
        return self.window - self.stride


def segment_starts(num_frames: int, cfg: SegmentationConfig) -> list:
    """Window start indices: floor((frames-window)/stride)+1 regular starts, plus
    one tail window when requested and the regular grid leaves trailing frames uncovered."""
    if cfg.window > num_frames:
        raise ShapeError(f"window {cfg.window} larger than bag of {num_frames} frames")
    count = (num_frames - cfg.window) // cfg.stride + 1
    starts = [i * cfg.stride for i in range(count)]
    if cfg.cover_tail and starts[-1] + cfg.window - 1 < num_frames - 1:
        starts.append(num_frames - cfg.window)
    return starts


def segment(features: Tensor, cfg: SegmentationConfig):
    """Slice a (frames, dim) tensor into overlapping windows; returns (starts, windows)."""
    starts = segment_starts(features.shape[0], cfg)
    windows = [slice_rows(features, s, s + cfg.window) for s in starts]
    return starts, windows


class EncoderLayer:
    """Pre-norm transformer block: x + MHA(LN(x)), then + FFN(LN(.)).

    Output projections start at zero so the block is the identity at init.
    """

    def __init__(self, dim: int, heads: int, ffn_mult: int, activation: str,
                 rng: np.random.Generator, params: ParameterSet, prefix: str):
        if dim % heads != 0:
            raise ShapeError(f"width {dim} not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.act = _ACTIVATIONS[activation]
        hidden = ffn_mult * dim

        def param(name, values):
            return params.add(f"{prefix}.{name}", Tensor(values))

        self.ln1_g = param("ln1.gain", np.ones(dim))
        self.ln1_b = param("ln1.bias", np.zeros(dim))
        self.wq = param("attn.wq", truncated_normal(rng, (dim, dim)))
        self.wk = param("attn.wk", truncated_normal(rng, (dim, dim)))
        self.wv = param("attn.wv", truncated_normal(rng, (dim, dim)))
        self.wo = param("attn.wo", np.zeros((dim, dim)))
        self.bq = param("attn.bq", np.zeros(dim))
        self.bk = param("attn.bk", np.zeros(dim))
        self.bv = param("attn.bv", np.zeros(dim))
        self.bo = param("attn.bo", np.zeros(dim))
        self.ln2_g = param("ln2.gain", np.ones(dim))
        self.ln2_b = param("ln2.bias", np.zeros(dim))
        self.w1 = param("ffn.w1", truncated_normal(rng, (dim, hidden)))
        self.b1 = param("ffn.b1", np.zeros(hidden))
        self.w2 = param("ffn.w2", np.zeros((hidden, dim)))
        self.b2 = param("ffn.b2", np.zeros(dim))

    def forward(self, x: Tensor, return_attention: bool = False):
        h = layer_norm(x, self.ln1_g, self.ln1_b)
        q = linear(h, self.wq, self.bq)
        k = linear(h, self.wk, self.bk)
        v = linear(h, self.wv, self.bv)
        inv_sqrt = 1.0 / math.sqrt(self.head_dim)
        head_outs, attn_maps = [], []
        for i in range(self.heads):
            lo, hi = i * self.head_dim, (i + 1) * self.head_dim
            qh, kh, vh = (slice_cols(t, lo, hi) for t in (q, k, v))
            att = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), axis=1)
            attn_maps.append(att)
            head_outs.append(matmul(att, vh))
        attended = linear(concat_cols(head_outs), self.wo, self.bo)
        x = add(x, attended)
        h2 = layer_norm(x, self.ln2_g, self.ln2_b)
        f = linear(self.act(linear(h2, self.w1, self.b1)), self.w2, self.b2)
        out = add(x, f)
        if return_attention:
            return out, attn_maps
        return out

    __call__ = forward


class TemporalNet:
    """Fine windowed stack + coarse full-sequence stack + concat/FC fusion."""

    def __init__(self, dim: int, depth_fine: int, depth_coarse: int,
                 seg_cfg: SegmentationConfig, max_frames: int = 64, heads: int = 4,
                 ffn_mult: int = 4, activation: str = "gelu",
                 rng: np.random.Generator | None = None,
                 params: ParameterSet | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        params = params if params is not None else ParameterSet()
        self.dim = dim
        self.seg_cfg = seg_cfg
        self.max_frames = max_frames
        self.params = params
        # Independent streams per component: changing one component's shape
        # (e.g. the window) must not shift any other component's init.
        r_fine, r_coarse, r_fuse = rng.spawn(3)
        # Positional embeddings are additive offsets into the residual stream;
        # starting them at zero keeps each branch exactly identity at init.
        self.pos_fine = params.add("pos_fine", Tensor(np.zeros((seg_cfg.window, dim))))
        self.pos_coarse = params.add("pos_coarse", Tensor(np.zeros((max_frames, dim))))
        self.fine_layers = [
            EncoderLayer(dim, heads, ffn_mult, activation, r_fine, params, f"fine.{i}")
            for i in range(depth_fine)
        ]
        self.coarse_layers = [
            EncoderLayer(dim, heads, ffn_mult, activation, r_coarse, params, f"coarse.{i}")
            for i in range(depth_coarse)
        ]
        # Fusion starts as the branch average so the whole network is exactly
        # the identity map at init (the layers and positions already are).
        fusion_init = np.concatenate([np.eye(dim), np.eye(dim)], axis=0) * 0.5
        self.fusion_w = params.add("fusion.weight", Tensor(fusion_init))
        self.fusion_b = params.add("fusion.bias", Tensor(np.zeros(dim)))

    def fine_forward(self, features: Tensor) -> Tensor:
        frames = features.shape[0]
        starts, windows = segment(features, self.seg_cfg)
        outs = []
        for win in windows:
            y = add(win, self.pos_fine)
            for layer in self.fine_layers:
                y = layer(y)
            outs.append(y)
        return overlap_mean(outs, starts, frames)

    def coarse_forward(self, features: Tensor) -> Tensor:
        frames = features.shape[0]
        if frames > self.max_frames:
            raise ShapeError(f"bag of {frames} frames exceeds maximum {self.max_frames}")
        y = add(features, slice_rows(self.pos_coarse, 0, frames))
        for layer in self.coarse_layers:
            y = layer(y)
        return y

    def fuse(self, x_fine: Tensor, x_coarse: Tensor) -> Tensor:
        if x_fine.shape != x_coarse.shape:
            raise ShapeError(f"fuse shapes {x_fine.shape} and {x_coarse.shape} do not align")
        return linear(concat_cols([x_fine, x_coarse]), self.fusion_w, self.fusion_b)

    def forward(self, features: Tensor) -> Tensor:
        """(frames, dim) raw features -> (frames, dim) instance features."""
        return self.fuse(self.fine_forward(features), self.coarse_forward(features))

    __call__ = forward
