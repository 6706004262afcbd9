"""Per-class label features: text prompts, visual prompts and their fusion.

Each class owns a fine token sequence (descriptor or class name) and a coarse
token sequence (class name). A shared learnable context can be inserted ahead
of the fine tokens. Visual prompts attend over instance features per class and
are folded back into the label features either by elementwise addition or by
re-encoding the fine prompt with the visual vector as a prepended token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoders import FrozenEncoder, TokenSequence, tokenize
from .tensor import (
    ParameterSet,
    Tensor,
    add,
    concat_rows,
    l2_normalize,
    linear,
    matmul,
    reshape,
    scale,
    slice_rows,
    softmax,
    transpose,
    truncated_normal,
    gelu,
    relu,
)

VISUAL_PROMPT_MODES = ("none", "add", "prepend")
TEXT_SOURCES = ("class", "descriptors")

_ACTIVATIONS = {"gelu": gelu, "relu": relu}


class PromptSet:
    """Tokenized class texts plus an optional shared learnable context."""

    def __init__(self, class_names, fine_descriptors, token_dim: int,
                 context_tokens: int = 8, use_learnable_context: bool = True,
                 visual_prompt_mode: str = "add", text_source: str = "descriptors",
                 rng: np.random.Generator | None = None,
                 params: ParameterSet | None = None):
        if visual_prompt_mode not in VISUAL_PROMPT_MODES:
            raise ValueError(f"visual prompt mode {visual_prompt_mode!r} not in {VISUAL_PROMPT_MODES}")
        if text_source not in TEXT_SOURCES:
            raise ValueError(f"text source {text_source!r} not in {TEXT_SOURCES}")
        if len(class_names) != len(fine_descriptors):
            raise ValueError(
                f"{len(class_names)} class names vs {len(fine_descriptors)} descriptors"
            )
        rng = rng if rng is not None else np.random.default_rng(0)
        fine_texts = fine_descriptors if text_source == "descriptors" else class_names
        self.fine_tokens = [tokenize(t) for t in fine_texts]
        self.coarse_tokens = [tokenize(t) for t in class_names]
        self.num_classes = len(class_names)
        self.use_learnable_context = use_learnable_context
        self.visual_prompt_mode = visual_prompt_mode
        self.context = Tensor(truncated_normal(rng, (context_tokens, token_dim)))
        if use_learnable_context:
            if params is None:
                params = ParameterSet()
            params.add("prompt.context", self.context)
        self.params = params

    def context_or_none(self) -> Tensor | None:
        return self.context if self.use_learnable_context else None


@dataclass
class LabelEmbeddings:
    """Frozen-encoder outputs for the fine and coarse prompts, one row per class."""

    x_fp: Tensor  # (classes, dim)
    x_cp: Tensor  # (classes, dim)


def embed_labels(prompts: PromptSet, encoder: FrozenEncoder) -> LabelEmbeddings:
    """Encode fine prompts (with context when enabled) and coarse prompts."""
    ctx = prompts.context_or_none()
    fine = [reshape(encoder.encode_text(toks, context=ctx), (1, encoder.feature_dim))
            for toks in prompts.fine_tokens]
    coarse = [reshape(encoder.encode_text(toks), (1, encoder.feature_dim))
              for toks in prompts.coarse_tokens]
    return LabelEmbeddings(x_fp=concat_rows(fine), x_cp=concat_rows(coarse))


def alignment_scores(x_instance: Tensor, x_fp: Tensor, tau: float) -> Tensor:
    """Temperature-scaled cosine between every frame and every fine label feature."""
    if tau <= 0:
        raise ValueError(f"alignment temperature must be positive, got {tau}")
    sims = matmul(l2_normalize(x_instance), transpose(l2_normalize(x_fp)))
    return scale(sims, 1.0 / tau)


def visual_prompt(scores: Tensor, x_instance: Tensor) -> Tensor:
    """Per-class attention over frames: softmax each score column, weight-sum the frames."""
    weights = softmax(scores, axis=0)  # (frames, classes), columns sum to 1
    return matmul(transpose(weights), x_instance)


class LabelMlp:
    """Two-layer fusion MLP feeding the residual label path.

    The output map starts at zero, so at init the enhanced labels equal the
    coarse text embeddings exactly.
    """

    def __init__(self, dim: int, hidden_mult: int = 4, activation: str = "gelu",
                 rng: np.random.Generator | None = None,
                 params: ParameterSet | None = None):
        rng = rng if rng is not None else np.random.default_rng(0)
        params = params if params is not None else ParameterSet()
        hidden = hidden_mult * dim
        self.act = _ACTIVATIONS[activation]
        self.w1 = params.add("label_mlp.w1", Tensor(truncated_normal(rng, (dim, hidden))))
        self.b1 = params.add("label_mlp.b1", Tensor(np.zeros(hidden)))
        self.w2 = params.add("label_mlp.w2", Tensor(np.zeros((hidden, dim))))
        self.b2 = params.add("label_mlp.b2", Tensor(np.zeros(dim)))
        self.params = params

    def forward(self, x: Tensor) -> Tensor:
        return linear(self.act(linear(x, self.w1, self.b1)), self.w2, self.b2)

    __call__ = forward


def enhance_labels(labels: LabelEmbeddings, v_p: Tensor | None, mlp: LabelMlp,
                   mode: str, prompts: PromptSet | None = None,
                   encoder: FrozenEncoder | None = None) -> Tensor:
    """Fold the visual prompt into the fine label features, then apply the MLP
    with the coarse embeddings as a residual tail."""
    if mode not in VISUAL_PROMPT_MODES:
        raise ValueError(f"visual prompt mode {mode!r} not in {VISUAL_PROMPT_MODES}")
    if mode == "none":
        x_hat = labels.x_fp
    elif mode == "add":
        x_hat = add(labels.x_fp, v_p)
    else:  # prepend: re-encode each fine prompt with its visual vector up front
        if prompts is None or encoder is None:
            raise ValueError("prepend mode needs the prompt set and encoder for re-encoding")
        ctx = prompts.context_or_none()
        rows = []
        for k, toks in enumerate(prompts.fine_tokens):
            vec = reshape(slice_rows(v_p, k, k + 1), (v_p.shape[1],))
            rows.append(reshape(encoder.encode_text(toks, context=ctx, prepended=vec),
                                (1, encoder.feature_dim)))
        x_hat = concat_rows(rows)
    return add(mlp(x_hat), labels.x_cp)
