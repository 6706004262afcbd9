"""Bag-level prediction from per-frame cosine similarities, plus frame influence.

The bag logit for a class is the aggregate (mean, or mean of the top-k values)
of per-frame cosine similarities against that class's enhanced label feature.
Probabilities apply a temperature-scaled softmax; the loss is the fused stable
cross-entropy on the same scaled logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    Tensor,
    cross_entropy,
    l2_normalize,
    matmul,
    mean_rows,
    scale,
    softmax,
    topk_mean_rows,
    transpose,
)

AGGREGATIONS = ("mean", "topk")


@dataclass
class BagPrediction:
    frame_sims: Tensor  # (frames, classes) cosine similarities
    logits: Tensor      # (classes,) aggregated similarities, before temperature
    probs: Tensor       # (classes,) softmax(logits / tau)
    predicted: int
    tau: float


@dataclass
class InfluenceProfile:
    """Per-frame relevance of one class's label feature, raw and min-max scaled."""

    raw: np.ndarray
    normalized: np.ndarray


def predict_bag(x_instance: Tensor, x_tilde: Tensor, tau: float,
                aggregation: str = "mean", top_k: int | None = None) -> BagPrediction:
    """Cosine of every frame against every enhanced label row, aggregated to bag logits."""
    if tau <= 0:
        raise ValueError(f"prediction temperature must be positive, got {tau}")
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation {aggregation!r} not in {AGGREGATIONS}")
    sims = matmul(l2_normalize(x_instance), transpose(l2_normalize(x_tilde)))
    if aggregation == "mean":
        logits = mean_rows(sims)
    else:
        k = min(top_k or 1, sims.shape[0])
        logits = topk_mean_rows(sims, k)
    probs = softmax(scale(logits, 1.0 / tau), axis=0)
    predicted = int(np.argmax(probs.values))
    return BagPrediction(frame_sims=sims, logits=logits, probs=probs,
                         predicted=predicted, tau=tau)


def bag_loss(pred: BagPrediction, label: int) -> Tensor:
    """Cross-entropy of the temperature-scaled bag logits against the bag label."""
    num_classes = pred.logits.shape[0]
    if not 0 <= label < num_classes:
        raise IndexError(f"label {label} out of range for {num_classes} classes")
    return cross_entropy(scale(pred.logits, 1.0 / pred.tau), label)


def influence(frame_sims: Tensor, label: int) -> InfluenceProfile:
    """Per-frame similarity to one class's label feature, min-max normalized.

    A constant profile maps to 0.5 everywhere; otherwise the minimum maps to 0
    and the maximum to 1.
    """
    sims = frame_sims.values
    if not 0 <= label < sims.shape[1]:
        raise IndexError(f"label {label} out of range for {sims.shape[1]} classes")
    raw = sims[:, label].copy()
    lo, hi = raw.min(), raw.max()
    if hi - lo <= 0:
        normalized = np.full_like(raw, 0.5)
    else:
        normalized = (raw - lo) / (hi - lo)
    return InfluenceProfile(raw=raw, normalized=normalized)


def select_frames(profile: InfluenceProfile, k: int, which: str) -> list:
    """Indices of the k highest- or lowest-influence frames, ties to lower index."""
    frames = profile.normalized.shape[0]
    if not 1 <= k <= frames:
        raise ValueError(f"k={k} out of range for {frames} frames")
    if which not in ("highest", "lowest"):
        raise ValueError(f"which must be 'highest' or 'lowest', got {which!r}")
    key = -profile.normalized if which == "highest" else profile.normalized
    order = np.argsort(key, kind="stable")  # stable sort breaks ties by index
    return sorted(int(i) for i in order[:k])


def predict_topk(x_instance: Tensor, x_tilde: Tensor, tau: float,
                 profile: InfluenceProfile, k: int, which: str) -> BagPrediction:
    """Bag prediction restricted to the k most (or least) influential frames."""
    keep = select_frames(profile, k, which)
    subset = Tensor(x_instance.values[keep])
    return predict_bag(subset, Tensor(x_tilde.values), tau)
