"""Finite-difference verification of recorded gradients.

Central differences at h=1e-5 in float64. An element passes when the relative
error against the analytic gradient is below tolerance, or when both values
are tiny in absolute terms (differences below ATOL swamp the quotient there).
"""

from __future__ import annotations

import numpy as np

from .milhead import bag_loss
from .model import BagModel, DatasetInfo, ModelConfig
from .tensor import Tape, Tensor, backward

H = 1e-5
ATOL = 1e-9
REL_FLOOR = 1e-6


def numeric_gradient(loss_fn, param: Tensor, h: float = H) -> np.ndarray:
    """Central finite differences of ``loss_fn()`` w.r.t. every element of ``param``."""
    grad = np.zeros_like(param.values)
    flat = param.values.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = loss_fn()
        flat[i] = keep - h
        down = loss_fn()
        flat[i] = keep
        out[i] = (up - down) / (2.0 * h)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-case elementwise relative error; near-zero pairs fall back to ATOL."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(denom > REL_FLOOR, diff / np.maximum(denom, REL_FLOOR), 0.0)
    absolute_ok = diff <= ATOL
    rel = np.where(absolute_ok, 0.0, rel)
    # Tiny-but-disagreeing entries: score them against the floor.
    tiny_bad = (denom <= REL_FLOOR) & ~absolute_ok
    rel = np.where(tiny_bad, diff / REL_FLOOR, rel)
    return float(rel.max()) if rel.size else 0.0


def check_parameters(loss_builder, params, h: float = H) -> dict:
    """Compare analytic grads of ``loss_builder`` against finite differences.

    ``loss_builder`` must build the full forward pass from current parameter
    values and return the scalar loss tensor. Returns {name: max relative error}.
    """
    named = list(params)
    with Tape() as tape:
        loss = loss_builder()
        backward(loss, tape)
    analytic = {}
    for name, p in named:
        if p.grad is None:
            raise AssertionError(f"parameter {name} received no gradient")
        analytic[name] = p.grad.copy()
        p.grad = None

    def value():
        return loss_builder().item()

    errors = {}
    for name, p in named:
        numeric = numeric_gradient(value, p, h=h)
        errors[name] = max_relative_error(analytic[name], numeric)
    return errors


def check_small_graph(seed: int = 0) -> dict:
    """Quick composite-op check: matmul, layer norm, gelu, softmax, cosine, CE."""
    from .tensor import (
        add,
        cosine_similarity,
        cross_entropy,
        gelu,
        layer_norm,
        matmul,
        mean_rows,
        scale,
        softmax,
        sum_all,
    )

    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    w = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
    gain = Tensor(np.ones(4), requires_grad=True)
    bias = Tensor(np.zeros(4), requires_grad=True)
    u = Tensor(rng.standard_normal(4), requires_grad=True)

    def loss_builder():
        h = gelu(layer_norm(matmul(x, w), gain, bias))
        pooled = mean_rows(softmax(h, axis=1))
        ce = cross_entropy(scale(pooled, 10.0), 1)
        cos = cosine_similarity(u, mean_rows(h))
        return add(ce, sum_all(scale(cos, 0.5)))

    return check_parameters(
        loss_builder, [("x", x), ("w", w), ("gain", gain), ("bias", bias), ("u", u)]
    )


def pipeline_fixture(visual_prompt_mode: str = "add", tau: float = 0.5,
                     seed: int = 3):
    """Small end-to-end model and input bag for whole-pipeline checks.

    Temperatures are widened from their training defaults so the softmax is
    not saturated and finite differences stay well conditioned.
    """
    cfg = ModelConfig(
        seed=seed,
        encoder_seed=11,
        window=3,
        stride=1,
        depth_fine=1,
        depth_coarse=1,
        heads=4,
        max_frames=8,
        context_tokens=4,
        use_learnable_context=True,
        visual_prompt_mode=visual_prompt_mode,
        tau_align=tau,
        tau_pred=tau,
    )
    dataset = DatasetInfo(
        dim=8,
        num_classes=3,
        class_names=["calm", "lively", "tense"],
        fine_descriptors=[
            "a steady gaze, relaxed posture",
            "raised brows, open mouth",
            "narrowed eyes, clenched jaw",
        ],
    )
    model = BagModel(dataset, cfg)
    rng = np.random.default_rng(seed + 100)
    features = rng.standard_normal((6, dataset.dim))
    features /= np.linalg.norm(features, axis=1, keepdims=True)
    return model, Tensor(features), 1


def check_full_pipeline(visual_prompt_mode: str = "add") -> dict:
    """Gradient errors for every learnable parameter through the whole model."""
    model, features, label = pipeline_fixture(visual_prompt_mode)

    def loss_builder():
        return bag_loss(model.forward(features), label)

    return check_parameters(loss_builder, model.named_parameters())
