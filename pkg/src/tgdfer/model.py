"""End-to-end bag classifier: temporal network, prompt fusion and MIL head.

Construction is deterministic given (config, class texts): one generator
seeded with the config seed initializes every learnable tensor in a fixed
order, and the frozen encoder derives from its own seed. Checkpoints store
parameter arrays by group-qualified name plus enough metadata to rebuild and
verify compatibility.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass

import numpy as np

from .bagfile import DatasetManifest
from .encoders import DEFAULT_ENCODER_SEED, FrozenEncoder
from .milhead import BagPrediction, bag_loss, predict_bag
from .prompts import (
    LabelEmbeddings,
    LabelMlp,
    PromptSet,
    alignment_scores,
    embed_labels,
    enhance_labels,
    visual_prompt,
)
from .tensor import ParameterSet, Tensor
from .temporal import SegmentationConfig, TemporalNet

GROUPS = ("temporal", "prompts", "head")


@dataclass
class ModelConfig:
    """Architecture and temperature knobs; the trainer adds schedule fields."""

    seed: int = 0
    encoder_seed: int = DEFAULT_ENCODER_SEED
    window: int = 4
    stride: int = 1
    cover_tail: bool = True
    depth_fine: int = 1
    depth_coarse: int = 1
    heads: int = 4
    ffn_mult: int = 4
    max_frames: int = 64
    activation: str = "gelu"
    context_tokens: int = 8
    use_learnable_context: bool = True
    visual_prompt_mode: str = "add"
    text_source: str = "descriptors"
    token_dim: int = 0  # 0 means equal to the feature dim
    tau_align: float = 0.01
    tau_pred: float = 0.01
    aggregation: str = "mean"
    top_k: int = 2

    def canonical_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


@dataclass
class DatasetInfo:
    dim: int
    num_classes: int
    class_names: list
    fine_descriptors: list

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest) -> "DatasetInfo":
        return cls(
            dim=manifest.dim,
            num_classes=manifest.num_classes,
            class_names=list(manifest.class_names),
            fine_descriptors=list(manifest.fine_descriptors),
        )

    def identity_hash(self) -> str:
        blob = json.dumps(
            {
                "d": self.dim,
                "C": self.num_classes,
                "class_names": self.class_names,
                "fine_descriptors": self.fine_descriptors,
            },
            sort_keys=True,
        ).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


class BagModel:
    """Holds all learnable parameters and exposes the per-bag forward passes."""

    def __init__(self, dataset: DatasetInfo, cfg: ModelConfig):
        self.dataset = dataset
        self.cfg = cfg
        dim = dataset.dim
        token_dim = cfg.token_dim if cfg.token_dim > 0 else dim
        r_temporal, r_prompts, r_head = np.random.default_rng(cfg.seed).spawn(3)
        self.groups = {name: ParameterSet() for name in GROUPS}
        self.encoder = FrozenEncoder("mock_text", seed=cfg.encoder_seed,
                                     feature_dim=dim, token_dim=token_dim)
        self.temporal = TemporalNet(
            dim,
            depth_fine=cfg.depth_fine,
            depth_coarse=cfg.depth_coarse,
            seg_cfg=SegmentationConfig(cfg.window, cfg.stride, cfg.cover_tail),
            max_frames=cfg.max_frames,
            heads=cfg.heads,
            ffn_mult=cfg.ffn_mult,
            activation=cfg.activation,
            rng=r_temporal,
            params=self.groups["temporal"],
        )
        self.prompts = PromptSet(
            dataset.class_names,
            dataset.fine_descriptors,
            token_dim=token_dim,
            context_tokens=cfg.context_tokens,
            use_learnable_context=cfg.use_learnable_context,
            visual_prompt_mode=cfg.visual_prompt_mode,
            text_source=cfg.text_source,
            rng=r_prompts,
            params=self.groups["prompts"],
        )
        self.label_mlp = LabelMlp(dim, activation=cfg.activation, rng=r_head,
                                  params=self.groups["head"])
        self._frozen_checksum = self.encoder.checksum()

    # -- forward pieces -----------------------------------------------------

    def label_embeddings(self) -> LabelEmbeddings:
        return embed_labels(self.prompts, self.encoder)

    def instance_features(self, features: Tensor) -> Tensor:
        return self.temporal(features)

    def enhanced_labels(self, x_instance: Tensor, labels: LabelEmbeddings) -> Tensor:
        mode = self.cfg.visual_prompt_mode
        v_p = None
        if mode != "none":
            scores = alignment_scores(x_instance, labels.x_fp, self.cfg.tau_align)
            v_p = visual_prompt(scores, x_instance)
        return enhance_labels(labels, v_p, self.label_mlp, mode,
                              prompts=self.prompts, encoder=self.encoder)

    def bag_prediction(self, x_instance: Tensor, labels: LabelEmbeddings) -> BagPrediction:
        x_tilde = self.enhanced_labels(x_instance, labels)
        top_k = self.cfg.top_k if self.cfg.aggregation == "topk" else None
        return predict_bag(x_instance, x_tilde, self.cfg.tau_pred,
                           aggregation=self.cfg.aggregation, top_k=top_k)

    def forward(self, features: Tensor, labels: LabelEmbeddings | None = None) -> BagPrediction:
        if labels is None:
            labels = self.label_embeddings()
        return self.bag_prediction(self.instance_features(features), labels)

    def loss(self, features: Tensor, label: int,
             labels: LabelEmbeddings | None = None) -> Tensor:
        return bag_loss(self.forward(features, labels), label)

    # -- parameter plumbing ---------------------------------------------------

    def named_parameters(self):
        for group, pset in self.groups.items():
            for name, tensor in pset.items():
                yield f"{group}/{name}", tensor

    def num_scalars(self) -> int:
        return sum(p.num_scalars() for p in self.groups.values())

    def frozen_checksum(self) -> str:
        return self.encoder.checksum()

    def assert_frozen_unchanged(self) -> None:
        now = self.encoder.checksum()
        if now != self._frozen_checksum:
            raise RuntimeError(
                f"frozen encoder weights changed: {self._frozen_checksum[:12]} -> {now[:12]}"
            )

    def state_arrays(self) -> dict:
        return {name: tensor.values.copy() for name, tensor in self.named_parameters()}

    def load_state_arrays(self, arrays: dict) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(arrays)
        extra = set(arrays) - set(own)
        if missing or extra:
            raise ValueError(f"parameter names mismatch: missing {sorted(missing)[:3]}, "
                             f"unexpected {sorted(extra)[:3]}")
        for name, tensor in own.items():
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != tensor.shape:
                raise ValueError(f"parameter {name}: shape {src.shape} != {tensor.shape}")
            tensor.values = src.copy()
            tensor.grad = None


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: BagModel, extra: dict | None = None) -> None:
    meta = {
        "config": asdict(model.cfg),
        "config_hash": model.cfg.hash(),
        "dataset_hash": model.dataset.identity_hash(),
        "dim": model.dataset.dim,
        "num_classes": model.dataset.num_classes,
        "frozen_checksum": model.frozen_checksum(),
    }
    if extra:
        meta.update(extra)
    arrays = {f"param:{name}": values for name, values in model.state_arrays().items()}
    np.savez(path, meta=np.bytes_(json.dumps(meta, sort_keys=True).encode("utf-8")), **arrays)


def load_checkpoint(path, dataset: DatasetInfo) -> tuple:
    """Rebuild the model for ``dataset`` from a saved checkpoint; returns (model, meta)."""
    with np.load(path) as blob:
        meta = json.loads(bytes(blob["meta"]).decode("utf-8"))
        arrays = {key[len("param:"):]: blob[key] for key in blob.files if key.startswith("param:")}
    cfg = ModelConfig(**meta["config"])
    want, got = meta["dataset_hash"], dataset.identity_hash()
    if want != got:
        raise CheckpointError(
            f"checkpoint dataset hash {want[:12]} incompatible with manifest hash {got[:12]}"
        )
    model = BagModel(dataset, cfg)
    model.load_state_arrays(arrays)
    if meta["frozen_checksum"] != model.frozen_checksum():
        raise CheckpointError("frozen encoder checksum mismatch on reload")
    return model, meta
