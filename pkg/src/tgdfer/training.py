"""Training schedule, UAR/WAR evaluation and influence reporting.

Training is bit-deterministic for a given config: parameter init, the epoch
shuffle and the per-batch accumulation order (bag index ascending) all derive
from fixed seeds. Evaluation may fan out over bags with up to TGDFER_THREADS
workers; results are merged in bag order so the report does not depend on
scheduling.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bagfile import DatasetManifest
from .metrics import confusion_matrix, uar_war
from .milhead import bag_loss, influence
from .model import BagModel, DatasetInfo, ModelConfig, load_checkpoint, save_checkpoint
from .tensor import Tape, backward, scale, sgd_step

__all__ = [
    "TrainConfig", "TrainResult", "lr_at", "train", "evaluate", "EvalReport",
    "influence_report", "confusion_matrix", "uar_war",
]


@dataclass
class TrainConfig(ModelConfig):
    """Model knobs plus the optimization schedule."""

    epochs: int = 50
    batch_size: int = 8
    lr_temporal: float = 1e-2
    lr_prompts: float = 1e-3
    lr_head: float = 1e-2
    milestones: tuple = (30, 40)
    gamma: float = 0.1

    def __post_init__(self):
        self.milestones = tuple(int(m) for m in self.milestones)
        if any(b <= a for a, b in zip(self.milestones, self.milestones[1:])):
            raise ValueError(f"milestones must be strictly increasing, got {self.milestones}")
        if any(m >= self.epochs or m < 0 for m in self.milestones):
            raise ValueError(f"milestones {self.milestones} must lie in [0, {self.epochs})")
        for name in ("lr_temporal", "lr_prompts", "lr_head"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def model_config(self) -> ModelConfig:
        fields = {k: getattr(self, k) for k in ModelConfig.__dataclass_fields__}
        return ModelConfig(**fields)


def benchmark_config(seed: int = 42) -> TrainConfig:
    """Training configuration for the planted-salient-frame benchmark.

    Uses top-k bag aggregation with k equal to the planted salient count (mean
    pooling dilutes four salient frames below the twelve distractors) and a
    batch of 32, which the hot-temperature loss needs for stable generalization
    at this dataset size.
    """
    return TrainConfig(seed=seed, aggregation="topk", top_k=4, batch_size=32)


def lr_at(epoch: int, cfg: TrainConfig) -> dict:
    """Per-group learning rates after MultiStep decay: base * gamma^(milestones <= epoch)."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} out of range [0, {cfg.epochs})")
    decay = cfg.gamma ** sum(1 for m in cfg.milestones if m <= epoch)
    return {
        "temporal": cfg.lr_temporal * decay,
        "prompts": cfg.lr_prompts * decay,
        "head": cfg.lr_head * decay,
    }


@dataclass
class TrainResult:
    checkpoint_path: Path | None
    history: list
    final_loss: float
    model: BagModel = field(repr=False, default=None)


def _mean_loss(losses):
    total = losses[0]
    for item in losses[1:]:
        total = total + item
    return scale(total, 1.0 / len(losses))


def train(manifest: DatasetManifest, cfg: TrainConfig, out_dir=None,
          epochs: int | None = None, log=None) -> TrainResult:
    """Run the schedule over the manifest's train split; optionally save a checkpoint."""
    dataset = DatasetInfo.from_manifest(manifest)
    model = BagModel(dataset, cfg.model_config())
    bags = manifest.load_split("train")
    if not bags:
        raise ValueError("manifest has no training bags")
    frozen_before = model.frozen_checksum()

    run_epochs = cfg.epochs if epochs is None else epochs
    shuffle_rng = np.random.default_rng(cfg.seed)
    order = np.arange(len(bags))
    history = []
    final_loss = float("nan")

    for epoch in range(run_epochs):
        lrs = lr_at(epoch, cfg)
        shuffle_rng.shuffle(order)
        epoch_losses = []
        correct = 0
        for chunk_start in range(0, len(order), cfg.batch_size):
            batch = sorted(order[chunk_start:chunk_start + cfg.batch_size].tolist())
            with Tape() as tape:
                labels = model.label_embeddings()
                losses = []
                for idx in batch:
                    bag = bags[idx]
                    pred = model.forward(bag.features, labels)
                    losses.append(bag_loss(pred, bag.label))
                    correct += int(pred.predicted == bag.label)
                loss = _mean_loss(losses)
                backward(loss, tape)
            for group, pset in model.groups.items():
                if len(pset):
                    sgd_step(pset, lrs[group])
            epoch_losses.append(loss.item())
        final_loss = float(np.mean(epoch_losses))
        row = {
            "epoch": epoch,
            "loss": final_loss,
            "train_war": correct / len(bags),
            "lrs": lrs,
        }
        history.append(row)
        if log is not None:
            log(f"epoch {epoch:3d}  loss {row['loss']:.4f}  train_war {row['train_war']:.3f}  "
                f"lr {lrs['temporal']:.1e}/{lrs['prompts']:.1e}/{lrs['head']:.1e}")

    model.assert_frozen_unchanged()
    if model.frozen_checksum() != frozen_before:
        raise RuntimeError("frozen encoder changed during training")

    ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = out_dir / "checkpoint.npz"
        save_checkpoint(ckpt_path, model, extra={"train_config": asdict(cfg)})
        with open(out_dir / "history.json", "w", encoding="utf-8") as fh:
            json.dump(history, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return TrainResult(checkpoint_path=ckpt_path, history=history,
                       final_loss=final_loss, model=model)


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalReport:
    confusion: np.ndarray  # (classes, classes), rows are true labels
    war: float
    uar: float
    per_class_recall: list  # None for classes absent from the split

    def to_json_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "war": self.war,
            "uar": self.uar,
            "per_class_recall": self.per_class_recall,
        }


def _eval_threads() -> int:
    raw = os.environ.get("TGDFER_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _predict_split(model: BagModel, bags):
    labels = model.label_embeddings()

    def run(bag):
        return model.forward(bag.features, labels).predicted

    workers = _eval_threads()
    if workers == 1 or len(bags) < 2:
        return [run(bag) for bag in bags]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, bags))


def evaluate(model: BagModel, manifest: DatasetManifest, split: str = "test",
             out_dir=None) -> EvalReport:
    bags = manifest.load_split(split)
    if not bags:
        raise ValueError(f"manifest has no bags in split {split!r}")
    predictions = _predict_split(model, bags)
    truths = [bag.label for bag in bags]
    conf = confusion_matrix(truths, predictions, manifest.num_classes)
    war, uar, recalls = uar_war(conf)
    report = EvalReport(confusion=conf, war=war, uar=uar, per_class_recall=recalls)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"metrics_{split}.json", "w", encoding="utf-8") as fh:
            json.dump(report.to_json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out_dir / f"confusion_{split}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["true\\pred"] + manifest.class_names)
            for k, row in enumerate(conf):
                writer.writerow([manifest.class_names[k]] + [int(x) for x in row])
    return report


def evaluate_checkpoint(checkpoint_path, manifest: DatasetManifest, split: str = "test",
                        out_dir=None) -> EvalReport:
    model, _ = load_checkpoint(checkpoint_path, DatasetInfo.from_manifest(manifest))
    return evaluate(model, manifest, split, out_dir=out_dir)


# ---------------------------------------------------------------------------
# Influence reporting


class MissingMaskError(RuntimeError):
    pass


def influence_report(model: BagModel, manifest: DatasetManifest, split: str = "test",
                     out_dir=None, localize: bool = False):
    """Per-frame influence CSV for every bag; optional localization score vs masks.

    The influence column is the ground-truth class when bag labels exist (they
    always do for TGFB bags); the localization score is the mean over bags of
    (mean normalized influence on salient frames - mean on the rest).
    """
    bags = manifest.load_split(split)
    if not bags:
        raise ValueError(f"manifest has no bags in split {split!r}")
    masks = None
    if localize:
        if manifest.masks_path is None or not Path(manifest.masks_path).exists():
            raise MissingMaskError("localization requested but the manifest has no masks file")
        with open(manifest.masks_path, "r", encoding="utf-8") as fh:
            masks = json.load(fh)

    labels = model.label_embeddings()
    rows, gaps = [], []
    for bag in bags:
        pred = model.forward(bag.features, labels)
        profile = influence(pred.frame_sims, bag.label)
        for t in range(bag.num_frames):
            rows.append((bag.bag_id, t, float(profile.raw[t]), float(profile.normalized[t])))
        if masks is not None:
            if bag.bag_id not in masks:
                raise MissingMaskError(f"no salient mask recorded for bag {bag.bag_id!r}")
            salient = set(masks[bag.bag_id])
            inside = [profile.normalized[t] for t in range(bag.num_frames) if t in salient]
            outside = [profile.normalized[t] for t in range(bag.num_frames) if t not in salient]
            if inside and outside:
                gaps.append(float(np.mean(inside) - np.mean(outside)))

    score = float(np.mean(gaps)) if gaps else None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / f"influence_{split}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bag_id", "frame_index", "raw", "normalized"])
            writer.writerows(rows)
        if score is not None:
            with open(out_dir / f"localization_{split}.json", "w", encoding="utf-8") as fh:
                json.dump({"localization_score": score, "bags": len(gaps)}, fh, indent=2)
                fh.write("\n")
    return rows, score
