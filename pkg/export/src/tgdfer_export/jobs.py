"""Export jobs: frame features per clip and per-class text embeddings."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .encoder import MAX_TEXT_TOKENS, PromptTooLongError
from .frames import ClipDecodeError, discover_clips, load_clip_frames
from .writer import write_bag_file, write_manifest, write_text_file


@dataclass
class ExportJob:
    input_dir: Path
    output_dir: Path
    class_names: list
    fine_descriptors: list
    frames: int = 16
    resize: int = 224
    offset: int = 0
    split: str = "train"

    def __post_init__(self):
        self.input_dir = Path(self.input_dir)
        self.output_dir = Path(self.output_dir)
        if len(self.class_names) != len(self.fine_descriptors):
            raise ValueError(
                f"{len(self.class_names)} classes vs {len(self.fine_descriptors)} descriptors"
            )
        if self.frames < 1:
            raise ValueError(f"frame count must be >= 1, got {self.frames}")

    @classmethod
    def from_config(cls, config_path, input_dir, output_dir, **overrides) -> "ExportJob":
        with open(config_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            input_dir=input_dir,
            output_dir=output_dir,
            class_names=[c["name"] for c in doc["classes"]],
            fine_descriptors=[c["descriptor"] for c in doc["classes"]],
            frames=int(doc.get("frames", 16)),
            resize=int(doc.get("resize", 224)),
            **overrides,
        )


@dataclass
class ExportSummary:
    written: list = field(default_factory=list)
    skipped: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.skipped


def export_bags(job: ExportJob, encoder, log=print) -> ExportSummary:
    """One TGFB per clip plus a manifest; undecodable clips are skipped with a warning."""
    label_by_class = {name: k for k, name in enumerate(job.class_names)}
    clips = discover_clips(job.input_dir)
    unknown = sorted({c for c, _, _ in clips if c not in label_by_class})
    if unknown:
        raise ValueError(f"input contains classes not in the job config: {unknown}")
    bag_dir = job.output_dir / "bags"
    bag_dir.mkdir(parents=True, exist_ok=True)
    summary = ExportSummary()
    items = []
    for class_name, clip_name, clip_path in clips:
        bag_id = f"{class_name}_{clip_name}"
        try:
            frames = load_clip_frames(clip_path, job.frames, job.resize, job.offset)
        except ClipDecodeError as exc:
            log(f"warning: skipping {clip_path}: {exc}", file=sys.stderr)
            summary.skipped.append(str(clip_path))
            continue
        features = encoder.encode_images(frames)
        rel = f"bags/{bag_id}.tgfb"
        write_bag_file(job.output_dir / rel, features, label_by_class[class_name], bag_id)
        items.append((rel, job.split))
        summary.written.append(rel)
    write_manifest(job.output_dir / "manifest.json", encoder.dim,
                   job.class_names, job.fine_descriptors, items)
    return summary


def export_text(job: ExportJob, encoder) -> Path:
    """One TGTE file with a unit-norm embedding row per class descriptor."""
    if not job.fine_descriptors or any(not d.strip() for d in job.fine_descriptors):
        raise ValueError("every class needs a non-empty descriptor")
    for descriptor in job.fine_descriptors:
        n = encoder.count_tokens(descriptor)
        if n > MAX_TEXT_TOKENS:
            raise PromptTooLongError(
                f"descriptor tokenizes to {n} tokens, over the {MAX_TEXT_TOKENS}-token cap: "
                f"{descriptor[:60]!r}"
            )
    embeddings = encoder.encode_texts(job.fine_descriptors)
    job.output_dir.mkdir(parents=True, exist_ok=True)
    out = job.output_dir / "text_embeddings.tgte"
    write_text_file(out, embeddings, name="fine_descriptors")
    return out
