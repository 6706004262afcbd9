"""Synthetic planted-salient-frame benchmark.

Each bag gets a round-robin class label and a random subset of salient frames
carrying that class's prototype direction; the remaining frames are noisy
mixtures of the other prototypes. Ground-truth salient masks go to a sidecar
JSON so localization can be scored. Generation is byte-deterministic per seed.

Prototypes are partially anchored to the frozen default text encoder's
embedding of each class descriptor (``text_alignment`` controls the fraction).
This mirrors what a pretrained vision-language backbone provides on real data:
matched text and image features are weakly correlated from the start, which is
what lets prompt-guided training bootstrap instead of having to invent the
cross-modal bridge from a few hundred weak labels.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .bagfile import FrameBag, write_bag, write_manifest
from .encoders import DEFAULT_ENCODER_SEED, FrozenEncoder, tokenize
from .tensor import Tensor

PROTOTYPE_MAX_COSINE = 0.3

_WORDS = ("alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
          "iota", "kappa", "lambda", "mu")

# Distinct content words per class keep the mock descriptor embeddings apart;
# shared filler would dominate the mean-pooled encoding.
_DESCRIPTOR_BANK = (
    "steep onset, bright flare, rising crest",
    "hollow drift, low murmur, soft shadow",
    "jagged burst, rapid flicker, sharp spike",
    "slow swell, wide plateau, heavy base",
    "twisting spiral, dense knot, curled loop",
    "scattered grains, fine speckle, light dust",
    "deep trough, long valley, sunken dip",
    "ringing echo, twin pulse, mirrored beat",
    "braided weave, crossed lattice, woven mesh",
    "molten glow, warm ember, slow fade",
    "frozen edge, brittle shard, cold splinter",
    "surging tide, rolling wave, pulled current",
)


@dataclass
class SyntheticSpec:
    bags_train: int = 200
    bags_test: int = 50
    frames: int = 16
    dim: int = 32
    num_classes: int = 4
    salient_count: int = 4
    signal_strength: float = 2.0
    noise_std: float = 0.5
    intensity_profile: str = "step"  # step | ramp
    # Fraction of each prototype drawn from its descriptor's frozen text
    # embedding (the rest is a random direction); 0 decouples the modalities.
    text_alignment: float = 0.5
    encoder_seed: int = DEFAULT_ENCODER_SEED

    def __post_init__(self):
        if not 0.0 <= self.text_alignment < 1.0:
            raise ValueError(f"text_alignment must be in [0, 1), got {self.text_alignment}")
        if not 1 <= self.salient_count <= self.frames:
            raise ValueError(f"salient_count {self.salient_count} out of range for {self.frames} frames")
        if self.intensity_profile not in ("step", "ramp"):
            raise ValueError(f"unknown intensity profile {self.intensity_profile!r}")
        if self.num_classes > len(_WORDS):
            raise ValueError(f"at most {len(_WORDS)} classes supported, got {self.num_classes}")

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls(**json.load(fh))


def sample_prototypes(rng: np.random.Generator, num_classes: int, dim: int,
                      anchors: np.ndarray | None = None,
                      alignment: float = 0.0) -> np.ndarray:
    """Unit prototypes with pairwise |cosine| below the generation bound.

    With ``anchors`` given, prototype k is alignment*anchors[k] plus a random
    remainder; the random part is resampled by rejection until every pair
    clears the bound.
    """
    protos = []
    spread = float(np.sqrt(1.0 - alignment ** 2))
    for k in range(num_classes):
        while True:
            v = rng.standard_normal(dim)
            v /= np.linalg.norm(v)
            if anchors is not None and alignment > 0.0:
                v = alignment * anchors[k] + spread * v
                v /= np.linalg.norm(v)
            if all(abs(v @ p) < PROTOTYPE_MAX_COSINE for p in protos):
                protos.append(v)
                break
    return np.stack(protos)


def descriptor_anchors(descriptors, dim: int, encoder_seed: int) -> np.ndarray:
    """Frozen text embeddings of the class descriptors, one unit row each."""
    encoder = FrozenEncoder("mock_text", seed=encoder_seed, feature_dim=dim)
    return np.stack([encoder.encode_text(tokenize(d)).values for d in descriptors])


def _salient_intensities(spec: SyntheticSpec) -> np.ndarray:
    if spec.intensity_profile == "ramp":
        return np.linspace(0.5, 1.0, spec.salient_count)
    return np.ones(spec.salient_count)


def _make_bag(rng: np.random.Generator, spec: SyntheticSpec, protos: np.ndarray,
              label: int, bag_id: str):
    frames = np.empty((spec.frames, spec.dim))
    salient = np.sort(rng.choice(spec.frames, size=spec.salient_count, replace=False))
    intensities = _salient_intensities(spec)
    others = [c for c in range(spec.num_classes) if c != label]
    salient_set = {int(i) for i in salient}
    rank = 0
    for t in range(spec.frames):
        noise = rng.normal(0.0, spec.noise_std, spec.dim)
        if t in salient_set:
            v = protos[label] * spec.signal_strength * intensities[rank] + noise
            rank += 1
        else:
            weights = rng.dirichlet(np.ones(len(others)))
            v = weights @ protos[others] + noise
        frames[t] = v / np.linalg.norm(v)
    bag = FrameBag(bag_id=bag_id, features=Tensor(frames), label=label, source="mock")
    return bag, [int(i) for i in salient]


def generate(spec: SyntheticSpec, seed: int, out_dir) -> Path:
    """Write bag files, manifest and salient-frame masks; returns the manifest path."""
    out_dir = Path(out_dir)
    bag_dir = out_dir / "bags"
    bag_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    class_names = [f"class_{_WORDS[k]}" for k in range(spec.num_classes)]
    descriptors = [_DESCRIPTOR_BANK[k] for k in range(spec.num_classes)]
    anchors = None
    if spec.text_alignment > 0.0:
        anchors = descriptor_anchors(descriptors, spec.dim, spec.encoder_seed)
    protos = sample_prototypes(rng, spec.num_classes, spec.dim,
                               anchors=anchors, alignment=spec.text_alignment)

    items, masks = [], {}
    for split, count in (("train", spec.bags_train), ("test", spec.bags_test)):
        for i in range(count):
            label = i % spec.num_classes
            bag_id = f"{split}_{i:04d}"
            bag, salient = _make_bag(rng, spec, protos, label, bag_id)
            rel = f"bags/{bag_id}.tgfb"
            write_bag(out_dir / rel, bag)
            items.append((rel, split))
            masks[bag_id] = salient

    with open(out_dir / "masks.json", "w", encoding="utf-8") as fh:
        json.dump(masks, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    with open(out_dir / "spec.json", "w", encoding="utf-8") as fh:
        json.dump(asdict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest_path = out_dir / "manifest.json"
    write_manifest(manifest_path, spec.dim, class_names, descriptors, items,
                   masks="masks.json")
    return manifest_path
