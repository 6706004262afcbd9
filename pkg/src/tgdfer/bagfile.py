"""On-disk formats: TGFB bag files, TGTE text-embedding files, JSON manifests.

Bag file layout (little-endian):
    magic "TGFB" (4 bytes) | version u32 | rows u32 | dim u32 | label u32 |
    id_len u32 | id bytes (utf-8) | rows*dim float32, row-major

TGTE uses the same header with magic "TGTE"; its rows are per-class text
embeddings and the label field is unused (written as 0).

Feature payloads are float32 on disk; reading promotes them to float64
tensors without loss of the stored 32-bit values.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor

BAG_MAGIC = b"TGFB"
TEXT_MAGIC = b"TGTE"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4s5I")
HEADER_SIZE = _HEADER.size  # 24 bytes

VALID_SPLITS = ("train", "test")


class BagFormatError(ValueError):
    """Malformed or inconsistent bag/embedding file."""


@dataclass
class FrameBag:
    """One clip's frame features plus its coarse label."""

    bag_id: str
    features: Tensor  # (frames, dim)
    label: int
    source: str = "mock"  # mock | imported

    def __post_init__(self):
        if self.features.values.ndim != 2 or self.features.shape[0] < 1:
            raise BagFormatError(f"bag features must be (frames, dim), got {self.features.shape}")
        if not np.isfinite(self.features.values).all():
            raise BagFormatError(f"bag {self.bag_id!r} contains non-finite features")
        if self.label < 0:
            raise BagFormatError(f"bag {self.bag_id!r} has negative label {self.label}")

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def write_bag(path, bag: FrameBag) -> None:
    _write_block(path, BAG_MAGIC, bag.features.values, bag.label, bag.bag_id)


def read_bag(path, expected_dim: int | None = None, num_classes: int | None = None) -> FrameBag:
    rows, dim, label, name, payload = _read_block(path, BAG_MAGIC)
    if expected_dim is not None and dim != expected_dim:
        raise BagFormatError(f"{path}: dimension {dim} disagrees with manifest dimension {expected_dim}")
    if num_classes is not None and label >= num_classes:
        raise BagFormatError(f"{path}: label {label} out of range for {num_classes} classes")
    return FrameBag(bag_id=name, features=Tensor(payload), label=label, source="imported")


def write_text_embeddings(path, matrix: np.ndarray, name: str = "") -> None:
    _write_block(path, TEXT_MAGIC, np.asarray(matrix), 0, name)


def read_text_embeddings(path, expected_dim: int | None = None):
    rows, dim, _, name, payload = _read_block(path, TEXT_MAGIC)
    if expected_dim is not None and dim != expected_dim:
        raise BagFormatError(f"{path}: dimension {dim} disagrees with expected {expected_dim}")
    return name, payload


def _write_block(path, magic: bytes, features: np.ndarray, label: int, name: str) -> None:
    if features.ndim != 2:
        raise BagFormatError(f"payload must be 2-D, got shape {features.shape}")
    rows, dim = features.shape
    data = np.ascontiguousarray(features, dtype=np.float32)
    ident = name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, FORMAT_VERSION, rows, dim, label, len(ident)))
        fh.write(ident)
        fh.write(data.tobytes())


def _read_block(path, magic: bytes):
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise BagFormatError(f"{path}: truncated header ({len(raw)} bytes)")
    got_magic, version, rows, dim, label, id_len = _HEADER.unpack_from(raw)
    if got_magic != magic:
        raise BagFormatError(f"{path}: magic {got_magic!r} does not match {magic!r}")
    if version != FORMAT_VERSION:
        raise BagFormatError(f"{path}: unsupported version {version}")
    expected = HEADER_SIZE + id_len + rows * dim * 4
    if len(raw) != expected:
        raise BagFormatError(f"{path}: truncated payload ({len(raw)} bytes, expected {expected})")
    name = raw[HEADER_SIZE:HEADER_SIZE + id_len].decode("utf-8")
    payload = np.frombuffer(raw, dtype="<f4", offset=HEADER_SIZE + id_len).reshape(rows, dim)
    return rows, dim, label, name, payload.astype(np.float64)


# ---------------------------------------------------------------------------
# Manifest


@dataclass
class BagEntry:
    path: Path
    split: str


@dataclass
class DatasetManifest:
    """Dataset description: dimensions, class texts and bag file locations."""

    dim: int
    num_classes: int
    class_names: list
    fine_descriptors: list
    bags: list = field(default_factory=list)
    masks_path: Path | None = None
    base_dir: Path = Path(".")

    def entries(self, split: str | None = None):
        if split is not None and split not in VALID_SPLITS:
            raise ValueError(f"unknown split {split!r}, expected one of {VALID_SPLITS}")
        return [e for e in self.bags if split is None or e.split == split]

    def load_split(self, split: str):
        return [
            read_bag(e.path, expected_dim=self.dim, num_classes=self.num_classes)
            for e in self.entries(split)
        ]

    def identity_hash(self) -> str:
        import hashlib

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


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    for key in ("d", "C", "class_names", "fine_descriptors", "bags"):
        if key not in doc:
            raise BagFormatError(f"{path}: manifest missing field {key!r}")
    dim, classes = int(doc["d"]), int(doc["C"])
    names = list(doc["class_names"])
    descriptors = list(doc["fine_descriptors"])
    if len(names) != classes or len(descriptors) != classes:
        raise BagFormatError(
            f"{path}: expected {classes} class names and descriptors, "
            f"got {len(names)} and {len(descriptors)}"
        )
    if len(set(names)) != len(names):
        raise BagFormatError(f"{path}: class names are not unique")
    base = path.parent
    entries, seen = [], {}
    for item in doc["bags"]:
        split = item["split"]
        if split not in VALID_SPLITS:
            raise BagFormatError(f"{path}: unknown split {split!r} for {item['path']}")
        bag_path = (base / item["path"]).resolve()
        if bag_path in seen and seen[bag_path] != split:
            raise BagFormatError(f"{path}: {item['path']} appears in more than one split")
        seen[bag_path] = split
        entries.append(BagEntry(path=bag_path, split=split))
    masks = (base / doc["masks"]).resolve() if "masks" in doc else None
    manifest = DatasetManifest(
        dim=dim,
        num_classes=classes,
        class_names=names,
        fine_descriptors=descriptors,
        bags=entries,
        masks_path=masks,
        base_dir=base,
    )
    if check_files:
        for entry in entries:
            if not entry.path.exists():
                raise BagFormatError(f"{path}: referenced bag {entry.path} does not exist")
            read_bag(entry.path, expected_dim=dim, num_classes=classes)
    return manifest


def write_manifest(path, dim: int, class_names, fine_descriptors, bag_items,
                   masks: str | None = None) -> None:
    """``bag_items`` is an iterable of (relative_path, split) pairs."""
    doc = {
        "d": dim,
        "C": len(class_names),
        "class_names": list(class_names),
        "fine_descriptors": list(fine_descriptors),
        "bags": [{"path": str(p), "split": s} for p, s in bag_items],
    }
    if masks is not None:
        doc["masks"] = masks
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
