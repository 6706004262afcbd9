"""Writers for the TGFB/TGTE wire formats and the dataset manifest.

Layout (little-endian), shared with the training-side reader:
    magic (4 bytes) | version u32 | rows u32 | dim u32 | label u32 |
    id_len u32 | id utf-8 bytes | rows*dim float32 row-major
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

BAG_MAGIC = b"TGFB"
TEXT_MAGIC = b"TGTE"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4s5I")


def _write(path, magic: bytes, rows: np.ndarray, label: int, name: str) -> None:
    data = np.ascontiguousarray(rows, dtype=np.float32)
    if data.ndim != 2:
        raise ValueError(f"payload must be 2-D, got shape {data.shape}")
    ident = name.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, FORMAT_VERSION, data.shape[0], data.shape[1],
                              label, len(ident)))
        fh.write(ident)
        fh.write(data.tobytes())


def write_bag_file(path, features: np.ndarray, label: int, bag_id: str) -> None:
    _write(path, BAG_MAGIC, features, label, bag_id)


def write_text_file(path, embeddings: np.ndarray, name: str = "") -> None:
    _write(path, TEXT_MAGIC, embeddings, 0, name)


def write_manifest(path, dim: int, class_names, fine_descriptors, bag_items) -> None:
    """``bag_items``: iterable of (relative path, split) pairs."""
    doc = {
        "d": dim,
        "C": len(class_names),
        "class_names": list(class_names),
        "fine_descriptors": list(fine_descriptors),
        "bags": [{"path": str(p), "split": s} for p, s in bag_items],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
