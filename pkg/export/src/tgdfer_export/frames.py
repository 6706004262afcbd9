"""Clip discovery, uniform frame sampling and resizing.

A clip is either a directory of image frames (sorted by filename) or a video
file decodable by OpenCV. Exactly ``count`` frames are taken per clip at
uniformly spaced indices; clips with fewer frames than that are rejected.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}
VIDEO_SUFFIXES = {".mp4", ".avi", ".mov", ".mkv", ".webm"}


class ClipDecodeError(RuntimeError):
    """The clip could not be decoded or has too few frames."""


def sample_indices(available: int, count: int, offset: int = 0) -> list:
    """``count`` uniformly spaced frame indices over ``available`` frames.

    ``offset`` shifts the grid start; indices are clamped to stay in range.
    """
    if available < count:
        raise ClipDecodeError(f"clip has {available} frames, need at least {count}")
    grid = np.linspace(0, available - 1, num=count)
    idx = np.minimum(np.floor(grid).astype(int) + offset, available - 1)
    return [int(i) for i in idx]


def discover_clips(input_dir) -> list:
    """(class_name, clip_name, clip_path) triples from in/<class>/<clip> layout."""
    input_dir = Path(input_dir)
    if not input_dir.is_dir():
        raise FileNotFoundError(f"input directory {input_dir} does not exist")
    clips = []
    for class_dir in sorted(p for p in input_dir.iterdir() if p.is_dir()):
        for entry in sorted(class_dir.iterdir()):
            if entry.is_dir() or entry.suffix.lower() in VIDEO_SUFFIXES:
                clips.append((class_dir.name, entry.stem, entry))
    return clips


def _frame_files(clip_dir: Path) -> list:
    files = sorted(p for p in clip_dir.iterdir()
                   if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise ClipDecodeError(f"{clip_dir} contains no image frames")
    return files


def _load_image(path: Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB").resize((size, size), Image.BILINEAR)
    except Exception as exc:
        raise ClipDecodeError(f"cannot decode {path}: {exc}") from exc
    return np.asarray(rgb, dtype=np.uint8)


def _load_video_frames(path: Path, indices: list, size: int) -> np.ndarray:
    try:
        import cv2
    except ImportError as exc:  # pragma: no cover
        raise ClipDecodeError("video input needs opencv-python (install the [video] extra)") from exc
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise ClipDecodeError(f"cannot open video {path}")
    wanted = set(indices)
    grabbed = {}
    pos = 0
    while wanted:
        ok, frame = cap.read()
        if not ok:
            break
        if pos in wanted:
            frame = cv2.resize(frame, (size, size), interpolation=cv2.INTER_LINEAR)
            grabbed[pos] = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB).astype(np.uint8)
            wanted.discard(pos)
        pos += 1
    cap.release()
    if wanted:
        raise ClipDecodeError(f"{path}: could not read frames {sorted(wanted)}")
    return np.stack([grabbed[i] for i in indices])


def video_frame_count(path: Path) -> int:
    try:
        import cv2
    except ImportError as exc:  # pragma: no cover
        raise ClipDecodeError("video input needs opencv-python (install the [video] extra)") from exc
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise ClipDecodeError(f"cannot open video {path}")
    count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
    cap.release()
    return count


def load_clip_frames(clip_path, count: int, size: int, offset: int = 0) -> np.ndarray:
    """(count, size, size, 3) uint8 RGB frames, uniformly sampled."""
    clip_path = Path(clip_path)
    if clip_path.is_dir():
        files = _frame_files(clip_path)
        indices = sample_indices(len(files), count, offset)
        return np.stack([_load_image(files[i], size) for i in indices])
    indices = sample_indices(video_frame_count(clip_path), count, offset)
    return _load_video_frames(clip_path, indices, size)
