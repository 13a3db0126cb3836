"""Sequence and result persistence.

On-disk sequence layout:

    sequence/
        frames/          zero-padded numbered images, lexicographic = temporal
        masks/           optional 0/255 single-channel ground-truth masks
        groundtruth.txt  optional box file, one "x,y,w,h" line per frame

Box files are ASCII with '.' decimals; floats are written with repr so a
read/write round trip is bit-exact. Probability masks are quantized to 8-bit
PNG on write.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DatasetLayoutError
from .geometry import BoundingBox

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class SequenceOnDisk:
    frames: list[np.ndarray]  # (h, w, 3) float32 in [0, 1]
    masks: list[np.ndarray] | None  # bool, one per frame
    boxes: list[BoundingBox] | None
    frame_names: list[str]
    path: str

    def __len__(self) -> int:
        return len(self.frames)

    def init_mask(self):
        return self.masks[0] if self.masks else None

    def init_box(self):
        return self.boxes[0] if self.boxes else None


def _image_files(directory: str) -> list[str]:
    if not os.path.isdir(directory):
        return []
    names = [n for n in sorted(os.listdir(directory))
             if os.path.splitext(n)[1].lower() in IMAGE_EXTENSIONS]
    return names


def read_frame(path: str) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def read_mask(path: str) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def write_frame(path: str, frame: np.ndarray) -> None:
    arr = np.round(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr).save(path)


def write_mask(path: str, values: np.ndarray) -> None:
    """Quantize a probability (or boolean) mask to single-channel 8-bit PNG."""
    arr = np.round(np.clip(np.asarray(values, dtype=np.float32), 0.0, 1.0) * 255.0)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)


def read_box_file(path: str) -> list[BoundingBox]:
    boxes = []
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DatasetLayoutError(f"{path} line {lineno + 1}: expected x,y,w,h")
            x, y, w, h = (float(p) for p in parts)
            boxes.append(BoundingBox(x, y, w, h))
    return boxes


def write_box_file(path: str, boxes) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for box in boxes:
            fh.write(f"{box.x!r},{box.y!r},{box.w!r},{box.h!r}\n")


def load_sequence(path: str) -> SequenceOnDisk:
    """Read a sequence directory; masks and boxes are optional but frame-1
    ground truth of one kind must exist for tracking runs."""
    frames_dir = os.path.join(path, "frames")
    names = _image_files(frames_dir)
    if not names:
        raise DatasetLayoutError(f"no frames under {frames_dir}")
    frames = [read_frame(os.path.join(frames_dir, n)) for n in names]

    masks = None
    mask_names = _image_files(os.path.join(path, "masks"))
    if mask_names:
        if len(mask_names) < len(names):
            raise DatasetLayoutError(
                f"{len(names)} frames but only {len(mask_names)} masks under {path}")
        masks = [read_mask(os.path.join(path, "masks", n)) for n in mask_names[: len(names)]]

    boxes = None
    box_path = os.path.join(path, "groundtruth.txt")
    if os.path.isfile(box_path):
        boxes = read_box_file(box_path)
        if len(boxes) < len(names):
            raise DatasetLayoutError(
                f"{len(names)} frames but only {len(boxes)} box lines in {box_path}")
    return SequenceOnDisk(frames=frames, masks=masks, boxes=boxes,
                          frame_names=names, path=path)


def export_sequence(path: str, frames, masks=None, boxes=None) -> None:
    """Write frames (and optional ground truth) in the directory layout above."""
    os.makedirs(os.path.join(path, "frames"), exist_ok=True)
    width = max(6, len(str(len(frames) - 1)))
    for t, frame in enumerate(frames):
        write_frame(os.path.join(path, "frames", f"{t:0{width}d}.png"), frame)
    if masks is not None:
        os.makedirs(os.path.join(path, "masks"), exist_ok=True)
        for t, mask in enumerate(masks):
            write_mask(os.path.join(path, "masks", f"{t:0{width}d}.png"), mask)
    if boxes is not None:
        write_box_file(os.path.join(path, "groundtruth.txt"), boxes)


def load_result_masks(results_dir: str) -> list[np.ndarray]:
    """Binarized predicted masks from a tracking output directory."""
    masks_dir = os.path.join(results_dir, "masks")
    names = _image_files(masks_dir)
    if not names:
        raise DatasetLayoutError(f"no masks under {masks_dir}")
    return [read_mask(os.path.join(masks_dir, n)) for n in names]
