import json

import numpy as np
import pytest
from PIL import Image

from upk.sequence_io import CameraIntrinsics


@pytest.fixture
def small_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=50.0, fy=50.0, cx=15.5, cy=11.5, width=32, height=24)


def write_gray8(path, arr):
    """arr: uint8 (h, w)."""
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


def write_gray16(path, arr):
    """arr: uint16 (h, w)."""
    Image.fromarray(np.asarray(arr, dtype=np.uint16)).save(path)


def write_rgb8(path, arr):
    """arr: uint8 (h, w, 3)."""
    Image.fromarray(np.asarray(arr, dtype=np.uint8)).save(path)


def make_sequence_dir(root, *, frames=3, width=32, height=24, labels=("spoon",),
                      depth_scale=0.001, with_gt=True, with_rgb=False,
                      mask_fn=None, depth_fn=None, timestamps=None):
    """Build a small on-disk sequence conforming to the documented layout.

    mask_fn(frame, label) -> uint8 (h, w); depth_fn(frame) -> uint16 (h, w).
    Defaults: a 6x6 bright square and constant depth 1500 units.
    """
    root.mkdir(parents=True, exist_ok=True)
    (root / "depth").mkdir(exist_ok=True)
    for label in labels:
        (root / "masks" / label).mkdir(parents=True, exist_ok=True)
        if with_gt:
            (root / "gt" / label).mkdir(parents=True, exist_ok=True)
    if with_rgb:
        (root / "rgb").mkdir(exist_ok=True)

    if mask_fn is None:
        def mask_fn(frame, label):  # noqa: ARG001
            # elongated so principal axes are unambiguous
            arr = np.zeros((height, width), dtype=np.uint8)
            arr[4:10, 4:16] = 255
            return arr

    if depth_fn is None:
        def depth_fn(frame):  # noqa: ARG001
            return np.full((height, width), 1500, dtype=np.uint16)

    entries = []
    for f in range(frames):
        rec = {"frame": f, "depth": f"depth/{f:06d}.png", "masks": {}}
        for label in labels:
            rel = f"masks/{label}/{f:06d}.png"
            write_gray8(root / rel, mask_fn(f, label))
            rec["masks"][label] = rel
        if with_gt:
            rec["gt_masks"] = {}
            for label in labels:
                rel = f"gt/{label}/{f:06d}.png"
                write_gray8(root / rel, mask_fn(f, label))
                rec["gt_masks"][label] = rel
        if with_rgb:
            rel = f"rgb/{f:06d}.png"
            write_rgb8(root / rel, np.zeros((height, width, 3), dtype=np.uint8))
            rec["rgb"] = rel
        write_gray16(root / rec["depth"], depth_fn(f))
        entries.append(rec)

    doc = {
        "sequence_id": root.name,
        "frame_count": frames,
        "object_labels": list(labels),
        "intrinsics": {"fx": 50.0, "fy": 50.0, "cx": (width - 1) / 2,
                       "cy": (height - 1) / 2, "width": width, "height": height},
        "depth_scale": depth_scale,
        "frames": entries,
    }
    if timestamps is not None:
        doc["timestamps"] = list(timestamps)
    (root / "manifest.json").write_text(json.dumps(doc, indent=2))
    return root / "manifest.json"
