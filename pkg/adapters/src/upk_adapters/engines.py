"""Inference engines behind narrow protocols.

Real backends (Grounding DINO + SAM2 for first-frame segmentation, Cutie or
SAM2 video prediction for propagation, UniDepth for depth) are imported
lazily and raise ModelUnavailable when their runtimes are missing, so the
adapter package works on machines without GPU stacks. The offline engines are
deterministic classical stand-ins that exercise the full file protocol:
luminance thresholding + connected components for segmentation, overlap-based
component propagation for VOS, and a planar ramp for depth.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass
from typing import Protocol

import cv2
import numpy as np

from .errors import ModelUnavailable

VOS_BACKENDS = ("cutie", "sam2")
MAX_DEPTH_UNITS = 60_000  # stored 16-bit values stay below this


class SegmentationEngine(Protocol):
    def segment_first(self, frame_bgr: np.ndarray,
                      prompts: tuple[str, ...]) -> dict[str, np.ndarray | None]:
        """One boolean mask per prompt; None when the prompt matched nothing."""


class VosEngine(Protocol):
    def propagate(self, frames_bgr: list[np.ndarray],
                  initial: dict[str, np.ndarray]) -> list[dict[str, np.ndarray]]:
        """Per-frame masks for every label, frame 0 equal to the initial masks."""


class DepthEngine(Protocol):
    def estimate(self, frames_bgr: list[np.ndarray]) -> tuple[list[np.ndarray], dict]:
        """Metric depth (meters, float) per frame plus pinhole intrinsics."""


def _require(module: str, hint: str):
    try:
        return importlib.import_module(module)
    except ImportError as exc:
        raise ModelUnavailable(
            f"{module} runtime is not installed ({hint})") from exc


# -- real backends (lazy) ---------------------------------------------------


class GroundedSam2Segmenter:
    """Zero-shot detection + promptable segmentation for the first frame."""

    def __init__(self, device: str = "cpu"):
        self.device = device
        self._dino = _require("groundingdino", "pip install groundingdino-py + weights")
        self._sam2 = _require("sam2", "pip install sam2 + weights")

    def segment_first(self, frame_bgr, prompts):  # pragma: no cover - needs weights
        raise ModelUnavailable("grounded SAM2 inference requires model weights")


class CutiePropagator:
    def __init__(self, device: str = "cpu"):
        self.device = device
        self._cutie = _require("cutie", "pip install cutie + weights")

    def propagate(self, frames_bgr, initial):  # pragma: no cover - needs weights
        raise ModelUnavailable("cutie inference requires model weights")


class Sam2VideoPropagator:
    def __init__(self, device: str = "cpu"):
        self.device = device
        self._sam2 = _require("sam2", "pip install sam2 + weights")

    def propagate(self, frames_bgr, initial):  # pragma: no cover - needs weights
        raise ModelUnavailable("sam2 video inference requires model weights")


class UniDepthEstimator:
    def __init__(self, device: str = "cpu"):
        self.device = device
        self._unidepth = _require("unidepth", "pip install unidepth + weights")

    def estimate(self, frames_bgr):  # pragma: no cover - needs weights
        raise ModelUnavailable("unidepth inference requires model weights")


# -- offline stand-ins --------------------------------------------------------


def _luminance_components(frame_bgr: np.ndarray):
    """Otsu-thresholded bright regions, components sorted by area then position."""
    gray = cv2.cvtColor(frame_bgr, cv2.COLOR_BGR2GRAY)
    _, binary = cv2.threshold(gray, 0, 255, cv2.THRESH_BINARY + cv2.THRESH_OTSU)
    count, labels, stats, _ = cv2.connectedComponentsWithStats(binary, connectivity=8)
    comps = []
    for i in range(1, count):  # 0 is background
        area = int(stats[i, cv2.CC_STAT_AREA])
        top, left = int(stats[i, cv2.CC_STAT_TOP]), int(stats[i, cv2.CC_STAT_LEFT])
        comps.append((-area, top, left, i))
    comps.sort()
    return labels, [i for *_, i in comps]


@dataclass
class OfflineSegmenter:
    """Prompt k gets the k-th largest bright component."""

    def segment_first(self, frame_bgr, prompts):
        labels, order = _luminance_components(frame_bgr)
        out: dict[str, np.ndarray | None] = {}
        for k, prompt in enumerate(prompts):
            out[prompt] = (labels == order[k]) if k < len(order) else None
        return out


@dataclass
class OfflinePropagator:
    """Keeps bright components overlapping the previous mask; smooth_px > 0
    adds a closing-style boundary ring so backend slots produce distinct
    outputs, the way real VOS models disagree at object borders."""

    smooth_px: int = 0

    def propagate(self, frames_bgr, initial):
        results: list[dict[str, np.ndarray]] = []
        prev = {k: v.copy() for k, v in initial.items()}
        for idx, frame in enumerate(frames_bgr):
            if idx == 0:
                results.append({k: v.copy() for k, v in prev.items()})
                continue
            labels, order = _luminance_components(frame)
            cur: dict[str, np.ndarray] = {}
            for name, prev_mask in prev.items():
                reach = cv2.dilate(prev_mask.astype(np.uint8),
                                   np.ones((5, 5), np.uint8)).astype(bool)
                mask = np.zeros_like(prev_mask)
                for comp in order:
                    comp_mask = labels == comp
                    if (comp_mask & reach).any():
                        mask |= comp_mask
                if self.smooth_px > 0:
                    kernel = np.ones((2 * self.smooth_px + 1,) * 2, np.uint8)
                    mask = cv2.dilate(mask.astype(np.uint8), kernel).astype(bool)
                cur[name] = mask
            results.append(cur)
            # empty masks hold the previous support so a short dropout
            # does not end the track
            prev = {k: (v if v.any() else prev[k]) for k, v in cur.items()}
        return results


@dataclass
class OfflineDepth:
    """Planar depth ramp; intrinsics derived from the frame size."""

    near: float = 0.8
    far: float = 1.2

    def estimate(self, frames_bgr):
        h, w = frames_bgr[0].shape[:2]
        ramp = self.near + (self.far - self.near) * (
            np.arange(h, dtype=np.float64)[:, None] / max(1, h - 1))
        depth = np.broadcast_to(ramp, (h, w)).copy()
        intrinsics = {"fx": 1.2 * w, "fy": 1.2 * w,
                      "cx": (w - 1) / 2, "cy": (h - 1) / 2,
                      "width": w, "height": h}
        return [depth.copy() for _ in frames_bgr], intrinsics


def depth_scale_for(depths: list[np.ndarray]) -> float:
    """Stored units chosen so the deepest measurement stays under 16 bits."""
    max_depth = max(float(d.max()) for d in depths)
    return max_depth / MAX_DEPTH_UNITS


# -- engine selection ---------------------------------------------------------

# offline surrogate parameters per backend slot; distinct so the two VOS
# slots produce comparable-but-different masks
_OFFLINE_VOS = {"cutie": 0, "sam2": 1}


def load_segmenter(engine: str, device: str) -> SegmentationEngine:
    if engine == "offline":
        return OfflineSegmenter()
    return GroundedSam2Segmenter(device=device)


def load_vos(backend: str, engine: str, device: str) -> VosEngine:
    if backend not in VOS_BACKENDS:
        raise ModelUnavailable(f"unknown VOS backend {backend!r}; "
                               f"known: {list(VOS_BACKENDS)}")
    if engine == "offline":
        return OfflinePropagator(smooth_px=_OFFLINE_VOS[backend])
    return CutiePropagator(device=device) if backend == "cutie" \
        else Sam2VideoPropagator(device=device)


def load_depth_engine(engine: str, device: str) -> DepthEngine:
    if engine == "offline":
        return OfflineDepth()
    return UniDepthEstimator(device=device)
