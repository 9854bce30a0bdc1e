"""Adapter jobs: video/frames in, spec-conformant sequence directory out.

Communication with the primary toolkit is files only: masks and depth PNGs,
manifest.json (written last), labels.jsonl for the frame filter, and an
adapter_lock.json recording backend/engine provenance. Nothing here imports
the primary package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from . import __version__
from .engines import (
    depth_scale_for,
    load_depth_engine,
    load_segmenter,
    load_vos,
)
from .errors import BackendFailure, ConsistencyError, DecodeError, NoDetection

DEFAULT_PROMPTS = ("Spoon", "Hand")
LOCK_NAME = "adapter_lock.json"
FRAME_PATTERN = "{frame:06d}.png"


@dataclass(frozen=True)
class AdapterJob:
    """One (sequence, backend) run. out_dir must be distinct per pair."""

    source: Path  # video file or frame directory
    out_dir: Path
    vos_backend: str = "cutie"
    prompts: tuple[str, ...] = DEFAULT_PROMPTS
    engine: str = "auto"  # "auto" = real runtimes, "offline" = classical stand-ins
    device: str = "cpu"
    stride: int = 1  # video frame extraction stride
    keep_rgb: bool = True
    sequence_id: str | None = None

    def __post_init__(self):
        if not self.prompts:
            raise ConsistencyError("prompts must be nonempty")
        if self.stride < 1:
            raise ConsistencyError("stride must be >= 1")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(p.lower() for p in self.prompts)


def extract_frames(video: str | Path, out_dir: str | Path, stride: int = 1) -> list[Path]:
    """Decode a video into numbered PNG frames at the given stride."""
    video = Path(video)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cap = cv2.VideoCapture(str(video))
    if not cap.isOpened():
        raise DecodeError(f"cannot open video container: {video}")
    paths: list[Path] = []
    index = 0
    written = 0
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        if index % stride == 0:
            path = out_dir / FRAME_PATTERN.format(frame=written)
            cv2.imwrite(str(path), frame)
            paths.append(path)
            written += 1
        index += 1
    cap.release()
    if not paths:
        raise DecodeError(f"no decodable frames in {video}")
    return paths


def load_frames(frames_dir: str | Path) -> list[np.ndarray]:
    paths = sorted(Path(frames_dir).glob("*.png")) + sorted(Path(frames_dir).glob("*.jpg"))
    if not paths:
        raise DecodeError(f"no frames found under {frames_dir}")
    frames = []
    for p in paths:
        img = cv2.imread(str(p), cv2.IMREAD_COLOR)
        if img is None:
            raise DecodeError(f"cannot decode frame {p}")
        frames.append(img)
    if len({f.shape for f in frames}) != 1:
        raise DecodeError(f"frames under {frames_dir} have mixed dimensions")
    return frames


def segment_first_frame(frame_bgr: np.ndarray, prompts: tuple[str, ...],
                        engine: str = "auto",
                        device: str = "cpu") -> dict[str, np.ndarray | None]:
    """Initial mask per prompt; None entries mean the prompt found nothing."""
    return load_segmenter(engine, device).segment_first(frame_bgr, prompts)


def propagate_vos(frames_bgr: list[np.ndarray], initial: dict[str, np.ndarray],
                  backend: str, engine: str = "auto",
                  device: str = "cpu") -> list[dict[str, np.ndarray]]:
    """Per-frame masks for every initial label."""
    if not any(m.any() for m in initial.values()):
        raise NoDetection("initial segmentation is empty for every prompt")
    vos = load_vos(backend, engine, device)
    results = vos.propagate(frames_bgr, initial)
    if len(results) != len(frames_bgr):
        raise BackendFailure(len(results), "backend returned wrong frame count")
    return results


def estimate_depth(frames_bgr: list[np.ndarray], engine: str = "auto",
                   device: str = "cpu") -> tuple[list[np.ndarray], dict, float]:
    """Metric depth per frame, intrinsics, and the chosen depth scale."""
    depths, intrinsics = load_depth_engine(engine, device).estimate(frames_bgr)
    return depths, intrinsics, depth_scale_for(depths)


# -- file protocol -----------------------------------------------------------


def _write_mask(path: Path, mask: np.ndarray) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    cv2.imwrite(str(path), np.where(mask, 255, 0).astype(np.uint8))


def _write_depth(path: Path, depth_m: np.ndarray, scale: float) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    stored = np.clip(np.rint(depth_m / scale), 0, 65535).astype(np.uint16)
    cv2.imwrite(str(path), stored)


def write_manifest(out_dir: Path, sequence_id: str, labels: tuple[str, ...],
                   intrinsics: dict, depth_scale: float, frame_count: int,
                   with_rgb: bool) -> Path:
    """Emit manifest.json referencing every artifact; call after all rasters
    are on disk (manifest-last commit order)."""
    frames = []
    for f in range(frame_count):
        rec = {
            "frame": f,
            "depth": f"depth/{f:06d}.png",
            "masks": {label: f"masks/{label}/{f:06d}.png" for label in labels},
        }
        if with_rgb:
            rec["rgb"] = f"rgb/{f:06d}.png"
        frames.append(rec)
    doc = {
        "sequence_id": sequence_id,
        "frame_count": frame_count,
        "object_labels": list(labels),
        "intrinsics": intrinsics,
        "depth_scale": depth_scale,
        "frames": frames,
    }
    path = out_dir / "manifest.json"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    tmp.replace(path)
    return path


def _check_lock(job: AdapterJob) -> None:
    lock = job.out_dir / LOCK_NAME
    if lock.exists():
        previous = json.loads(lock.read_text())
        if previous.get("vos_backend") != job.vos_backend:
            raise ConsistencyError(
                f"{job.out_dir} already holds a {previous.get('vos_backend')!r} run; "
                "output directories must be distinct per (backend, sequence)")


def run_job(job: AdapterJob) -> Path:
    """Full pipeline: frames -> first-frame masks -> VOS -> depth -> manifest.

    Returns the manifest path. Prompts that match nothing are recorded in the
    lock file and propagate as empty masks rather than failing the job.
    """
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _check_lock(job)

    source = Path(job.source)
    if source.is_dir():
        frames = load_frames(source)
    else:
        frames = [cv2.imread(str(p), cv2.IMREAD_COLOR)
                  for p in extract_frames(source, out / "rgb_src", job.stride)]

    initial_raw = segment_first_frame(frames[0], job.prompts, job.engine, job.device)
    h, w = frames[0].shape[:2]
    undetected = sorted(p for p, m in initial_raw.items() if m is None)
    initial = {p.lower(): (m if m is not None else np.zeros((h, w), dtype=bool))
               for p, m in initial_raw.items()}

    per_frame = propagate_vos(frames, initial, job.vos_backend, job.engine, job.device)
    depths, intrinsics, depth_scale = estimate_depth(frames, job.engine, job.device)

    label_lines = []
    for f, (frame, masks, depth) in enumerate(zip(frames, per_frame, depths)):
        for label in job.labels:
            _write_mask(out / "masks" / label / f"{f:06d}.png", masks[label])
        _write_depth(out / "depth" / f"{f:06d}.png", depth, depth_scale)
        if job.keep_rgb:
            (out / "rgb").mkdir(exist_ok=True)
            cv2.imwrite(str(out / "rgb" / f"{f:06d}.png"), frame)
        present = sorted(label for label in job.labels if masks[label].any())
        label_lines.append(json.dumps({"frame": f, "labels": present}))

    (out / "labels.jsonl").write_text("\n".join(label_lines) + "\n", encoding="utf-8")
    lock = {
        "adapter_version": __version__,
        "vos_backend": job.vos_backend,
        "engine": job.engine,
        "device": job.device,
        "prompts": list(job.prompts),
        "undetected_prompts": undetected,
        "model_versions": {"offline": __version__} if job.engine == "offline" else {},
    }
    (out / LOCK_NAME).write_text(json.dumps(lock, indent=2) + "\n", encoding="utf-8")

    sequence_id = job.sequence_id or f"{source.stem}-{job.vos_backend}"
    return write_manifest(out, sequence_id, job.labels, intrinsics, depth_scale,
                          len(frames), with_rgb=job.keep_rgb)
