"""Sequential 6-DoF pose estimation over a frame sequence.

The tracker consumes masks + depth + intrinsics. Frame 0 must yield enough
points (the object is assumed segmented in the first frame); later frames
below min_points follow the gap policy: hold the last pose for up to
max_hold_frames, then declare the track lost. Lost is terminal; there is no
re-acquisition.
"""

from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from . import sequence_io
from .errors import (
    FrameAccessError,
    FrameSetMismatch,
    InitializationError,
    NoComparableFrames,
    UpkError,
)
from .geometry3d import Pose, PoseStatus, mask_to_cloud, pca_pose, rotation_geodesic
from .sequence_io import SequenceManifest


class GapPolicy(str, enum.Enum):
    HOLD = "hold"
    LOST = "lost"


DEFAULT_FLIP_THRESHOLD = 2.618  # radians, about 150 degrees


@dataclass(frozen=True)
class TrackerConfig:
    min_points: int = 50
    stride: int = 2
    gap_policy: GapPolicy = GapPolicy.HOLD
    max_hold_frames: int = 30
    flip_threshold: float = DEFAULT_FLIP_THRESHOLD

    def __post_init__(self):
        if self.min_points < 3:
            raise ValueError(f"min_points must be >= 3, got {self.min_points}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.max_hold_frames < 0:
            raise ValueError(f"max_hold_frames must be >= 0, got {self.max_hold_frames}")
        if not (0.0 < self.flip_threshold <= math.pi):
            raise ValueError(f"flip_threshold must be in (0, pi], got {self.flip_threshold}")


@dataclass(frozen=True)
class PoseTrajectory:
    sequence_id: str
    label: str
    entries: tuple[tuple[int, Pose], ...]

    def __post_init__(self):
        if self.entries:
            frames = [f for f, _ in self.entries]
            if any(b <= a for a, b in zip(frames, frames[1:])):
                raise ValueError("trajectory frames must be strictly increasing")
            if self.entries[0][1].status is not PoseStatus.TRACKED:
                raise ValueError("first trajectory entry must be tracked")

    def __len__(self) -> int:
        return len(self.entries)

    def frames(self) -> list[int]:
        return [f for f, _ in self.entries]

    def status_histogram(self) -> dict[str, int]:
        counts = Counter(p.status.value for _, p in self.entries)
        return {s.value: counts.get(s.value, 0) for s in PoseStatus}


@dataclass(frozen=True)
class TrajectoryErrorStats:
    translation_rmse: float
    rotation_mean: float
    rotation_max: float
    frames_compared: int


def handle_gap(prev: Pose, frames_held: int, cfg: TrackerConfig) -> Pose:
    """Pose for a frame without enough points, given the previous pose.

    frames_held counts this frame's position inside the gap, starting at 1.
    The transform of prev is retained either way so lost poses stay
    inspectable.
    """
    if prev.status not in (PoseStatus.TRACKED, PoseStatus.HELD):
        raise ValueError("handle_gap requires a tracked or held previous pose")
    if cfg.gap_policy is GapPolicy.HOLD and frames_held <= cfg.max_hold_frames:
        return prev.with_status(PoseStatus.HELD, 0.0)
    return prev.with_status(PoseStatus.LOST, 0.0)


def track_clouds(clouds: Iterable[tuple[int, "object"]], cfg: TrackerConfig,
                 sequence_id: str = "", label: str = "") -> PoseTrajectory:
    """Run the tracking state machine over per-frame point clouds.

    clouds yields (frame, PointCloud); a cloud with fewer than cfg.min_points
    points (or None) counts as a gap. Frame 0 must clear min_points.
    """
    entries: list[tuple[int, Pose]] = []
    last_tracked: Pose | None = None
    prev_pose: Pose | None = None
    frames_held = 0
    lost = False

    for frame, cloud in clouds:
        ok = cloud is not None and len(cloud) >= cfg.min_points
        if last_tracked is None:
            if not ok:
                n = 0 if cloud is None else len(cloud)
                raise InitializationError(
                    f"frame {frame}: only {n} points, need {cfg.min_points}; "
                    "tracking requires the object to be segmented in the first frame")
            pose = pca_pose(cloud, None)
            last_tracked = pose
        elif lost:
            pose = prev_pose.with_status(PoseStatus.LOST, 0.0)
        elif ok:
            pose = pca_pose(cloud, last_tracked)
            last_tracked = pose
            frames_held = 0
        else:
            frames_held += 1
            pose = handle_gap(prev_pose, frames_held, cfg)
            if pose.status is PoseStatus.LOST:
                lost = True
        entries.append((frame, pose))
        prev_pose = pose

    return PoseTrajectory(sequence_id=sequence_id, label=label, entries=tuple(entries))


def track_sequence(manifest: SequenceManifest, label: str,
                   cfg: TrackerConfig = TrackerConfig(), *,
                   use_gt: bool = False) -> PoseTrajectory:
    """Track one label through a sequence, one pose per frame.

    Consumes the predicted masks by default; use_gt switches to the
    ground-truth masks where the manifest provides them.
    """
    if label not in manifest.object_labels:
        raise FrameSetMismatch(f"label {label!r} not in manifest labels "
                               f"{list(manifest.object_labels)}")
    k = manifest.intrinsics
    dims = (k.width, k.height)

    def clouds():
        for e in manifest.frames:
            rel = e.gt_masks.get(label) if use_gt else e.masks.get(label)
            if rel is None:
                raise FrameAccessError(e.frame, KeyError(f"no mask for {label!r}"))
            try:
                mask = sequence_io.load_mask(manifest.resolve(rel), dims)
                depth = sequence_io.load_depth(manifest.resolve(e.depth),
                                               manifest.depth_scale, dims)
            except (UpkError, OSError) as exc:
                raise FrameAccessError(e.frame, exc) from exc
            yield e.frame, mask_to_cloud(mask, depth, k, cfg.stride)

    return track_clouds(clouds(), cfg, sequence_id=manifest.sequence_id, label=label)


def detect_flips(traj: PoseTrajectory, threshold: float = DEFAULT_FLIP_THRESHOLD) -> list[int]:
    """Frames whose orientation jumps past threshold from the previous
    tracked frame; only tracked-to-tracked pairs count."""
    flips = []
    for (_, a), (fb, b) in zip(traj.entries, traj.entries[1:]):
        if a.status is PoseStatus.TRACKED and b.status is PoseStatus.TRACKED:
            if rotation_geodesic(a.rotation, b.rotation) > threshold:
                flips.append(fb)
    return flips


def compare_trajectories(a: PoseTrajectory, b: PoseTrajectory) -> TrajectoryErrorStats:
    """Error statistics over the frames tracked in both trajectories."""
    if a.frames() != b.frames():
        only_a = sorted(set(a.frames()) - set(b.frames()))
        only_b = sorted(set(b.frames()) - set(a.frames()))
        raise FrameSetMismatch(f"frame sets differ: only in a {only_a}, only in b {only_b}")
    t_sq = []
    rot = []
    for (_, pa), (_, pb) in zip(a.entries, b.entries):
        if pa.status is PoseStatus.TRACKED and pb.status is PoseStatus.TRACKED:
            d = pa.translation - pb.translation
            t_sq.append(float(d @ d))
            rot.append(rotation_geodesic(pa.rotation, pb.rotation))
    if not t_sq:
        raise NoComparableFrames("no frame is tracked in both trajectories")
    return TrajectoryErrorStats(
        translation_rmse=math.sqrt(sum(t_sq) / len(t_sq)),
        rotation_mean=sum(rot) / len(rot),
        rotation_max=max(rot),
        frames_compared=len(t_sq),
    )


# -- trajectory files ----------------------------------------------------

def trajectory_to_jsonl(traj: PoseTrajectory) -> str:
    lines = []
    for frame, pose in traj.entries:
        rec = {"frame": frame, **pose.to_dict()}
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def load_trajectory_jsonl(path: str | Path, sequence_id: str = "",
                          label: str = "") -> PoseTrajectory:
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        entries.append((int(rec["frame"]), Pose.from_dict(rec)))
    return PoseTrajectory(sequence_id=sequence_id, label=label, entries=tuple(entries))


def trajectory_to_csv(traj: PoseTrajectory) -> str:
    """Flat per-frame table for plotting; orientation as Z-Y-X Euler degrees."""
    from .geometry3d import euler_zyx

    lines = ["frame,status,confidence,tx,ty,tz,yaw_deg,pitch_deg,roll_deg"]
    for frame, pose in traj.entries:
        yaw, pitch, roll = (math.degrees(x) for x in euler_zyx(pose.rotation))
        t = pose.translation
        lines.append(f"{frame},{pose.status.value},{pose.confidence!r},"
                     f"{t[0]!r},{t[1]!r},{t[2]!r},"
                     f"{yaw:.6f},{pitch:.6f},{roll:.6f}")
    return "\n".join(lines) + "\n"
