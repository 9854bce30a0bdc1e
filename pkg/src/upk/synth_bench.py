"""Synthetic RGB-D sequences with scripted ground-truth rigid trajectories.

Objects are sampled as surface point clouds, posed per frame by interpolating
a keyframe script, and splatted through a z-buffer at pixel resolution to
produce masks and 16-bit depth maps in the standard sequence layout, plus a
ground-truth trajectory file. Corruption operators (occlusion windows, mask
dilation/erosion, depth noise, depth dropout) model the failure modes the
tracker must survive; ground-truth masks are stored pre-corruption.

Everything is deterministic given (spec, script, corruption, seed).
"""

from __future__ import annotations

import json
import math
from bisect import bisect_right
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import sequence_io
from .errors import BadSpec, FrameSetMismatch, ObjectOutOfView, OutOfRange
from .geometry3d import (
    PointCloud,
    Pose,
    PoseStatus,
    compose,
    invert,
    is_rotation,
    rotation_geodesic,
    slerp,
)
from .pose_tracker import (
    PoseTrajectory,
    TrajectoryErrorStats,
    compare_trajectories,
    load_trajectory_jsonl,
    trajectory_to_jsonl,
)
from .sequence_io import (
    CameraIntrinsics,
    FrameEntry,
    SequenceManifest,
    depth_relpath,
    gt_relpath,
    mask_relpath,
    save_manifest,
)

DEFAULT_INTRINSICS = CameraIntrinsics(fx=525.0, fy=525.0, cx=319.5, cy=239.5,
                                      width=640, height=480)
DEFAULT_DEPTH_SCALE = 0.001  # 1 mm units
GT_TRAJECTORY_NAME = "gt_trajectory.jsonl"


SPOON_CAP_SLOPE = math.radians(35.0)  # max bowl surface slope; keeps every
# point visible (no self-occlusion) for view tilts well past the bench motions


@dataclass(frozen=True)
class ShapeSpec:
    """Surface to sample.

    box: axis-aligned, dimensions (w, h, d), all six faces.
    spoonoid: flat handle strip in the x-y plane (length x half-width) joined
    to a shallow spherical-cap bowl of the given rim radius, sagging toward +z.
    The elongation makes the first principal axis unambiguous, and the flat
    profile keeps the whole surface visible from the camera, so the tracked
    covariance is stable frame to frame.
    """

    kind: str  # "box" or "spoonoid"
    dimensions: tuple[float, ...]  # box: (w, h, d); spoonoid: (handle_len, handle_halfwidth, bowl_r)
    sample_density: float  # points per square meter

    def __post_init__(self):
        if self.kind not in ("box", "spoonoid"):
            raise BadSpec(f"unknown shape kind {self.kind!r}")
        if len(self.dimensions) != 3 or any(d <= 0 for d in self.dimensions):
            raise BadSpec(f"{self.kind} needs 3 positive dimensions, got {self.dimensions}")
        if self.sample_density <= 0:
            raise BadSpec("sample_density must be > 0")
        if self.kind == "spoonoid":
            handle_len, _, bowl_r = self.dimensions
            if handle_len <= bowl_r:
                raise BadSpec("spoonoid handle must be longer than the bowl radius")

    @property
    def surface_area(self) -> float:
        if self.kind == "box":
            w, h, d = self.dimensions
            return 2.0 * (w * h + w * d + h * d)
        handle_len, half_w, bowl_r = self.dimensions
        sphere_r = bowl_r / math.sin(SPOON_CAP_SLOPE)
        cap_h = sphere_r * (1.0 - math.cos(SPOON_CAP_SLOPE))
        return handle_len * 2.0 * half_w + 2.0 * math.pi * sphere_r * cap_h


def default_spoonoid(density: float = 2.0e6) -> ShapeSpec:
    return ShapeSpec(kind="spoonoid", dimensions=(0.18, 0.008, 0.035),
                     sample_density=density)


def make_object_cloud(spec: ShapeSpec, seed: int) -> PointCloud:
    """Deterministic uniform surface sampling; point count tracks
    sample_density * surface_area to within rounding."""
    rng = np.random.default_rng(seed)
    if spec.kind == "box":
        pts = _sample_box(rng, spec)
    else:
        pts = _sample_spoonoid(rng, spec)
    if pts.shape[0] < 4:
        raise BadSpec("sample_density too low: fewer than 4 surface points")
    return PointCloud(points=pts)


def _sample_box(rng, spec: ShapeSpec) -> np.ndarray:
    w, h, d = spec.dimensions
    # (normal axis, fixed coordinate, area) for the six faces
    faces = [(0, +w / 2, h * d), (0, -w / 2, h * d),
             (1, +h / 2, w * d), (1, -h / 2, w * d),
             (2, +d / 2, w * h), (2, -d / 2, w * h)]
    half = {0: (h / 2, d / 2), 1: (w / 2, d / 2), 2: (w / 2, h / 2)}
    chunks = []
    for axis, coord, area in faces:
        n = round(spec.sample_density * area)
        if n == 0:
            continue
        u_half, v_half = half[axis]
        uv = rng.uniform([-u_half, -v_half], [u_half, v_half], size=(n, 2))
        pts = np.empty((n, 3))
        pts[:, axis] = coord
        others = [i for i in range(3) if i != axis]
        pts[:, others[0]] = uv[:, 0]
        pts[:, others[1]] = uv[:, 1]
        chunks.append(pts)
    return np.concatenate(chunks, axis=0) if chunks else np.empty((0, 3))


def _sample_spoonoid(rng, spec: ShapeSpec) -> np.ndarray:
    handle_len, half_w, bowl_r = spec.dimensions
    sphere_r = bowl_r / math.sin(SPOON_CAP_SLOPE)
    cap_h = sphere_r * (1.0 - math.cos(SPOON_CAP_SLOPE))
    n_handle = round(spec.sample_density * handle_len * 2.0 * half_w)
    n_cap = round(spec.sample_density * 2.0 * math.pi * sphere_r * cap_h)

    chunks = []
    if n_handle:
        x = rng.uniform(0.0, handle_len, size=n_handle)
        y = rng.uniform(-half_w, half_w, size=n_handle)
        chunks.append(np.column_stack([x, y, np.zeros(n_handle)]))
    if n_cap:
        # uniform on the cap: cos(theta) uniform on [cos(slope), 1]
        cos_t = rng.uniform(math.cos(SPOON_CAP_SLOPE), 1.0, size=n_cap)
        sin_t = np.sqrt(1.0 - cos_t ** 2)
        phi = rng.uniform(0.0, 2.0 * math.pi, size=n_cap)
        center = np.array([handle_len + bowl_r, 0.0, cap_h - sphere_r])
        pts = center + sphere_r * np.column_stack(
            [sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])
        chunks.append(pts)  # apex at z = cap_h, rim in the handle plane z = 0
    return np.concatenate(chunks, axis=0) if chunks else np.empty((0, 3))


# -- trajectory scripts ----------------------------------------------------

@dataclass(frozen=True)
class TrajectoryScript:
    """Keyframed rigid motion; poses between keyframes are interpolated with
    linear translation and constant-angular-velocity rotation."""

    keyframes: tuple[tuple[int, np.ndarray, np.ndarray], ...]
    frame_count: int

    def __post_init__(self):
        if self.frame_count < 1:
            raise BadSpec("frame_count must be >= 1")
        if not self.keyframes:
            raise BadSpec("script needs at least one keyframe")
        frames = [f for f, _, _ in self.keyframes]
        if frames[0] != 0:
            raise BadSpec("first keyframe must be at frame 0")
        if frames[-1] != self.frame_count - 1:
            raise BadSpec("last keyframe must be at the final frame")
        if any(b <= a for a, b in zip(frames, frames[1:])):
            raise BadSpec("keyframe indices must be strictly increasing")
        normalized = []
        for f, r, t in self.keyframes:
            r = np.asarray(r, dtype=np.float64)
            t = np.asarray(t, dtype=np.float64).reshape(3)
            if not is_rotation(r):
                raise BadSpec(f"keyframe {f}: rotation is not orthonormal with det +1")
            normalized.append((f, r, t))
        for (fa, ra, _), (fb, rb, _) in zip(normalized, normalized[1:]):
            if rotation_geodesic(ra, rb) > math.pi / 2 + 1e-9:
                raise BadSpec(f"keyframes {fa}->{fb} rotate by more than 90 degrees")
        object.__setattr__(self, "keyframes", tuple(normalized))


def interpolate_pose(script: TrajectoryScript, frame: int) -> tuple[np.ndarray, np.ndarray]:
    """(rotation, translation) at the given frame; exact at keyframes."""
    if not (0 <= frame < script.frame_count):
        raise OutOfRange(f"frame {frame} outside 0..{script.frame_count - 1}")
    frames = [f for f, _, _ in script.keyframes]
    i = bisect_right(frames, frame) - 1
    fa, ra, ta = script.keyframes[i]
    if fa == frame:
        return ra.copy(), ta.copy()
    fb, rb, tb = script.keyframes[i + 1]
    alpha = (frame - fa) / (fb - fa)
    return slerp(ra, rb, alpha), (1.0 - alpha) * ta + alpha * tb


def script_to_document(script: TrajectoryScript) -> dict:
    return {
        "frame_count": script.frame_count,
        "keyframes": [
            {"frame": f, "rotation": [float(x) for x in r.reshape(-1)],
             "translation": [float(x) for x in t]}
            for f, r, t in script.keyframes
        ],
    }


def script_from_document(doc: dict) -> TrajectoryScript:
    try:
        kfs = tuple(
            (int(k["frame"]),
             np.array(k["rotation"], dtype=np.float64).reshape(3, 3),
             np.array(k["translation"], dtype=np.float64))
            for k in doc["keyframes"])
        return TrajectoryScript(keyframes=kfs, frame_count=int(doc["frame_count"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise BadSpec(f"malformed script document: {exc}") from exc


def eating_motion_script(frame_count: int, *, distance: float = 0.55) -> TrajectoryScript:
    """Default bench motion: a lift-tilt-return cycle in front of the camera.

    Tilts stay small and most of the turn happens about the viewing axis so
    the visible surface, and with it the tracked centroid, stays stable.
    """
    from .geometry3d import rot_x, rot_y, rot_z

    if frame_count < 4:
        raise BadSpec("eating motion needs at least 4 frames")
    f1, f2 = frame_count // 3, (2 * frame_count) // 3
    kfs = (
        (0, np.eye(3), np.array([0.010, 0.020, distance])),
        (f1, rot_z(math.radians(20.0)) @ rot_x(math.radians(2.0)),
         np.array([0.000, 0.008, distance - 0.030])),
        (f2, rot_z(math.radians(-12.0)) @ rot_y(math.radians(2.5)),
         np.array([0.012, -0.010, distance + 0.025])),
        (frame_count - 1, rot_z(math.radians(7.0)) @ rot_x(math.radians(-1.5)),
         np.array([0.002, 0.012, distance])),
    )
    return TrajectoryScript(keyframes=kfs, frame_count=frame_count)


# -- corruption ------------------------------------------------------------

@dataclass(frozen=True)
class OcclusionWindow:
    """Frames [start, end] (inclusive) where the mask is emptied ("empty")
    or clipped by a horizontal half-plane ("half": rows below cut * height
    are cleared, like an object dipping into soup)."""

    start: int
    end: int
    mode: str = "empty"
    cut: float = 0.5

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise BadSpec(f"bad occlusion window [{self.start}, {self.end}]")
        if self.mode not in ("empty", "half"):
            raise BadSpec(f"unknown occlusion mode {self.mode!r}")
        if not (0.0 <= self.cut <= 1.0):
            raise BadSpec("cut must be in [0, 1]")

    def covers(self, frame: int) -> bool:
        return self.start <= frame <= self.end


@dataclass(frozen=True)
class CorruptionSpec:
    occlusion_windows: tuple[OcclusionWindow, ...] = ()
    mask_dilation: int = 0  # pixels; negative erodes
    depth_noise_sigma: float = 0.0  # meters
    depth_dropout: float = 0.0  # fraction of valid pixels zeroed

    def __post_init__(self):
        if not (0.0 <= self.depth_dropout < 1.0):
            raise BadSpec("depth_dropout must be in [0, 1)")
        if self.depth_noise_sigma < 0.0:
            raise BadSpec("depth_noise_sigma must be >= 0")


def _shift_or(bits: np.ndarray) -> np.ndarray:
    padded = np.pad(bits, 1, mode="constant", constant_values=False)
    out = np.zeros_like(bits)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out |= padded[1 + dy:1 + dy + bits.shape[0], 1 + dx:1 + dx + bits.shape[1]]
    return out


def morph_mask(bits: np.ndarray, px: int) -> np.ndarray:
    """Dilate (px > 0) or erode (px < 0) with a 3x3 square element, |px| times."""
    out = bits.copy()
    for _ in range(abs(px)):
        out = _shift_or(out) if px > 0 else ~_shift_or(~out)
    return out


# -- rendering -------------------------------------------------------------

def render_sequence(cloud: PointCloud, script: TrajectoryScript,
                    k: CameraIntrinsics, corruption: CorruptionSpec, seed: int,
                    out: str | Path, *, depth_scale: float = DEFAULT_DEPTH_SCALE,
                    label: str = "object",
                    sequence_id: str | None = None) -> SequenceManifest:
    """Render per-frame masks + depth (+ pre-corruption ground truth masks and
    the scripted trajectory) into the standard layout under out/.

    Per frame: pose the cloud, project, z-buffer at pixel resolution, then
    corrupt in order occlusion -> dilation/erosion -> depth noise -> dropout.
    The manifest is written last, after all rasters are flushed.
    """
    out = Path(out)
    for win in corruption.occlusion_windows:
        if win.end >= script.frame_count:
            raise BadSpec(f"occlusion window [{win.start}, {win.end}] exceeds "
                          f"the {script.frame_count}-frame script")
    (out / "masks" / label).mkdir(parents=True, exist_ok=True)
    (out / "gt" / label).mkdir(parents=True, exist_ok=True)
    (out / "depth").mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    width, height = k.width, k.height
    entries = []
    truth_entries = []

    for f in range(script.frame_count):
        r, t = interpolate_pose(script, f)
        pts = cloud.points @ r.T + t
        covered_mask, stored = _splat(pts, k, depth_scale)

        occluded = any(w.covers(f) for w in corruption.occlusion_windows)
        if not covered_mask.any() and not occluded:
            raise ObjectOutOfView(f"frame {f}: no cloud point projects into the image")

        gt_bits = covered_mask
        bits = gt_bits.copy()
        for w in corruption.occlusion_windows:
            if w.covers(f):
                if w.mode == "empty":
                    bits[:] = False
                else:
                    bits[int(round(w.cut * height)):, :] = False
        if corruption.mask_dilation:
            bits = morph_mask(bits, corruption.mask_dilation)

        if corruption.depth_noise_sigma > 0.0:
            valid = stored > 0
            meters = stored[valid].astype(np.float64) * depth_scale
            meters += rng.normal(0.0, corruption.depth_noise_sigma, size=meters.shape)
            stored = stored.copy()
            stored[valid] = np.clip(np.rint(meters / depth_scale), 0, 65535).astype(np.uint16)
        if corruption.depth_dropout > 0.0:
            valid_idx = np.flatnonzero(stored.reshape(-1) > 0)
            n_drop = int(round(corruption.depth_dropout * valid_idx.size))
            if n_drop:
                drop = rng.choice(valid_idx, size=n_drop, replace=False)
                stored = stored.copy()
                stored.reshape(-1)[drop] = 0

        sequence_io.write_mask(sequence_io.BitMask(bits=bits),
                               out / mask_relpath(label, f))
        sequence_io.write_mask(sequence_io.BitMask(bits=gt_bits),
                               out / gt_relpath(label, f))
        sequence_io.write_depth_raw(stored, out / depth_relpath(f))

        entries.append(FrameEntry(frame=f, depth=depth_relpath(f),
                                  masks={label: mask_relpath(label, f)},
                                  gt_masks={label: gt_relpath(label, f)}))
        truth_entries.append((f, Pose(rotation=r, translation=t,
                                      status=PoseStatus.TRACKED, confidence=1.0)))

    truth = PoseTrajectory(sequence_id=sequence_id or out.name, label=label,
                           entries=tuple(truth_entries))
    gt_path = out / GT_TRAJECTORY_NAME
    tmp = gt_path.with_name(gt_path.name + ".tmp")
    tmp.write_text(trajectory_to_jsonl(truth), encoding="utf-8")
    tmp.replace(gt_path)

    manifest = SequenceManifest(
        sequence_id=sequence_id or out.name,
        frame_count=script.frame_count,
        object_labels=(label,),
        intrinsics=k,
        depth_scale=depth_scale,
        frames=tuple(entries),
        root=out,
    )
    save_manifest(manifest, out / "manifest.json")  # manifest-last commit order
    return manifest


def _splat(pts: np.ndarray, k: CameraIntrinsics, depth_scale: float):
    """Z-buffer the points at pixel resolution; returns (mask bits, u16 depth)."""
    width, height = k.width, k.height
    z = pts[:, 2]
    front = z > 0
    pts = pts[front]
    z = z[front]
    mask = np.zeros((height, width), dtype=bool)
    stored = np.zeros((height, width), dtype=np.uint16)
    if pts.size == 0:
        return mask, stored
    u = np.rint(k.fx * pts[:, 0] / z + k.cx).astype(np.int64)
    v = np.rint(k.fy * pts[:, 1] / z + k.cy).astype(np.int64)
    keep = (u >= 0) & (u < width) & (v >= 0) & (v < height)
    if not keep.any():
        return mask, stored
    u, v, z = u[keep], v[keep], z[keep]
    flat = v * width + u
    zbuf = np.full(width * height, np.inf)
    np.minimum.at(zbuf, flat, z)
    covered = np.isfinite(zbuf)
    quantized = np.zeros(width * height, dtype=np.uint16)
    quantized[covered] = np.clip(np.rint(zbuf[covered] / depth_scale),
                                 0, 65535).astype(np.uint16)
    # pixels whose depth quantizes to 0 alias to "missing"; drop them from the mask
    covered &= quantized > 0
    mask = covered.reshape(height, width)
    return mask, quantized.reshape(height, width)


# -- evaluation ------------------------------------------------------------

def evaluate_run(estimated: PoseTrajectory, truth_file: str | Path) -> TrajectoryErrorStats:
    """Compare a tracked trajectory against the scripted truth.

    The tracker's pose is defined up to a fixed offset in the object's own
    frame (its axes come from PCA), so the estimate is corrected by the
    body-frame transform estimate_0^-1 * truth_0 before comparison; stats
    cover the frames tracked in both.
    """
    truth_all = load_trajectory_jsonl(truth_file, label=estimated.label)
    by_frame = dict(truth_all.entries)
    missing = [f for f in estimated.frames() if f not in by_frame]
    if missing:
        raise FrameSetMismatch(f"truth file lacks frames {missing[:5]}"
                               + ("..." if len(missing) > 5 else ""))
    truth = PoseTrajectory(sequence_id=truth_all.sequence_id, label=truth_all.label,
                           entries=tuple((f, by_frame[f]) for f in estimated.frames()))

    est0 = estimated.entries[0][1]
    truth0 = truth.entries[0][1]
    inv_r, inv_t = invert(est0.rotation, est0.translation)
    k_r, k_t = compose(inv_r, inv_t, truth0.rotation, truth0.translation)

    corrected = []
    for f, p in estimated.entries:
        r, t = compose(p.rotation, p.translation, k_r, k_t)
        corrected.append((f, Pose(rotation=_renormalize(r), translation=t,
                                  status=p.status, confidence=p.confidence)))
    corrected_traj = PoseTrajectory(sequence_id=estimated.sequence_id,
                                    label=estimated.label, entries=tuple(corrected))
    return compare_trajectories(truth, corrected_traj)


def _renormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


def save_script(script: TrajectoryScript, path: str | Path) -> None:
    Path(path).write_text(json.dumps(script_to_document(script), indent=2) + "\n",
                          encoding="utf-8")


def load_script(path: str | Path) -> TrajectoryScript:
    return script_from_document(json.loads(Path(path).read_text(encoding="utf-8")))
