"""Pinhole backprojection, masked point clouds, rigid registration, rotation metrics.

Camera coordinates are x-right, y-down, z-forward (matching the pixel raster);
translations are meters. Rotations are 3x3 row-major matrices, orthonormal with
det = +1 within ROTATION_TOL.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGeometry,
    DimensionMismatch,
    NonPositiveDepth,
    NotARotation,
    TooFewPoints,
)
from .sequence_io import BitMask, CameraIntrinsics, DepthMap

ROTATION_TOL = 1e-9
EIGENGAP_REL_TOL = 1e-9  # top-two eigenvalue gap below this (x largest) is a tie


class PoseStatus(str, enum.Enum):
    TRACKED = "tracked"
    HELD = "held"
    LOST = "lost"


def is_rotation(r: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    r = np.asarray(r, dtype=np.float64)
    if r.shape != (3, 3) or not np.all(np.isfinite(r)):
        return False
    if np.abs(r.T @ r - np.eye(3)).max() > tol:
        return False
    return abs(np.linalg.det(r) - 1.0) <= tol


def _check_rotation(r: np.ndarray, tol: float = ROTATION_TOL) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if not is_rotation(r, tol):
        raise NotARotation("matrix is not orthonormal with det +1 within tolerance")
    return r


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # float64, shape (n, 3)
    source_frame: int | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DimensionMismatch("point cloud must have shape (n, 3)")
        if pts.size and not np.all(np.isfinite(pts)):
            raise DimensionMismatch("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)
        pts.flags.writeable = False

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "PointCloud":
        return PointCloud(points=self.points @ np.asarray(rotation).T
                          + np.asarray(translation, dtype=np.float64),
                          source_frame=self.source_frame)


@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray     # (3, 3)
    translation: np.ndarray  # (3,)
    status: PoseStatus = PoseStatus.TRACKED
    confidence: float = 1.0

    def __post_init__(self):
        r = _check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(t)):
            raise NotARotation("translation contains non-finite values")
        if not (0.0 <= self.confidence <= 1.0):
            raise NotARotation(f"confidence must be in [0,1], got {self.confidence}")
        if self.status in (PoseStatus.HELD, PoseStatus.LOST) and self.confidence != 0.0:
            raise NotARotation(f"{self.status.value} pose must have confidence 0")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)
        r.flags.writeable = False
        t.flags.writeable = False

    def with_status(self, status: PoseStatus, confidence: float) -> "Pose":
        return Pose(rotation=self.rotation, translation=self.translation,
                    status=status, confidence=confidence)

    def to_dict(self) -> dict:
        return {
            "rotation": [float(x) for x in self.rotation.reshape(-1)],
            "translation": [float(x) for x in self.translation],
            "status": self.status.value,
            "confidence": float(self.confidence),
        }

    @staticmethod
    def from_dict(d: dict) -> "Pose":
        return Pose(rotation=np.array(d["rotation"], dtype=np.float64).reshape(3, 3),
                    translation=np.array(d["translation"], dtype=np.float64),
                    status=PoseStatus(d["status"]),
                    confidence=float(d["confidence"]))


# -- rigid transform algebra ---------------------------------------------

def compose(r1: np.ndarray, t1: np.ndarray, r2: np.ndarray, t2: np.ndarray):
    """(r1,t1) after (r2,t2): first apply (r2,t2), then (r1,t1)."""
    return r1 @ r2, r1 @ np.asarray(t2, dtype=np.float64) + np.asarray(t1, dtype=np.float64)


def invert(r: np.ndarray, t: np.ndarray):
    rt = np.asarray(r, dtype=np.float64).T
    return rt, -rt @ np.asarray(t, dtype=np.float64)


# -- pinhole model -------------------------------------------------------

def backproject(u: float, v: float, z: float, k: CameraIntrinsics) -> np.ndarray:
    """Lift pixel (u, v) with depth z to camera coordinates."""
    if not (z > 0):
        raise NonPositiveDepth(f"depth must be > 0, got {z}")
    if not (np.isfinite(u) and np.isfinite(v)):
        raise NonPositiveDepth("pixel coordinates must be finite")
    return np.array([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])


def project(p: np.ndarray, k: CameraIntrinsics) -> tuple[float, float, float]:
    """Camera-space point to (u, v, z)."""
    x, y, z = np.asarray(p, dtype=np.float64).reshape(3)
    if not (z > 0):
        raise NonPositiveDepth(f"point depth must be > 0, got {z}")
    return (k.fx * x / z + k.cx, k.fy * y / z + k.cy, z)


def mask_to_cloud(mask: BitMask, depth: DepthMap, k: CameraIntrinsics,
                  stride: int = 1) -> PointCloud:
    """Backproject every stride-th masked pixel that has valid depth.

    Pixels are visited in row-major order; the point order is deterministic.
    """
    if stride < 1:
        raise DimensionMismatch(f"stride must be >= 1, got {stride}")
    if (mask.width, mask.height) != (depth.width, depth.height):
        raise DimensionMismatch("mask and depth dimensions differ")
    if (mask.width, mask.height) != (k.width, k.height):
        raise DimensionMismatch("mask dimensions differ from intrinsics")

    usable = mask.bits & depth.valid
    flat = np.flatnonzero(usable.reshape(-1))[::stride]
    if flat.size == 0:
        return PointCloud(points=np.empty((0, 3)))
    v, u = np.divmod(flat, mask.width)
    z = depth.depth.reshape(-1)[flat]
    x = (u - k.cx) * z / k.fx
    y = (v - k.cy) * z / k.fy
    return PointCloud(points=np.column_stack([x, y, z]))


# -- registration --------------------------------------------------------

def kabsch(src: PointCloud, dst: PointCloud) -> Pose:
    """Least-squares rigid transform (R, t) minimizing sum ||R src_i + t - dst_i||^2.

    Solved by SVD of the cross-covariance with reflection correction so
    det(R) = +1. Confidence is 1/(1+RMSE).
    """
    a, b = src.points, dst.points
    if a.shape != b.shape:
        raise DimensionMismatch("source and destination clouds must be the same size")
    n = a.shape[0]
    if n < 3:
        raise TooFewPoints(f"registration needs >= 3 points, got {n}")

    ca, cb = a.mean(axis=0), b.mean(axis=0)
    h = (a - ca).T @ (b - cb)
    u, s, vt = np.linalg.svd(h)
    # a unique rotation needs cross-covariance rank >= 2
    if s[0] == 0.0 or s[1] <= s[0] * 1e-12:
        raise DegenerateGeometry("cross-covariance is rank-deficient "
                                 "(collinear or coincident points)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = cb - r @ ca

    residual = a @ r.T + t - b
    rmse = float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))
    return Pose(rotation=r, translation=t, status=PoseStatus.TRACKED,
                confidence=1.0 / (1.0 + rmse))


def _fix_sign(v: np.ndarray, start: int) -> np.ndarray:
    """Flip v so its first nonzero component, checked from index start on, is >= 0."""
    for i in range(3):
        c = v[(start + i) % 3]
        if c != 0.0:
            return -v if c < 0 else v
    return v


def pca_pose(cloud: PointCloud, prev: Pose | None = None, *,
             strict: bool = True) -> Pose:
    """Pose from the cloud's centroid and principal axes.

    Axis columns are ordered by descending eigenvalue. With prev given, each
    of the first two axes takes the sign that maximizes its dot product with
    the corresponding previous axis; without prev, the sign making the axis
    point along the matching camera axis (x for the first, y for the second).
    The third axis is the cross product of the first two, so det = +1.

    strict raises DegenerateGeometry when the top two eigenvalues are within
    EIGENGAP_REL_TOL of each other; otherwise the eigenvalue-descending,
    index-stable order is kept as a documented tie-break.
    """
    pts = cloud.points
    n = pts.shape[0]
    if n < 3:
        raise TooFewPoints(f"pca pose needs >= 3 points, got {n}")

    centroid = pts.mean(axis=0)
    centered = pts - centroid
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(-evals, kind="stable")
    evals = evals[order]
    evecs = evecs[:, order]

    if not np.isfinite(evals).all() or evals[0] <= 0.0:
        raise DegenerateGeometry("cloud points are coincident")
    if strict and (evals[0] - evals[1]) < EIGENGAP_REL_TOL * evals[0]:
        raise DegenerateGeometry(
            "top two principal axes are indistinguishable (isotropic cloud)")

    a1, a2 = evecs[:, 0], evecs[:, 1]
    if prev is not None:
        p1, p2 = prev.rotation[:, 0], prev.rotation[:, 1]
        if float(a1 @ p1) < 0:
            a1 = -a1
        if float(a2 @ p2) < 0:
            a2 = -a2
    else:
        a1 = _fix_sign(a1, 0)
        a2 = _fix_sign(a2, 1)
    a3 = np.cross(a1, a2)
    r = np.column_stack([a1, a2, a3])
    # eigh output is orthonormal to machine precision; renormalize defensively
    r = _orthonormalize(r)
    return Pose(rotation=r, translation=centroid, status=PoseStatus.TRACKED,
                confidence=1.0)


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] *= -1
        out = u @ vt
    return out


# -- rotation metrics ----------------------------------------------------

def rotation_geodesic(r1: np.ndarray, r2: np.ndarray) -> float:
    """Angle of the relative rotation, arccos((trace(r1' r2) - 1) / 2), in [0, pi].

    Small angles are evaluated through the equivalent arcsin form
    2 asin(||r1 - r2||_F / (2 sqrt 2)): the arccos form loses half the
    significant digits near zero and cannot resolve angles below ~1e-8.
    """
    r1 = _check_rotation(r1)
    r2 = _check_rotation(r2)
    c = (np.trace(r1.T @ r2) - 1.0) / 2.0
    if c > 0.5:  # angle < 60 degrees: use the well-conditioned branch
        fro = np.linalg.norm(r1 - r2)
        return float(2.0 * np.arcsin(min(1.0, fro / (2.0 * math.sqrt(2.0)))))
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def axis_angle(axis, angle: float) -> np.ndarray:
    """Rotation matrix for a rotation of angle radians about axis (Rodrigues)."""
    a = np.asarray(axis, dtype=np.float64).reshape(3)
    norm = np.linalg.norm(a)
    if norm == 0:
        raise NotARotation("axis must be nonzero")
    x, y, z = a / norm
    c, s = math.cos(angle), math.sin(angle)
    cc = 1.0 - c
    return np.array([
        [x * x * cc + c, x * y * cc - z * s, x * z * cc + y * s],
        [y * x * cc + z * s, y * y * cc + c, y * z * cc - x * s],
        [z * x * cc - y * s, z * y * cc + x * s, z * z * cc + c],
    ])


def rot_x(angle: float) -> np.ndarray:
    return axis_angle([1.0, 0.0, 0.0], angle)


def rot_y(angle: float) -> np.ndarray:
    return axis_angle([0.0, 1.0, 0.0], angle)


def rot_z(angle: float) -> np.ndarray:
    return axis_angle([0.0, 0.0, 1.0], angle)


def rotation_log(r: np.ndarray) -> np.ndarray:
    """Axis-angle vector (axis * angle) of r; angle in [0, pi).

    Not defined at exactly pi, which callers rule out (interpolation scripts
    keep consecutive keyframes under 90 degrees apart).
    """
    r = _check_rotation(r)
    angle = rotation_geodesic(np.eye(3), r)
    if angle < 1e-12:
        return np.zeros(3)
    if math.pi - angle < 1e-9:
        raise DegenerateGeometry("rotation log undefined near 180 degrees")
    w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return w * (angle / (2.0 * math.sin(angle)))


def slerp(r1: np.ndarray, r2: np.ndarray, alpha: float) -> np.ndarray:
    """Geodesic interpolation from r1 (alpha=0) to r2 (alpha=1)."""
    rel = _check_rotation(r1).T @ _check_rotation(r2)
    w = rotation_log(_orthonormalize(rel))
    angle = float(np.linalg.norm(w))
    if angle == 0.0:
        return np.array(r1, dtype=np.float64)
    return np.asarray(r1) @ axis_angle(w / angle, alpha * angle)


def euler_zyx(r: np.ndarray) -> tuple[float, float, float]:
    """(yaw, pitch, roll) for R = Rz(yaw) @ Ry(pitch) @ Rx(roll); display only."""
    r = _check_rotation(r)
    pitch = math.asin(max(-1.0, min(1.0, -r[2, 0])))
    if abs(r[2, 0]) < 1.0 - 1e-12:
        yaw = math.atan2(r[1, 0], r[0, 0])
        roll = math.atan2(r[2, 1], r[2, 2])
    else:  # gimbal lock: fold everything into yaw
        yaw = math.atan2(-r[0, 1], r[1, 1])
        roll = 0.0
    return yaw, pitch, roll


# -- export --------------------------------------------------------------

def cloud_to_xyz(cloud: PointCloud) -> str:
    """ASCII export, one "x y z" row per point, 9 significant digits."""
    return "".join(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n" for p in cloud.points)
