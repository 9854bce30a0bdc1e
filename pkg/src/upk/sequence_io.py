"""Sequence artifact model: manifests, masks, depth maps, intrinsics.

On-disk layout for a sequence directory:

    <seq>/manifest.json
    <seq>/masks/<label>/<frame:06d>.png     8-bit grayscale, >127 = object
    <seq>/gt/<label>/<frame:06d>.png        same encoding, optional
    <seq>/depth/<frame:06d>.png             16-bit grayscale, meters = value * depth_scale
    <seq>/rgb/<frame:06d>.png               optional, never read by computation

All loaded artifacts are immutable and safe to share between threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    ConsistencyError,
    DecodeError,
    DimensionMismatch,
    ParseError,
    ScaleError,
    SchemaError,
)

DEFAULT_MAX_DEPTH = 10.0  # meters; valid measurements must fall in (0, max_depth)

MASK_THRESHOLD = 127  # 8-bit value; strictly greater means "object"


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters; pixel coordinates are x-right, y-down."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
        if not all(np.isfinite(v) for v in vals):
            raise SchemaError("intrinsics", "intrinsics: all values must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise SchemaError("intrinsics", "intrinsics: fx and fy must be > 0")
        if self.width < 1 or self.height < 1:
            raise SchemaError("intrinsics", "intrinsics: width and height must be >= 1")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True, eq=False)
class BitMask:
    """Per-pixel boolean raster; True = object."""

    bits: np.ndarray  # bool, shape (height, width)

    def __post_init__(self):
        if self.bits.ndim != 2 or self.bits.dtype != np.bool_:
            raise DecodeError("mask raster must be a 2-D boolean array")
        _freeze(self.bits)

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        """Number of set bits."""
        return int(np.count_nonzero(self.bits))


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel metric depth in meters; 0 or non-finite = missing measurement."""

    depth: np.ndarray  # float64, shape (height, width)

    def __post_init__(self):
        if self.depth.ndim != 2 or self.depth.dtype != np.float64:
            raise DecodeError("depth raster must be a 2-D float64 array")
        _freeze(self.depth)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def valid(self) -> np.ndarray:
        """Boolean raster of pixels carrying a real measurement."""
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass(frozen=True)
class FrameEntry:
    """Per-frame artifact paths, relative to the manifest's directory."""

    frame: int
    depth: str
    masks: dict[str, str]
    gt_masks: dict[str, str] = field(default_factory=dict)
    rgb: str | None = None


@dataclass(frozen=True)
class SequenceManifest:
    sequence_id: str
    frame_count: int
    object_labels: tuple[str, ...]
    intrinsics: CameraIntrinsics
    depth_scale: float
    frames: tuple[FrameEntry, ...]
    root: Path  # directory all relative paths resolve against
    timestamps: tuple[float, ...] | None = None  # optional, no defined semantics

    def resolve(self, rel: str) -> Path:
        return self.root / rel

    def entry(self, frame: int) -> FrameEntry:
        return self.frames[frame]

    def to_document(self) -> dict:
        """The JSON-serializable manifest document (root excluded: it is
        implied by the file's location)."""
        doc: dict = {
            "sequence_id": self.sequence_id,
            "frame_count": self.frame_count,
            "object_labels": list(self.object_labels),
            "intrinsics": self.intrinsics.to_dict(),
            "depth_scale": self.depth_scale,
            "frames": [],
        }
        for e in self.frames:
            rec: dict = {"frame": e.frame, "depth": e.depth, "masks": dict(e.masks)}
            if e.gt_masks:
                rec["gt_masks"] = dict(e.gt_masks)
            if e.rgb is not None:
                rec["rgb"] = e.rgb
            doc["frames"].append(rec)
        if self.timestamps is not None:
            doc["timestamps"] = list(self.timestamps)
        return doc


@dataclass(frozen=True)
class Issue:
    """One validation finding; severity is 'error' or 'warning'."""

    frame: int  # -1 for sequence-level issues
    severity: str
    message: str


# -- manifest parsing ----------------------------------------------------

_MANIFEST_FIELDS = {"sequence_id", "frame_count", "object_labels", "intrinsics",
                    "depth_scale", "frames", "timestamps"}
_INTRINSICS_FIELDS = {"fx", "fy", "cx", "cy", "width", "height"}
_FRAME_FIELDS = {"frame", "depth", "masks", "gt_masks", "rgb"}


def _require(doc: dict, key: str, kind, where: str):
    if key not in doc:
        raise SchemaError(f"{where}{key}", f"missing required field {where}{key}")
    val = doc[key]
    if kind is float:
        if not isinstance(val, (int, float)) or isinstance(val, bool):
            raise SchemaError(f"{where}{key}", f"field {where}{key} must be a number")
        return float(val)
    if kind is int:
        if not isinstance(val, int) or isinstance(val, bool):
            raise SchemaError(f"{where}{key}", f"field {where}{key} must be an integer")
        return val
    if not isinstance(val, kind):
        raise SchemaError(f"{where}{key}",
                          f"field {where}{key} must be {kind.__name__}")
    return val


def _reject_unknown(doc: dict, allowed: set[str], where: str):
    unknown = set(doc) - allowed
    if unknown:
        name = sorted(unknown)[0]
        raise SchemaError(f"{where}{name}", f"unknown field {where}{name}")


def parse_manifest(doc: dict, root: Path, *, sequence_id_hint: str | None = None) -> SequenceManifest:
    """Build a validated SequenceManifest from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise SchemaError("<root>", "manifest document must be a JSON object")
    _reject_unknown(doc, _MANIFEST_FIELDS, "")

    sequence_id = _require(doc, "sequence_id", str, "")
    frame_count = _require(doc, "frame_count", int, "")
    labels_raw = _require(doc, "object_labels", list, "")
    if not labels_raw or not all(isinstance(x, str) for x in labels_raw):
        raise SchemaError("object_labels", "object_labels must be a nonempty list of strings")
    if len(set(labels_raw)) != len(labels_raw):
        raise SchemaError("object_labels", "object_labels contains duplicates")
    labels = tuple(labels_raw)

    intr_doc = _require(doc, "intrinsics", dict, "")
    _reject_unknown(intr_doc, _INTRINSICS_FIELDS, "intrinsics.")
    intrinsics = CameraIntrinsics(
        fx=_require(intr_doc, "fx", float, "intrinsics."),
        fy=_require(intr_doc, "fy", float, "intrinsics."),
        cx=_require(intr_doc, "cx", float, "intrinsics."),
        cy=_require(intr_doc, "cy", float, "intrinsics."),
        width=_require(intr_doc, "width", int, "intrinsics."),
        height=_require(intr_doc, "height", int, "intrinsics."),
    )

    depth_scale = _require(doc, "depth_scale", float, "")
    if not np.isfinite(depth_scale) or depth_scale <= 0:
        raise ScaleError(f"depth_scale must be > 0, got {depth_scale}")

    frames_raw = _require(doc, "frames", list, "")
    entries: list[FrameEntry] = []
    for rec in frames_raw:
        if not isinstance(rec, dict):
            raise SchemaError("frames", "frames entries must be objects")
        _reject_unknown(rec, _FRAME_FIELDS, "frames[].")
        idx = _require(rec, "frame", int, "frames[].")
        depth_path = _require(rec, "depth", str, "frames[].")
        masks = _require(rec, "masks", dict, "frames[].")
        for label in labels:
            if label not in masks:
                raise SchemaError(f"frames[].masks.{label}",
                                  f"frame {idx}: missing mask path for label {label!r}")
        unknown_mask_labels = set(masks) - set(labels)
        if unknown_mask_labels:
            raise SchemaError("frames[].masks",
                              f"frame {idx}: mask for undeclared label "
                              f"{sorted(unknown_mask_labels)[0]!r}")
        gt_masks = rec.get("gt_masks", {})
        if not isinstance(gt_masks, dict):
            raise SchemaError("frames[].gt_masks", "gt_masks must be an object")
        unknown_gt = set(gt_masks) - set(labels)
        if unknown_gt:
            raise SchemaError("frames[].gt_masks",
                              f"frame {idx}: gt mask for undeclared label "
                              f"{sorted(unknown_gt)[0]!r}")
        rgb = rec.get("rgb")
        if rgb is not None and not isinstance(rgb, str):
            raise SchemaError("frames[].rgb", "rgb must be a string path")
        entries.append(FrameEntry(frame=idx, depth=depth_path,
                                  masks={k: str(v) for k, v in masks.items()},
                                  gt_masks={k: str(v) for k, v in gt_masks.items()},
                                  rgb=rgb))

    # frame indices must be exactly 0..frame_count-1
    seen: set[int] = set()
    for e in entries:
        if e.frame in seen:
            raise ConsistencyError(f"duplicate frame index {e.frame}")
        seen.add(e.frame)
    for i in range(frame_count):
        if i not in seen:
            raise ConsistencyError(f"gap in frame indices: missing frame {i}")
    extra = seen - set(range(frame_count))
    if extra:
        raise ConsistencyError(f"frame index {sorted(extra)[0]} outside 0..{frame_count - 1}")
    entries.sort(key=lambda e: e.frame)

    # every referenced file must be unique
    referenced: set[str] = set()
    for e in entries:
        for p in [e.depth, *e.masks.values(), *e.gt_masks.values()] + ([e.rgb] if e.rgb else []):
            if p in referenced:
                raise ConsistencyError(f"file referenced more than once: {p}")
            referenced.add(p)

    timestamps = None
    if "timestamps" in doc:
        ts = doc["timestamps"]
        if (not isinstance(ts, list) or len(ts) != frame_count
                or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in ts)):
            raise SchemaError("timestamps",
                              "timestamps must be a list of numbers, one per frame")
        timestamps = tuple(float(x) for x in ts)

    if sequence_id_hint is not None and sequence_id != sequence_id_hint:
        pass  # ids are informational; directory name never has to match

    return SequenceManifest(
        sequence_id=sequence_id,
        frame_count=frame_count,
        object_labels=labels,
        intrinsics=intrinsics,
        depth_scale=depth_scale,
        frames=tuple(entries),
        root=root,
        timestamps=timestamps,
    )


def load_manifest(path: str | Path) -> SequenceManifest:
    """Load and validate <seq>/manifest.json."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read manifest {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest {path} is not valid JSON: {exc}") from exc
    return parse_manifest(doc, root=path.parent)


def save_manifest(manifest: SequenceManifest, path: str | Path) -> None:
    """Write the manifest document atomically (temp file + rename)."""
    path = Path(path)
    text = json.dumps(manifest.to_document(), indent=2, sort_keys=True) + "\n"
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


# -- raster loading ------------------------------------------------------

def _open_image(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
        return img
    except FileNotFoundError:
        raise
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from exc


def load_mask(path: str | Path, expected: tuple[int, int]) -> BitMask:
    """Load an 8-bit grayscale PNG as a BitMask.

    expected is (width, height). Pixel values > 127 map to True.
    """
    path = Path(path)
    img = _open_image(path)
    if img.mode != "L":
        raise DecodeError(f"mask {path} must be 8-bit single-channel, got mode {img.mode!r}")
    if img.size != tuple(expected):
        raise DimensionMismatch(
            f"mask {path}: size {img.size[0]}x{img.size[1]}, expected {expected[0]}x{expected[1]}")
    arr = np.asarray(img, dtype=np.uint8)
    return BitMask(bits=arr > MASK_THRESHOLD)


def write_mask(mask: BitMask, path: str | Path) -> None:
    """Encode a BitMask as an 8-bit grayscale PNG (255 = object), atomically."""
    path = Path(path)
    arr = np.where(mask.bits, np.uint8(255), np.uint8(0))
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(arr).save(tmp, format="PNG")
    tmp.replace(path)


def load_depth(path: str | Path, scale: float, expected: tuple[int, int]) -> DepthMap:
    """Load a 16-bit grayscale PNG as metric depth.

    Stored integer u maps to u * scale meters; u = 0 means missing.
    """
    if not np.isfinite(scale) or scale <= 0:
        raise ScaleError(f"depth scale must be > 0, got {scale}")
    path = Path(path)
    img = _open_image(path)
    if img.mode not in ("I", "I;16"):
        raise DecodeError(f"depth {path} must be 16-bit single-channel, got mode {img.mode!r}")
    if img.size != tuple(expected):
        raise DimensionMismatch(
            f"depth {path}: size {img.size[0]}x{img.size[1]}, expected {expected[0]}x{expected[1]}")
    stored = np.asarray(img, dtype=np.int64)
    if stored.min() < 0 or stored.max() > 65535:
        raise DecodeError(f"depth {path}: stored values outside the 16-bit range")
    return DepthMap(depth=stored.astype(np.float64) * float(scale))


def load_depth_raw(path: str | Path, expected: tuple[int, int]) -> np.ndarray:
    """The stored 16-bit integers, unscaled (for byte-level checks)."""
    img = _open_image(Path(path))
    if img.mode not in ("I", "I;16"):
        raise DecodeError(f"depth {path} must be 16-bit single-channel, got mode {img.mode!r}")
    if img.size != tuple(expected):
        raise DimensionMismatch(
            f"depth {path}: size {img.size[0]}x{img.size[1]}, expected {expected[0]}x{expected[1]}")
    return np.asarray(img, dtype=np.uint16)


def write_depth_raw(stored: np.ndarray, path: str | Path) -> None:
    """Write 16-bit integers as a single-channel PNG, atomically."""
    if stored.ndim != 2:
        raise DecodeError("depth raster must be 2-D")
    if stored.dtype != np.uint16:
        if stored.min() < 0 or stored.max() > 65535:
            raise DecodeError("depth values outside the 16-bit range")
        stored = stored.astype(np.uint16)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    Image.fromarray(stored).save(tmp, format="PNG")  # uint16 -> 16-bit grayscale
    tmp.replace(path)


# -- sequence validation -------------------------------------------------

def validate_sequence(manifest: SequenceManifest,
                      max_depth: float = DEFAULT_MAX_DEPTH) -> list[Issue]:
    """Check that every referenced file exists, decodes, matches the declared
    dimensions, and that depth values stay inside (0, max_depth).

    Issues are data, not failures: the list is empty iff the sequence is clean.
    """
    issues: list[Issue] = []
    dims = (manifest.intrinsics.width, manifest.intrinsics.height)

    for e in manifest.frames:
        for label, rel in sorted(e.masks.items()):
            _check_mask(manifest.resolve(rel), dims, e.frame, f"mask[{label}]", issues)
        for label, rel in sorted(e.gt_masks.items()):
            _check_mask(manifest.resolve(rel), dims, e.frame, f"gt[{label}]", issues)
        _check_depth(manifest.resolve(e.depth), manifest.depth_scale, dims,
                     max_depth, e.frame, issues)
        if e.rgb is not None:
            _check_rgb(manifest.resolve(e.rgb), dims, e.frame, issues)
    return issues


def _check_mask(path: Path, dims, frame: int, what: str, issues: list[Issue]):
    try:
        load_mask(path, dims)
    except FileNotFoundError:
        issues.append(Issue(frame, "error", f"{what}: file missing: {path.name}"))
    except (DecodeError, DimensionMismatch) as exc:
        issues.append(Issue(frame, "error", f"{what}: {exc}"))


def _check_depth(path: Path, scale: float, dims, max_depth: float,
                 frame: int, issues: list[Issue]):
    try:
        dm = load_depth(path, scale, dims)
    except FileNotFoundError:
        issues.append(Issue(frame, "error", f"depth: file missing: {path.name}"))
        return
    except (DecodeError, DimensionMismatch) as exc:
        issues.append(Issue(frame, "error", f"depth: {exc}"))
        return
    valid = dm.valid
    if np.any(dm.depth[valid] >= max_depth):
        worst = float(dm.depth[valid].max())
        issues.append(Issue(frame, "warning",
                            f"depth: value {worst:.3f} m beyond max depth {max_depth} m"))


def _check_rgb(path: Path, dims, frame: int, issues: list[Issue]):
    try:
        img = _open_image(path)
    except FileNotFoundError:
        issues.append(Issue(frame, "error", f"rgb: file missing: {path.name}"))
        return
    except DecodeError as exc:
        issues.append(Issue(frame, "error", f"rgb: {exc}"))
        return
    if img.mode != "RGB":
        issues.append(Issue(frame, "error", f"rgb: {path.name} must be 3-channel, got {img.mode!r}"))
    elif img.size != tuple(dims):
        issues.append(Issue(frame, "error",
                            f"rgb: {path.name} size {img.size[0]}x{img.size[1]}, "
                            f"expected {dims[0]}x{dims[1]}"))


# -- layout helpers ------------------------------------------------------

def mask_relpath(label: str, frame: int) -> str:
    return f"masks/{label}/{frame:06d}.png"


def gt_relpath(label: str, frame: int) -> str:
    return f"gt/{label}/{frame:06d}.png"


def depth_relpath(frame: int) -> str:
    return f"depth/{frame:06d}.png"


def rgb_relpath(frame: int) -> str:
    return f"rgb/{frame:06d}.png"
