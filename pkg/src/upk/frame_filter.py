"""Select eating-relevant frames from per-frame detection label sets.

A frame passes the raw rule when it carries every required_all label and,
if required_any is nonempty, at least one of those. Hysteresis then bridges
short dropouts: any run of at most h consecutive failing frames flanked by
passing frames is kept too.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ParseError, SchemaError, UnknownLabel
from .sequence_io import FrameEntry, SequenceManifest

# Closest formalization of "faces with hands, spoon, and food": face and food
# must be present, plus at least one manipulator.
DEFAULT_REQUIRED_ALL = frozenset({"face", "food"})
DEFAULT_REQUIRED_ANY = frozenset({"hand", "spoon"})
DEFAULT_HYSTERESIS = 5


@dataclass(frozen=True)
class FrameLabels:
    frame: int
    labels: frozenset[str]


@dataclass(frozen=True)
class FilterRule:
    required_all: frozenset[str] = field(default_factory=frozenset)
    required_any: frozenset[str] = field(default_factory=frozenset)
    hysteresis: int = 0

    def __post_init__(self):
        if self.required_all & self.required_any:
            raise SchemaError("rule", "required_all and required_any must be disjoint")
        if self.hysteresis < 0:
            raise SchemaError("rule", "hysteresis must be >= 0")

    def matches(self, labels: frozenset[str]) -> bool:
        if not self.required_all <= labels:
            return False
        return not self.required_any or bool(self.required_any & labels)


def default_rule(hysteresis: int = DEFAULT_HYSTERESIS) -> FilterRule:
    return FilterRule(required_all=DEFAULT_REQUIRED_ALL,
                      required_any=DEFAULT_REQUIRED_ANY,
                      hysteresis=hysteresis)


def filter_frames(frames: list[FrameLabels], rule: FilterRule,
                  vocabulary: set[str] | None = None) -> list[int]:
    """Kept frame indices, strictly increasing.

    vocabulary defaults to the union of all observed label sets; the rule
    may only reference labels from it.
    """
    if any(b.frame <= a.frame for a, b in zip(frames, frames[1:])):
        raise ValueError("frames must be ordered by index")
    if vocabulary is None:
        vocabulary = set().union(*(f.labels for f in frames)) if frames else set()
    for label in sorted((rule.required_all | rule.required_any) - vocabulary):
        raise UnknownLabel(label)

    raw = [rule.matches(f.labels) for f in frames]
    kept = _bridge_gaps(raw, rule.hysteresis)
    return [f.frame for f, keep in zip(frames, kept) if keep]


def _bridge_gaps(raw: list[bool], h: int) -> list[bool]:
    """Keep raw passes, plus failing runs of length <= h flanked by passes."""
    kept = list(raw)
    if h <= 0:
        return kept
    i = 0
    n = len(raw)
    while i < n:
        if raw[i]:
            i += 1
            continue
        j = i
        while j < n and not raw[j]:
            j += 1
        run = j - i
        flanked = i > 0 and raw[i - 1] and j < n  # raw[j] is True when j < n
        if flanked and run <= h:
            for k in range(i, j):
                kept[k] = True
        i = j
    return kept


# -- file interfaces -----------------------------------------------------

def load_frame_labels(path: str | Path) -> list[FrameLabels]:
    """JSON lines, one object per frame: {"frame": i, "labels": [...]}."""
    path = Path(path)
    out: list[FrameLabels] = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: not valid JSON: {exc}") from exc
        if not isinstance(rec, dict) or "frame" not in rec or "labels" not in rec:
            raise SchemaError("frame/labels", f"{path}:{lineno}: need frame and labels")
        frame, labels = rec["frame"], rec["labels"]
        if not isinstance(frame, int) or isinstance(frame, bool):
            raise SchemaError("frame", f"{path}:{lineno}: frame must be an integer")
        if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
            raise SchemaError("labels", f"{path}:{lineno}: labels must be a list of strings")
        out.append(FrameLabels(frame=frame, labels=frozenset(labels)))
    out.sort(key=lambda f: f.frame)
    return out


def rewrite_manifest(manifest: SequenceManifest, kept: list[int]) -> SequenceManifest:
    """Drop excluded frames and renumber the survivors 0..k-1.

    File paths are untouched, so the rewritten manifest must live in the
    same directory as the original.
    """
    index = {f.frame: f for f in manifest.frames}
    missing = [k for k in kept if k not in index]
    if missing:
        raise SchemaError("kept", f"kept indices outside the sequence: {missing}")
    entries = tuple(replace(index[old], frame=new) for new, old in enumerate(kept))
    timestamps = None
    if manifest.timestamps is not None:
        timestamps = tuple(manifest.timestamps[old] for old in kept)
    return replace(manifest, frame_count=len(kept), frames=entries,
                   timestamps=timestamps)
