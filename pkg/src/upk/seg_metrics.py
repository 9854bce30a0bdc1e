"""Segmentation scoring: per-frame Dice/IoU, per-object aggregates, failure mining.

Set cardinalities are exact integers; the only floating-point step is the
final division, so scores are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    BadThreshold,
    DimensionMismatch,
    EmptyInput,
    FrameSetMismatch,
    MixedLabels,
)
from .sequence_io import BitMask

DEFAULT_DSC_THRESHOLD = 0.5
DEFAULT_AREA_JUMP_RATIO = 3.0


@dataclass(frozen=True)
class FrameScore:
    frame: int
    label: str
    dsc: float
    iou: float
    pred_area: int
    gt_area: int


@dataclass(frozen=True)
class AggregateScore:
    label: str
    frame_count: int
    mean_dsc: float
    mean_iou: float
    model_id: str


@dataclass(frozen=True)
class FailureFlag:
    """reason is one of low_dsc, area_discontinuity, empty_prediction;
    detail carries the offending value (dsc, area jump factor, or gt area)."""

    frame: int
    reason: str
    detail: float


def _counts(a: BitMask, b: BitMask) -> tuple[int, int, int]:
    if a.bits.shape != b.bits.shape:
        raise DimensionMismatch(
            f"mask dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}")
    inter = int(np.count_nonzero(a.bits & b.bits))
    return inter, a.area, b.area


def dice(a: BitMask, b: BitMask) -> float:
    """2|A∩B| / (|A|+|B|); 1.0 when both masks are empty."""
    inter, na, nb = _counts(a, b)
    if na + nb == 0:
        return 1.0
    return 2 * inter / (na + nb)


def iou(a: BitMask, b: BitMask) -> float:
    """|A∩B| / |A∪B|; 1.0 when both masks are empty."""
    inter, na, nb = _counts(a, b)
    union = na + nb - inter
    if union == 0:
        return 1.0
    return inter / union


def score_sequence(pred: Mapping[int, BitMask], gt: Mapping[int, BitMask],
                   label: str) -> list[FrameScore]:
    """One FrameScore per frame, ordered by frame index.

    pred and gt must cover identical frame index sets.
    """
    pred_idx, gt_idx = set(pred), set(gt)
    if pred_idx != gt_idx:
        only_pred = sorted(pred_idx - gt_idx)
        only_gt = sorted(gt_idx - pred_idx)
        raise FrameSetMismatch(
            f"frame sets differ: only in pred {only_pred}, only in gt {only_gt}")
    scores = []
    for f in sorted(pred_idx):
        p, g = pred[f], gt[f]
        scores.append(FrameScore(frame=f, label=label, dsc=dice(p, g), iou=iou(p, g),
                                 pred_area=p.area, gt_area=g.area))
    return scores


def aggregate(scores: list[FrameScore], model_id: str) -> AggregateScore:
    """Arithmetic means over all frames of a single label."""
    if not scores:
        raise EmptyInput("cannot aggregate an empty score list")
    labels = {s.label for s in scores}
    if len(labels) != 1:
        raise MixedLabels(f"scores mix labels: {sorted(labels)}")
    n = len(scores)
    return AggregateScore(
        label=scores[0].label,
        frame_count=n,
        mean_dsc=sum(s.dsc for s in scores) / n,
        mean_iou=sum(s.iou for s in scores) / n,
        model_id=model_id,
    )


def mine_failures(scores: list[FrameScore],
                  dsc_threshold: float = DEFAULT_DSC_THRESHOLD,
                  area_jump_ratio: float = DEFAULT_AREA_JUMP_RATIO) -> list[FailureFlag]:
    """Flag suspicious frames; a frame may carry multiple flags.

    low_dsc: dsc below dsc_threshold.
    area_discontinuity: predicted area changed from the previous frame by a
      factor outside [1/area_jump_ratio, area_jump_ratio].
    empty_prediction: predicted mask empty while ground truth is not.
    """
    if not (0.0 <= dsc_threshold <= 1.0):
        raise BadThreshold(f"dsc_threshold must be in [0,1], got {dsc_threshold}")
    if not (area_jump_ratio > 1.0):
        raise BadThreshold(f"area_jump_ratio must be > 1, got {area_jump_ratio}")
    if any(b.frame <= a.frame for a, b in zip(scores, scores[1:])):
        raise ValueError("scores must be ordered by frame")

    flags: list[FailureFlag] = []
    for i, s in enumerate(scores):
        if s.dsc < dsc_threshold:
            flags.append(FailureFlag(s.frame, "low_dsc", s.dsc))
        if i > 0:
            prev = scores[i - 1].pred_area
            cur = s.pred_area
            jump = _jump_factor(prev, cur)
            if jump > area_jump_ratio:
                flags.append(FailureFlag(s.frame, "area_discontinuity", jump))
        if s.pred_area == 0 and s.gt_area > 0:
            flags.append(FailureFlag(s.frame, "empty_prediction", float(s.gt_area)))
    return flags


def _jump_factor(prev: int, cur: int) -> float:
    """Symmetric area change factor, >= 1; inf when one side vanishes."""
    if prev == cur:
        return 1.0
    lo, hi = min(prev, cur), max(prev, cur)
    if lo == 0:
        return math.inf
    return hi / lo


# -- report rendering ----------------------------------------------------

CSV_HEADER = "frame,label,dsc,iou,pred_area,gt_area"


def scores_to_csv(scores: Iterable[FrameScore]) -> str:
    """Per-frame scores as CSV; floats keep full precision so the file
    round-trips exactly."""
    lines = [CSV_HEADER]
    for s in scores:
        lines.append(f"{s.frame},{s.label},{s.dsc!r},{s.iou!r},{s.pred_area},{s.gt_area}")
    return "\n".join(lines) + "\n"


def aggregate_table(aggregates: list[AggregateScore], fmt: str = "markdown") -> str:
    """Render aggregates with rows = labels and one mean-DSC column per model.

    Means are printed with 4 decimal places.
    """
    models: list[str] = []
    for a in aggregates:
        if a.model_id not in models:
            models.append(a.model_id)
    labels: list[str] = []
    for a in aggregates:
        if a.label not in labels:
            labels.append(a.label)
    cell: dict[tuple[str, str], AggregateScore] = {(a.label, a.model_id): a for a in aggregates}

    rows = []
    for label in labels:
        counts = {cell[(label, m)].frame_count for m in models if (label, m) in cell}
        count = counts.pop() if len(counts) == 1 else max(counts, default=0)
        vals = []
        for m in models:
            a = cell.get((label, m))
            vals.append(f"{a.mean_dsc:.4f}" if a is not None else "-")
        rows.append([label, str(count), *vals])

    header = ["Object", "Frames", *models]
    if fmt == "markdown":
        out = ["| " + " | ".join(header) + " |",
               "|" + "|".join("---" for _ in header) + "|"]
        out += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(out) + "\n"
    if fmt == "csv":
        out = [",".join(header)] + [",".join(r) for r in rows]
        return "\n".join(out) + "\n"
    raise ValueError(f"unknown table format {fmt!r}")
