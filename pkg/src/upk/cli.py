"""Command-line pipeline: validate, eval-masks, filter, track, synth, bench.

Exit codes: 0 success, 2 validation or user error, 1 internal error.
Report files are written atomically (temp file + rename). UPK_THREADS caps
per-frame parallelism; 0 or unset picks the CPU count.
"""

from __future__ import annotations

import functools
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from . import frame_filter, seg_metrics, sequence_io, synth_bench
from .errors import UpkError
from .pose_tracker import (
    GapPolicy,
    TrackerConfig,
    detect_flips,
    track_sequence,
    trajectory_to_csv,
    trajectory_to_jsonl,
)
from .sequence_io import BitMask, SequenceManifest, load_manifest
from .synth_bench import CorruptionSpec, OcclusionWindow, ShapeSpec


def thread_count() -> int:
    raw = os.environ.get("UPK_THREADS", "").strip()
    n = int(raw) if raw else 0
    return n if n > 0 else (os.cpu_count() or 1)


def parallel_map(fn, items):
    """Order-preserving map, threaded when UPK_THREADS allows."""
    items = list(items)
    workers = min(thread_count(), max(1, len(items)))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def write_text_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def user_errors(fn):
    """Map toolkit errors to exit code 2; real bugs keep crashing with 1."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except UpkError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
def cli():
    """Segmentation scoring, frame filtration and 6-DoF tracking for
    RGB-D eating-video sequences."""


# -- validate --------------------------------------------------------------


@cli.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--max-depth", default=sequence_io.DEFAULT_MAX_DEPTH, show_default=True,
              help="Valid depth upper bound in meters.")
@user_errors
def validate(manifest_path, max_depth):
    """Check every artifact a manifest references."""
    manifest = load_manifest(manifest_path)
    issues = sequence_io.validate_sequence(manifest, max_depth=max_depth)
    for issue in issues:
        click.echo(f"{issue.frame}: [{issue.severity}] {issue.message}")
    errors = [i for i in issues if i.severity == "error"]
    if errors:
        sys.exit(2)
    click.echo(f"ok: {manifest.frame_count} frames, "
               f"labels {list(manifest.object_labels)}, "
               f"{len(issues)} warning(s)")


# -- eval-masks --------------------------------------------------------------


def _parse_model_spec(specs: tuple[str, ...]) -> list[tuple[str, Path]]:
    out = []
    for spec in specs:
        if "=" not in spec:
            raise click.UsageError(f"--pred wants model=dir, got {spec!r}")
        model, path = spec.split("=", 1)
        out.append((model, Path(path)))
    return out


def _mask_path(root: Path, label: str, frame: int) -> Path:
    return root / label / f"{frame:06d}.png"


def _load_mask_set(manifest: SequenceManifest, label: str,
                   source: Path | None, use_gt: bool) -> dict[int, BitMask]:
    """Masks for every frame, from an external directory or the manifest."""
    dims = (manifest.intrinsics.width, manifest.intrinsics.height)

    def load_one(entry):
        if source is not None:
            path = _mask_path(source, label, entry.frame)
        else:
            rel = entry.gt_masks.get(label) if use_gt else entry.masks.get(label)
            if rel is None:
                raise UpkError(f"frame {entry.frame}: manifest has no "
                               f"{'gt ' if use_gt else ''}mask for {label!r}")
            path = manifest.resolve(rel)
        try:
            return entry.frame, sequence_io.load_mask(path, dims)
        except FileNotFoundError:
            raise UpkError(f"frame {entry.frame}: file missing: {path}") from None
        except UpkError as exc:
            raise UpkError(f"frame {entry.frame}: {exc}") from exc

    return dict(parallel_map(load_one, manifest.frames))


@cli.command("eval-masks")
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--pred", "preds", multiple=True, metavar="MODEL=DIR",
              help="Predicted mask tree (<dir>/<label>/<frame>.png); repeatable. "
                   "Default: the manifest's own masks.")
@click.option("--model-id", default="model", show_default=True,
              help="Model name when scoring the manifest's own masks.")
@click.option("--gt", "gt_dir", type=click.Path(file_okay=False), default=None,
              help="Ground-truth mask tree; default: the manifest's gt entries.")
@click.option("--label", "labels", multiple=True,
              help="Labels to score; default: all manifest labels.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--format", "fmt", type=click.Choice(["markdown", "csv", "json"]),
              default="markdown", show_default=True)
@click.option("--dsc-threshold", default=seg_metrics.DEFAULT_DSC_THRESHOLD,
              show_default=True)
@click.option("--area-jump-ratio", default=seg_metrics.DEFAULT_AREA_JUMP_RATIO,
              show_default=True)
@user_errors
def eval_masks(manifest_path, preds, model_id, gt_dir, labels, out_dir, fmt,
               dsc_threshold, area_jump_ratio):
    """Score predicted masks against ground truth and render the report table."""
    manifest = load_manifest(manifest_path)
    labels = list(labels) if labels else list(manifest.object_labels)
    for label in labels:
        if label not in manifest.object_labels:
            raise UpkError(f"label {label!r} not in manifest labels "
                           f"{list(manifest.object_labels)}")
    models = _parse_model_spec(preds) if preds else [(model_id, None)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    issues = sequence_io.validate_sequence(manifest)
    errors = [i for i in issues if i.severity == "error"]
    if errors:
        for i in errors:
            click.echo(f"{i.frame}: {i.message}", err=True)
        sys.exit(2)

    gt_sets = {label: _load_mask_set(manifest, label,
                                     Path(gt_dir) if gt_dir else None, use_gt=True)
               for label in labels}

    aggregates = []
    aggregates_nonempty = []
    for model, source in models:
        model_scores = []
        for label in labels:
            pred_set = _load_mask_set(manifest, label, source, use_gt=False)
            scores = seg_metrics.score_sequence(pred_set, gt_sets[label], label)
            model_scores.extend(scores)
            aggregates.append(seg_metrics.aggregate(scores, model))
            nonempty = [s for s in scores if s.gt_area > 0]
            if nonempty:
                aggregates_nonempty.append(seg_metrics.aggregate(nonempty, model))
        write_text_atomic(out / f"scores_{model}.csv",
                          seg_metrics.scores_to_csv(model_scores))
        flags = []
        for label in labels:
            per_label = [s for s in model_scores if s.label == label]
            flags.extend((label, f) for f in seg_metrics.mine_failures(
                per_label, dsc_threshold, area_jump_ratio))
        lines = ["label,frame,reason,detail"]
        lines += [f"{label},{f.frame},{f.reason},{f.detail!r}" for label, f in flags]
        write_text_atomic(out / f"failures_{model}.csv", "\n".join(lines) + "\n")

    if fmt == "json":
        doc = {
            "models": [m for m, _ in models],
            "labels": labels,
            "aggregates": [vars(a) for a in aggregates],
            "aggregates_nonempty_gt": [vars(a) for a in aggregates_nonempty],
        }
        report = json.dumps(doc, indent=2) + "\n"
        write_text_atomic(out / "report.json", report)
        click.echo(report, nl=False)
    else:
        table = seg_metrics.aggregate_table(aggregates, fmt)
        ext = "md" if fmt == "markdown" else "csv"
        body = table
        if aggregates_nonempty and fmt == "markdown":
            body += "\nNonempty-ground-truth frames only:\n\n"
            body += seg_metrics.aggregate_table(aggregates_nonempty, fmt)
        write_text_atomic(out / f"report.{ext}", body)
        click.echo(body, nl=False)


# -- filter ------------------------------------------------------------------


@cli.command("filter")
@click.option("--labels-file", required=True, type=click.Path(exists=True, dir_okay=False),
              help="JSON lines, one {frame, labels} object per frame.")
@click.option("--require-all", default="face,food", show_default=True,
              help="Comma list; every label must be present.")
@click.option("--require-any", default="hand,spoon", show_default=True,
              help="Comma list; at least one must be present (empty disables).")
@click.option("--hysteresis", default=frame_filter.DEFAULT_HYSTERESIS, show_default=True)
@click.option("--vocabulary", default=None,
              help="Comma list; default: labels observed in the file.")
@click.option("--manifest", "manifest_path", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Also rewrite this manifest to the kept frames.")
@click.option("--out", "out_dir", default=".", show_default=True,
              type=click.Path(file_okay=False))
@user_errors
def filter_cmd(labels_file, require_all, require_any, hysteresis, vocabulary,
               manifest_path, out_dir):
    """Keep eating-relevant frames; optionally rewrite a manifest to match."""

    def parse_set(text):
        return frozenset(x.strip() for x in text.split(",") if x.strip())

    rule = frame_filter.FilterRule(required_all=parse_set(require_all),
                                   required_any=parse_set(require_any),
                                   hysteresis=hysteresis)
    frames = frame_filter.load_frame_labels(labels_file)
    vocab = set(parse_set(vocabulary)) if vocabulary else None
    kept = frame_filter.filter_frames(frames, rule, vocab)

    out = Path(out_dir)
    write_text_atomic(out / "kept_indices.json", json.dumps(kept) + "\n")
    if manifest_path:
        manifest = load_manifest(manifest_path)
        rewritten = frame_filter.rewrite_manifest(manifest, kept)
        # must stay next to the original so relative paths keep resolving
        target = Path(manifest_path).with_name("manifest_filtered.json")
        sequence_io.save_manifest(rewritten, target)
        click.echo(f"filtered manifest: {target}")
    click.echo(f"kept {len(kept)} of {len(frames)} frames")


# -- track -------------------------------------------------------------------


def _tracker_options(fn):
    fn = click.option("--min-points", default=50, show_default=True)(fn)
    fn = click.option("--stride", default=2, show_default=True)(fn)
    fn = click.option("--gap-policy", type=click.Choice(["hold", "lost"]),
                      default="hold", show_default=True)(fn)
    fn = click.option("--max-hold-frames", default=30, show_default=True)(fn)
    fn = click.option("--flip-threshold", default=2.618, show_default=True,
                      help="Radians; orientation jumps past this are flips.")(fn)
    return fn


def _make_config(min_points, stride, gap_policy, max_hold_frames, flip_threshold):
    try:
        return TrackerConfig(min_points=min_points, stride=stride,
                             gap_policy=GapPolicy(gap_policy),
                             max_hold_frames=max_hold_frames,
                             flip_threshold=flip_threshold)
    except ValueError as exc:
        raise UpkError(str(exc)) from exc


def _histogram_line(traj) -> str:
    hist = traj.status_histogram()
    return ", ".join(f"{k}: {v}" for k, v in hist.items())


@cli.command()
@click.option("--manifest", "manifest_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--label", required=True)
@click.option("--use-gt", is_flag=True, help="Track the ground-truth masks instead.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_tracker_options
@user_errors
def track(manifest_path, label, use_gt, out_dir, **tracker_flags):
    """Estimate a 6-DoF pose per frame for one label."""
    cfg = _make_config(**tracker_flags)
    manifest = load_manifest(manifest_path)
    traj = track_sequence(manifest, label, cfg, use_gt=use_gt)
    flips = detect_flips(traj, cfg.flip_threshold)

    out = Path(out_dir)
    write_text_atomic(out / f"trajectory_{label}.jsonl", trajectory_to_jsonl(traj))
    write_text_atomic(out / f"trajectory_{label}.csv", trajectory_to_csv(traj))
    write_text_atomic(out / f"flips_{label}.json",
                      json.dumps({"threshold": cfg.flip_threshold,
                                  "frames": flips}) + "\n")
    click.echo(_histogram_line(traj))
    click.echo(f"flips: {flips}")


# -- synth -------------------------------------------------------------------


def _synth_options(fn):
    fn = click.option("--kind", type=click.Choice(["spoonoid", "box"]),
                      default="spoonoid", show_default=True)(fn)
    fn = click.option("--dims", default=None,
                      help="Comma triple; spoonoid: len,halfwidth,bowl_r; "
                           "box: w,h,d. Defaults per kind.")(fn)
    fn = click.option("--density", default=2.0e6, show_default=True,
                      help="Surface samples per square meter.")(fn)
    fn = click.option("--frames", default=120, show_default=True)(fn)
    fn = click.option("--seed", default=0, show_default=True)(fn)
    fn = click.option("--label", default="spoon", show_default=True)(fn)
    fn = click.option("--distance", default=0.55, show_default=True,
                      help="Nominal camera distance, meters.")(fn)
    fn = click.option("--script", "script_path", default=None,
                      type=click.Path(exists=True, dir_okay=False),
                      help="Keyframe script JSON; default: built-in eating motion.")(fn)
    fn = click.option("--width", default=640, show_default=True)(fn)
    fn = click.option("--height", default=480, show_default=True)(fn)
    fn = click.option("--fx", default=525.0, show_default=True)(fn)
    fn = click.option("--fy", default=525.0, show_default=True)(fn)
    fn = click.option("--cx", default=None, type=float, help="Default: (width-1)/2.")(fn)
    fn = click.option("--cy", default=None, type=float, help="Default: (height-1)/2.")(fn)
    fn = click.option("--depth-scale", default=synth_bench.DEFAULT_DEPTH_SCALE,
                      show_default=True)(fn)
    fn = click.option("--occlude", "occlusions", multiple=True,
                      metavar="START:END[:MODE[:CUT]]",
                      help="Occlusion window, frames inclusive; mode empty|half.")(fn)
    fn = click.option("--dilate", default=0, show_default=True,
                      help="Mask dilation in pixels; negative erodes.")(fn)
    fn = click.option("--depth-noise", default=0.0, show_default=True,
                      help="Gaussian depth noise sigma, meters.")(fn)
    fn = click.option("--dropout", default=0.0, show_default=True,
                      help="Fraction of valid depth pixels zeroed.")(fn)
    return fn


def _build_scene(kind, dims, density, frames, seed, label, distance, script_path,
                 width, height, fx, fy, cx, cy, depth_scale, occlusions, dilate,
                 depth_noise, dropout):
    if dims:
        dimensions = tuple(float(x) for x in dims.split(","))
    elif kind == "spoonoid":
        dimensions = (0.18, 0.008, 0.035)
    else:
        dimensions = (0.24, 0.08, 0.03)
    spec = ShapeSpec(kind=kind, dimensions=dimensions, sample_density=density)
    cloud = synth_bench.make_object_cloud(spec, seed)

    if script_path:
        script = synth_bench.load_script(script_path)
        if script.frame_count != frames:
            frames = script.frame_count
    else:
        script = synth_bench.eating_motion_script(frames, distance=distance)

    k = sequence_io.CameraIntrinsics(
        fx=fx, fy=fy,
        cx=cx if cx is not None else (width - 1) / 2,
        cy=cy if cy is not None else (height - 1) / 2,
        width=width, height=height)

    windows = []
    for text in occlusions:
        parts = text.split(":")
        if len(parts) < 2:
            raise UpkError(f"--occlude wants START:END[:MODE[:CUT]], got {text!r}")
        windows.append(OcclusionWindow(
            start=int(parts[0]), end=int(parts[1]),
            mode=parts[2] if len(parts) > 2 else "empty",
            cut=float(parts[3]) if len(parts) > 3 else 0.5))
    corruption = CorruptionSpec(occlusion_windows=tuple(windows),
                                mask_dilation=dilate,
                                depth_noise_sigma=depth_noise,
                                depth_dropout=dropout)
    return cloud, script, k, corruption, depth_scale, label, seed


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@_synth_options
@user_errors
def synth(out_dir, **scene_flags):
    """Render a synthetic sequence with known ground-truth poses."""
    cloud, script, k, corruption, depth_scale, label, seed = _build_scene(**scene_flags)
    out = Path(out_dir)
    manifest = synth_bench.render_sequence(cloud, script, k, corruption, seed, out,
                                           depth_scale=depth_scale, label=label)
    synth_bench.save_script(script, out / "script.json")
    click.echo(f"rendered {manifest.frame_count} frames to {out}")
    click.echo(f"manifest: {out / 'manifest.json'}")


# -- bench -------------------------------------------------------------------


def _run_bench_once(out, scene_flags, cfg):
    cloud, script, k, corruption, depth_scale, label, seed = _build_scene(**scene_flags)
    manifest = synth_bench.render_sequence(cloud, script, k, corruption, seed, out,
                                           depth_scale=depth_scale, label=label)
    synth_bench.save_script(script, out / "script.json")
    traj = track_sequence(manifest, label, cfg)
    stats = synth_bench.evaluate_run(traj, out / synth_bench.GT_TRAJECTORY_NAME)
    flips = detect_flips(traj, cfg.flip_threshold)

    dims = (k.width, k.height)
    dscs = []
    for e in manifest.frames:
        pred = sequence_io.load_mask(manifest.resolve(e.masks[label]), dims)
        gt = sequence_io.load_mask(manifest.resolve(e.gt_masks[label]), dims)
        dscs.append(seg_metrics.dice(pred, gt))
    mean_dsc = sum(dscs) / len(dscs)

    return {
        "frames": manifest.frame_count,
        "status_histogram": traj.status_histogram(),
        "mean_dsc": mean_dsc,
        "translation_rmse_m": stats.translation_rmse,
        "rotation_mean_rad": stats.rotation_mean,
        "rotation_max_rad": stats.rotation_max,
        "frames_compared": stats.frames_compared,
        "flips": flips,
    }, traj


def _print_bench(result):
    hist = result["status_histogram"]
    click.echo(", ".join(f"{k}: {v}" for k, v in hist.items()))
    click.echo(f"mean DSC (masks vs gt): {result['mean_dsc']:.4f}")
    click.echo(f"translation RMSE: {result['translation_rmse_m'] * 1e3:.4f} mm")
    click.echo(f"rotation mean: {math.degrees(result['rotation_mean_rad']):.4f} deg")
    click.echo(f"rotation max: {math.degrees(result['rotation_max_rad']):.4f} deg")
    click.echo(f"flips: {result['flips']}")


@cli.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable stats.")
@click.option("--sweep-dilation", default=None,
              help="Comma list of dilation levels; renders one variant per level "
                   "and tabulates DSC against pose error.")
@_synth_options
@_tracker_options
@user_errors
def bench(out_dir, as_json, sweep_dilation, min_points, stride, gap_policy,
          max_hold_frames, flip_threshold, **scene_flags):
    """Synthesize, track, and score a sequence end to end."""
    cfg = _make_config(min_points, stride, gap_policy, max_hold_frames, flip_threshold)
    out = Path(out_dir)

    if sweep_dilation is None:
        result, traj = _run_bench_once(out, scene_flags, cfg)
        write_text_atomic(out / "trajectory.jsonl", trajectory_to_jsonl(traj))
        if as_json:
            click.echo(json.dumps(result, indent=2))
        else:
            _print_bench(result)
        return

    levels = [int(x) for x in sweep_dilation.split(",") if x.strip()]
    rows = []
    for level in levels:
        flags = dict(scene_flags, dilate=level)
        result, _ = _run_bench_once(out / f"dilate_{level}", flags, cfg)
        rows.append({"dilation": level, "mean_dsc": result["mean_dsc"],
                     "translation_rmse_m": result["translation_rmse_m"],
                     "rotation_mean_rad": result["rotation_mean_rad"]})
    if as_json:
        click.echo(json.dumps(rows, indent=2))
    else:
        click.echo("dilation | mean_dsc | t_rmse_mm | rot_mean_deg")
        for r in rows:
            click.echo(f"{r['dilation']:8d} | {r['mean_dsc']:.4f}   | "
                       f"{r['translation_rmse_m'] * 1e3:9.4f} | "
                       f"{math.degrees(r['rotation_mean_rad']):12.4f}")


def main():
    cli(prog_name="upk")


if __name__ == "__main__":
    main()
