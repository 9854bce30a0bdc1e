"""Adapter CLI; flag style mirrors the primary `upk` binary.

Exit codes: 0 success, 2 user/adapter error, 1 internal error.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click

from .engines import VOS_BACKENDS
from .errors import AdapterError
from .jobs import DEFAULT_PROMPTS, AdapterJob, extract_frames, run_job


def adapter_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except AdapterError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)

    return wrapper


@click.group()
def cli():
    """Wrap model runtimes and emit upk-conformant sequence directories."""


@cli.command()
@click.option("--frames", "frames_dir", type=click.Path(exists=True, file_okay=False),
              default=None, help="Directory of numbered frames.")
@click.option("--video", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Video file; frames are extracted first.")
@click.option("--stride", default=1, show_default=True,
              help="Keep every stride-th video frame.")
@click.option("--backend", type=click.Choice(list(VOS_BACKENDS)), default="cutie",
              show_default=True, help="VOS propagation backend.")
@click.option("--engine", type=click.Choice(["auto", "offline"]), default="auto",
              show_default=True,
              help="auto = real model runtimes; offline = deterministic stand-ins.")
@click.option("--prompts", default=",".join(DEFAULT_PROMPTS), show_default=True,
              help="Comma-separated detection prompts; one label per prompt.")
@click.option("--device", default="cpu", show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@adapter_errors
def run(frames_dir, video, stride, backend, engine, prompts, device, out_dir):
    """Run detection + VOS + depth and write a sequence directory."""
    if (frames_dir is None) == (video is None):
        raise click.UsageError("exactly one of --frames / --video is required")
    prompt_tuple = tuple(p.strip() for p in prompts.split(",") if p.strip())
    job = AdapterJob(source=Path(frames_dir or video), out_dir=Path(out_dir),
                     vos_backend=backend, prompts=prompt_tuple, engine=engine,
                     device=device, stride=stride)
    manifest = run_job(job)
    click.echo(f"manifest: {manifest}")


@cli.command("extract")
@click.option("--video", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--stride", default=1, show_default=True)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@adapter_errors
def extract(video, stride, out_dir):
    """Only decode video frames to numbered PNGs."""
    paths = extract_frames(video, out_dir, stride)
    click.echo(f"extracted {len(paths)} frames to {out_dir}")


def main():
    cli(prog_name="upk-adapt")


if __name__ == "__main__":
    main()
