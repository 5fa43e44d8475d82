"""Command line entry points for running the pipeline and reporting on output."""

from __future__ import annotations

import dataclasses
import json
import sys

import click

from .dataset import DatasetError, RevisionSheet, read_records_jsonl, sample_and_split, select_bench_pool
from .pipeline import (
    STAGES,
    ConfigError,
    CorruptCheckpointError,
    PipelineConfig,
    PipelineError,
    render_stats_text,
    report_stats,
    run_pipeline,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3


@click.group()
def main():
    """Table-grounded QA data pipeline."""


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--stage", type=click.Choice(STAGES), default=None, help="Run up to and including this stage.")
@click.option("--resume", "resume_flag", is_flag=True, help="Reuse the checkpoint directory from a previous run.")
@click.option("--seed", type=int, default=None)
@click.option("--temperature", type=float, default=None)
@click.option("--self-distill", is_flag=True, help="Use the student model as its own trace teacher.")
@click.option("--mock", "mock_flag", is_flag=True, help="Force the deterministic offline provider.")
def run(config_path, stage, resume_flag, seed, temperature, self_distill, mock_flag):
    """Execute the pipeline described by a YAML config."""
    try:
        config = PipelineConfig.from_file(config_path)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)

    overrides = {}
    if seed is not None:
        overrides["seed"] = seed
    if temperature is not None:
        overrides["temperature"] = temperature
    if self_distill:
        overrides["self_distill"] = True
    if mock_flag:
        overrides["provider"] = {"mode": "mock"}
    if stage is not None:
        overrides["stages"] = list(STAGES[: STAGES.index(stage) + 1])
    if overrides:
        config = dataclasses.replace(config, **overrides)

    if not resume_flag:
        # a stale checkpoint would silently skip work the caller expects to run
        import shutil
        from pathlib import Path

        ckpt = Path(config.checkpoint_dir)
        if ckpt.exists():
            shutil.rmtree(ckpt)

    try:
        report = run_pipeline(config)
    except (ConfigError, CorruptCheckpointError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except PipelineError as exc:
        click.echo(f"stage failure: {exc}", err=True)
        sys.exit(EXIT_STAGE)

    click.echo(json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False))
    sys.exit(EXIT_OK)


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--topics", "topics_path", type=click.Path(exists=True), default=None, help="JSON map of page title to topic.")
def report(records_path, topics_path):
    """Print topic, rating, and trace-length statistics for a records file."""
    records = read_records_jsonl(records_path)
    topic_map = {}
    if topics_path:
        topic_map = json.loads(open(topics_path, encoding="utf-8").read())
    click.echo(render_stats_text(report_stats(records, topic_map)))


@main.command()
@click.option("--records", "records_path", required=True, type=click.Path(exists=True))
@click.option("--revisions", "revisions_path", type=click.Path(exists=True), default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path())
def bench(records_path, revisions_path, seed, out_path):
    """Build the benchmark split from a records file and a revision sheet."""
    records = read_records_jsonl(records_path)
    pool = select_bench_pool(records)
    sheet = RevisionSheet.from_jsonl(revisions_path) if revisions_path else RevisionSheet([])
    try:
        split = sample_and_split(pool, sheet, seed=seed)
    except DatasetError as exc:
        click.echo(str(exc), err=True)
        sys.exit(EXIT_STAGE)
    payload = {"seed": split.seed, "test": list(split.test), "validation": list(split.validation)}
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
    click.echo(f"wrote {len(split.test)} test / {len(split.validation)} validation ids to {out_path}")


if __name__ == "__main__":
    main()
