"""Headless driver: the full start-to-CSV workflow from one command.

Exit codes: 0 success, 1 usage/config, 2 ingest, 3 gateway abort,
4 parse abort, 5 I/O failure on outputs.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from .chunking import TokenBudget
from .corpus import ColumnMapping, DataType, SourceFormat, guess_format, load_dataset
from .errors import (
    AuthFailedError,
    BudgetTooSmallError,
    ConfigInvalidError,
    EmptyDatasetError,
    FormatMismatchError,
    MappingError,
    MockScriptError,
    QualiError,
)
from .exporter import export_csv, export_transcript
from .gateway import DEFAULT_MODEL, DEFAULT_TEMPERATURE, HttpBackend
from .mock import MockBackend, load_script
from .pipeline import preview_run, run_pipeline
from .prompts import PromptConfig

API_KEY_ENV = "QUALI_API_KEY"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INGEST = 2
EXIT_GATEWAY = 3
EXIT_PARSE = 4
EXIT_IO = 5

_TYPE_FLAGS = {
    "interview": DataType.INTERVIEW,
    "focus-group": DataType.FOCUS_GROUP,
    "social-media": DataType.SOCIAL_MEDIA,
}

_FORMAT_FLAGS = {
    "text": (SourceFormat.PLAIN_TEXT, None),
    "csv": (SourceFormat.DELIMITED_TABLE, ","),
    "tsv": (SourceFormat.DELIMITED_TABLE, "\t"),
    "xlsx": (SourceFormat.SPREADSHEET, None),
}


def _column(value: str | None) -> str | int | None:
    if value is None:
        return None
    return int(value) if value.isdigit() else value


@click.group()
@click.version_option(package_name="quali")
def cli() -> None:
    """Thematic coding of text corpora through a chat-completion backend."""


@cli.command()
@click.option("--input", "input_path", required=True, help="Dataset file to analyze.")
@click.option("--format", "format_flag", type=click.Choice(sorted(_FORMAT_FLAGS)), default=None,
              help="Input format (default: by file extension).")
@click.option("--text-col", default=None, help="Text column name or index (tabular input).")
@click.option("--speaker-col", default=None, help="Speaker label column name or index.")
@click.option("--id-col", default=None, help="Record id column name or index.")
@click.option("--type", "data_type", type=click.Choice(sorted(_TYPE_FLAGS)), default="interview",
              help="Kind of qualitative data.")
@click.option("--themes", "theme_count", type=int, default=10, show_default=True,
              help="Number of key themes to extract.")
@click.option("--role-play", is_flag=True, help="Prepend the expert-persona prompt fragment.")
@click.option("--extra", default="", help="Extra instructions appended verbatim to the prompt.")
@click.option("--describe", default="", help="Free-text description of the dataset.")
@click.option("--backend", type=click.Choice(["real", "mock"]), default="real", show_default=True)
@click.option("--mock-script", default=None, help="JSON script for the mock backend.")
@click.option("--model", default=DEFAULT_MODEL, show_default=True)
@click.option("--temperature", type=float, default=DEFAULT_TEMPERATURE, show_default=True)
@click.option("--budget", "context_limit", type=int, default=4096, show_default=True,
              help="Model context limit in tokens.")
@click.option("--parallel", type=int, default=1, show_default=True,
              help="Concurrent batch submissions.")
@click.option("--out", "out_path", default="themes.csv", show_default=True,
              help="CSV output path.")
@click.option("--transcript", "transcript_path", default=None,
              help="Also write a full session transcript to this path.")
@click.option("--figure", "figure_path", default=None,
              help="Also render a theme-prevalence chart (PNG/SVG) to this path.")
@click.option("--dry-run", is_flag=True, help="Plan, compose, and price; write nothing.")
@click.option("--yes", is_flag=True, help="Skip the cost confirmation on the real backend.")
def run(
    input_path, format_flag, text_col, speaker_col, id_col, data_type, theme_count,
    role_play, extra, describe, backend, mock_script, model, temperature,
    context_limit, parallel, out_path, transcript_path, figure_path, dry_run, yes,
) -> int:
    """Analyze a dataset and export the merged theme table as CSV."""
    try:
        fmt, delimiter = (
            _FORMAT_FLAGS[format_flag] if format_flag else (guess_format(input_path), None)
        )
        dataset = load_dataset(
            input_path,
            format=fmt,
            mapping=ColumnMapping(
                text_column=_column(text_col),
                speaker_column=_column(speaker_col),
                id_column=_column(id_col),
            ),
            data_type=_TYPE_FLAGS[data_type],
            description=describe,
            delimiter=delimiter,
        )
    except (FileNotFoundError, FormatMismatchError, MappingError, EmptyDatasetError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INGEST

    config = PromptConfig(
        data_type=_TYPE_FLAGS[data_type],
        role_playing=role_play,
        theme_count=theme_count,
        extra_instructions=extra,
        dataset_description=describe,
    )
    try:
        budget = TokenBudget(context_limit=context_limit)
        plan, bundle, cost = preview_run(dataset, config, budget, model_id=model)
    except (ConfigInvalidError, BudgetTooSmallError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE

    click.echo(
        f"{len(dataset.records)} records -> {len(plan.batches)} batch(es); "
        f"estimated cost ${cost.total} "
        f"({cost.input_tokens} input + <= {cost.output_tokens} completion tokens)"
    )
    if dry_run:
        click.echo("dry run: nothing submitted, nothing written.")
        return EXIT_OK

    if backend == "mock":
        try:
            script = load_script(mock_script) if mock_script else []
        except (OSError, json.JSONDecodeError, MockScriptError) as exc:
            click.echo(f"error: bad mock script: {exc}", err=True)
            return EXIT_USAGE
        chosen_backend = MockBackend(script, fallback_auto=True)
    else:
        api_key = os.environ.get(API_KEY_ENV, "")
        if not api_key:
            click.echo(f"error: set {API_KEY_ENV} to use the real backend", err=True)
            return EXIT_USAGE
        if not yes and not click.confirm(f"Submit {len(plan.batches)} batch(es) for ~${cost.total}?"):
            click.echo("aborted before submission.")
            return EXIT_USAGE
        chosen_backend = HttpBackend(api_key)
        try:
            chosen_backend.verify_key()
        except AuthFailedError as exc:
            click.echo(f"error: {exc}", err=True)
            return EXIT_GATEWAY

    result = run_pipeline(
        dataset,
        config,
        chosen_backend,
        budget=budget,
        model_id=model,
        temperature=temperature,
        parallelism=parallel,
    )

    try:
        if transcript_path:
            record = result.session_record(dataset, model, temperature)
            export_transcript(record, transcript_path)
            click.echo(f"transcript written to {transcript_path}")
        if result.status != "complete":
            kind = result.abort.kind.value if result.abort else "unknown"
            click.echo(f"aborted ({result.abort_stage}): {kind}", err=True)
            for entry in result.recovery_log:
                click.echo(f"  {entry.render()}", err=True)
            return EXIT_GATEWAY if result.abort_stage == "gateway" else EXIT_PARSE

        export_csv(result.merged, out_path)
        click.echo(f"wrote {len(result.merged.entries)} themes to {out_path}")
        if result.warning:
            click.echo(f"warning: {result.warning}", err=True)
        if figure_path:
            from .figures import save_theme_chart

            save_theme_chart(result.merged, figure_path)
            click.echo(f"figure written to {figure_path}")
    except OSError as exc:
        click.echo(f"error writing outputs: {exc}", err=True)
        return EXIT_IO

    rate = result.provenance.verification_rate
    click.echo(f"quote provenance: {result.provenance.verified}/{result.provenance.total} "
               f"verified ({rate:.0%})")
    return EXIT_OK


@cli.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8641, show_default=True)
@click.option("--ui-dir", default=None, help="Serve a built web UI from this directory at /ui.")
def serve(host: str, port: int, ui_dir: str | None) -> int:
    """Start the loopback session service for the companion web UI."""
    from .service import main as service_main

    service_main(host=host, port=port, ui_dir=ui_dir)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    """Entry point with the documented exit codes (usage errors exit 1)."""
    try:
        result = cli.main(args=argv, standalone_mode=False)
        return int(result) if isinstance(result, int) else EXIT_OK
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.Abort:
        click.echo("aborted.", err=True)
        return EXIT_USAGE
    except QualiError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
