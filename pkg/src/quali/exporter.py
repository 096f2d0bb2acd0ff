"""Serialize results to CSV and whole sessions to transcript files.

CSV is RFC 4180 (UTF-8, CRLF rows, header ``Theme,Description,Quotes,
Participant Count``). Multiple quotes share one cell joined by " || "; a
literal "||" inside a quote is escaped as "\\||". import_csv inverts
export_csv exactly on its own output. Cells may contain any text except
NUL (which the csv module cannot carry).

Transcripts are plain text with fixed-order, greppable section sentinels
(``== SECTION: <name> ==``). The API key is never part of a session record,
so it cannot appear in a transcript.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .errors import HeaderMismatchError, RowArityError
from .gateway import CostEstimate
from .themeparse import (
    QUOTE_SEPARATOR,
    Quote,
    ThemeEntry,
    ThemeTable,
    split_quotes_cell,
)

CSV_HEADER = ["Theme", "Description", "Quotes", "Participant Count"]

SECTION_SENTINEL = "== SECTION: {name} =="


def encode_quote_csv(text: str) -> str:
    return text.replace("\\", "\\\\").replace("||", "\\||")


def quotes_cell_csv(quotes: Sequence[Quote]) -> str:
    return QUOTE_SEPARATOR.join(encode_quote_csv(q.text) for q in quotes)


def render_csv(table: ThemeTable) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(CSV_HEADER)
    for entry in table.entries:
        writer.writerow(
            [
                entry.theme,
                entry.description,
                quotes_cell_csv(entry.quotes),
                str(entry.participant_count),
            ]
        )
    return buffer.getvalue()


def export_csv(table: ThemeTable, path: str | Path) -> int:
    """Write the table as CSV; returns the number of bytes written."""
    data = render_csv(table).encode("utf-8")
    Path(path).write_bytes(data)
    return len(data)


def import_csv(path: str | Path) -> ThemeTable:
    """Inverse of export_csv on its own output.

    Raises HeaderMismatchError for a foreign header and RowArityError for
    rows that do not carry exactly four readable fields.
    """
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise HeaderMismatchError("file is empty") from None
        if header != CSV_HEADER:
            raise HeaderMismatchError(f"expected header {CSV_HEADER}, found {header}")
        entries = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise RowArityError(f"line {i}: expected {len(CSV_HEADER)} fields, found {len(row)}")
            try:
                count = int(row[3])
            except ValueError:
                raise RowArityError(f"line {i}: participant count {row[3]!r} is not an integer")
            entries.append(
                ThemeEntry(
                    theme=row[0],
                    description=row[1],
                    quotes=[Quote(text) for text in split_quotes_cell(row[2])],
                    participant_count=count,
                )
            )
    return ThemeTable(entries=entries)


def _encode_pipe_cell(text: str) -> str:
    return (
        text.replace("\\", "\\\\")
        .replace("|", "\\|")
        .replace("\n", "\\n")
        .replace("\r", "")
    )


def render_pipe_table(table: ThemeTable) -> str:
    """Render the table in the pipe format the parser reads back."""
    lines = [
        "| Themes | Description | Quotes | Participant Count |",
        "| --- | --- | --- | --- |",
    ]
    for entry in table.entries:
        quotes = QUOTE_SEPARATOR.join(_encode_pipe_cell(q.text) for q in entry.quotes)
        lines.append(
            f"| {_encode_pipe_cell(entry.theme)} | {_encode_pipe_cell(entry.description)} "
            f"| {quotes} | {entry.participant_count} |"
        )
    return "\n".join(lines)


@dataclass
class TranscriptExchange:
    label: str
    prompt: str
    response: str


@dataclass
class SessionRecord:
    """Everything a transcript documents about one analysis session."""

    source_path: str
    record_count: int
    preset_version: str
    model_id: str
    temperature: float
    exchanges: list[TranscriptExchange] = field(default_factory=list)
    recovery_log: list[str] = field(default_factory=list)
    merged: ThemeTable | None = None
    cost: CostEstimate | None = None
    status: str = "complete"
    abort_reason: str | None = None


def render_transcript(session: SessionRecord) -> str:
    out: list[str] = []

    def section(name: str, *lines: str) -> None:
        out.append(SECTION_SENTINEL.format(name=name))
        out.extend(lines)
        out.append("")

    section(
        "dataset",
        f"source: {session.source_path}",
        f"records: {session.record_count}",
    )
    section(
        "preset",
        f"preset-version: {session.preset_version}",
        f"model: {session.model_id}",
        f"temperature: {session.temperature}",
    )
    for exchange in session.exchanges:
        section(f"prompt {exchange.label}", exchange.prompt.rstrip("\n"))
        section(f"response {exchange.label}", exchange.response.rstrip("\n"))
    section("recovery", *(session.recovery_log or ["(none)"]))
    if session.merged is not None:
        section("result", render_pipe_table(session.merged))
    if session.cost is not None:
        section(
            "cost",
            f"input tokens: {session.cost.input_tokens}",
            f"output tokens (reserved): {session.cost.output_tokens}",
            f"rates per 1K: ${session.cost.rate_in} in / ${session.cost.rate_out} out",
            f"estimated total: ${session.cost.total}",
        )
    if session.status != "complete":
        section("abort", f"status: {session.status}", session.abort_reason or "(no reason recorded)")
    return "\n".join(out)


def export_transcript(session: SessionRecord, path: str | Path) -> int:
    """Write the session transcript; returns the number of bytes written."""
    data = render_transcript(session).encode("utf-8")
    Path(path).write_bytes(data)
    return len(data)
