"""Parse model output into a typed theme table and verify quote provenance.

The expected reply is a pipe-delimited table whose header names four columns:
Themes, Description, Quotes, Participant Count (case-insensitive, any
order). Multiple quotes inside one cell are separated by " || ".

Quote verification is normalized, not byte-exact: whitespace is collapsed,
surrounding punctuation and ellipses are stripped, and matching is
casefolded. Models elide and re-punctuate; byte-exact matching would reject
genuine quotes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Sequence, Union

from .corpus import Dataset
from .gateway import ErrorKind, GatewayError

REQUIRED_COLUMNS = ("Themes", "Description", "Quotes", "Participant Count")

QUOTE_SEPARATOR = " || "

# Split a row on pipes that are neither escaped nor part of a "||" pair
# (the in-cell quote separator keeps its double pipes).
_CELL_SPLIT_RE = re.compile(r"(?<!\\)(?<!\|)\|(?!\|)")
_SEPARATOR_ROW_RE = re.compile(r"^[\s:\-]*$")
_INT_RE = re.compile(r"-?\d+")
_WS_RE = re.compile(r"\s+")

# Characters stripped from quote edges before matching.
_EDGE_PUNCT = "\"'\u201c\u201d\u2018\u2019\u2026\u00ab\u00bb.,;:!?()[]{}<>*_`~\u2013\u2014- \t\n\r"


@dataclass
class Quote:
    text: str
    matched_record_id: str | None = None


@dataclass
class ThemeEntry:
    theme: str
    description: str
    quotes: list[Quote] = field(default_factory=list)
    participant_count: int = 0
    claimed_count: int | None = None


@dataclass
class ThemeTable:
    entries: list[ThemeEntry]
    source_batch: Union[int, str] = "merged"
    model_id: str | None = None
    preset_version: str | None = None
    temperature: float | None = None


@dataclass
class ProvenanceReport:
    verified: int
    unmatched: list[tuple[str, str]]
    total: int

    @property
    def verification_rate(self) -> float:
        return self.verified / self.total if self.total else 1.0


def collapse_whitespace(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def normalize_quote(text: str) -> str:
    """Casefolded, whitespace-collapsed, edge punctuation/ellipses stripped."""
    return collapse_whitespace(text).strip(_EDGE_PUNCT).casefold()


def normalize_record_text(text: str) -> str:
    return collapse_whitespace(text).casefold()


def unescape_cell(cell: str) -> str:
    r"""Decode cell escapes written by the pipe-table renderer (\|, \\, \n)."""
    out = []
    i = 0
    while i < len(cell):
        ch = cell[i]
        if ch == "\\" and i + 1 < len(cell):
            nxt = cell[i + 1]
            out.append("\n" if nxt == "n" else nxt)
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def split_quotes_cell(cell: str) -> list[str]:
    """Split a quotes cell on unescaped " || " separators, decoding escapes."""
    if not cell:
        return []
    parts: list[str] = []
    current: list[str] = []
    i = 0
    while i < len(cell):
        ch = cell[i]
        if ch == "\\" and i + 1 < len(cell):
            nxt = cell[i + 1]
            current.append("\n" if nxt == "n" else nxt)
            i += 2
        elif cell.startswith(QUOTE_SEPARATOR, i):
            parts.append("".join(current))
            current = []
            i += len(QUOTE_SEPARATOR)
        else:
            current.append(ch)
            i += 1
    parts.append("".join(current))
    return parts


def _split_row(line: str) -> list[str]:
    cells = _CELL_SPLIT_RE.split(line)
    if cells and not cells[0].strip():
        cells = cells[1:]
    if cells and not cells[-1].strip():
        cells = cells[:-1]
    return cells


def parse_theme_table(raw: str, expected_themes: int) -> Union[ThemeTable, GatewayError]:
    """Parse a reply into a ThemeTable, or classify why it cannot be.

    A malformed table (missing header, wrong cell count, empty theme,
    unreadable count, duplicate themes) is a format_error; a well-formed
    table with the wrong row count is a count_mismatch carrying the rows
    parsed so far.
    """
    if not raw.strip():
        return GatewayError(ErrorKind.FORMAT_ERROR, raw, {"reason": "empty response"})

    lines = raw.splitlines()
    header_index = None
    column_of: dict[str, int] = {}
    wanted = {name.casefold(): name for name in REQUIRED_COLUMNS}
    for i, line in enumerate(lines):
        if "|" not in line:
            continue
        cells = [c.strip().casefold() for c in _split_row(line)]
        if len(cells) == len(REQUIRED_COLUMNS) and set(cells) == set(wanted):
            header_index = i
            column_of = {wanted[c]: j for j, c in enumerate(cells)}
            break
    if header_index is None:
        return GatewayError(ErrorKind.FORMAT_ERROR, raw, {"reason": "missing table header"})

    entries: list[ThemeEntry] = []
    seen_themes: set[str] = set()
    for line in lines[header_index + 1 :]:
        cells = _split_row(line)
        if len(cells) < 2:
            if entries:
                break  # trailing prose after the table
            continue
        if all(_SEPARATOR_ROW_RE.match(c) for c in cells):
            continue
        if len(cells) != len(REQUIRED_COLUMNS):
            return GatewayError(
                ErrorKind.FORMAT_ERROR,
                raw,
                {"reason": f"row has {len(cells)} cells, expected {len(REQUIRED_COLUMNS)}"},
            )
        theme = unescape_cell(cells[column_of["Themes"]].strip())
        if not theme:
            return GatewayError(ErrorKind.FORMAT_ERROR, raw, {"reason": "empty theme name"})
        key = normalize_quote(theme)
        if key in seen_themes:
            return GatewayError(
                ErrorKind.FORMAT_ERROR, raw, {"reason": f"duplicate theme {theme!r}"}
            )
        seen_themes.add(key)
        count_match = _INT_RE.search(cells[column_of["Participant Count"]])
        if count_match is None or int(count_match.group()) < 0:
            return GatewayError(
                ErrorKind.FORMAT_ERROR, raw, {"reason": "unreadable participant count"}
            )
        count = int(count_match.group())
        quotes = [
            Quote(text.strip())
            for text in split_quotes_cell(cells[column_of["Quotes"]].strip())
            if text.strip()
        ]
        entries.append(
            ThemeEntry(
                theme=theme,
                description=unescape_cell(cells[column_of["Description"]].strip()),
                quotes=quotes,
                participant_count=count,
                claimed_count=count,
            )
        )

    if not entries:
        return GatewayError(ErrorKind.FORMAT_ERROR, raw, {"reason": "no data rows"})
    if len(entries) != expected_themes:
        return GatewayError(
            ErrorKind.COUNT_MISMATCH,
            raw,
            {"expected": expected_themes, "parsed": len(entries), "partial_entries": entries},
        )
    return ThemeTable(entries=entries, source_batch=0)


def verify_quotes(table: ThemeTable, dataset: Dataset) -> ProvenanceReport:
    """Match every quote against the source records.

    A quote is verified iff its normalized form is a substring of some
    normalized record text; the first match in ordinal order is recorded on
    the quote. Idempotent; safe to re-run.
    """
    corpus = [(record.record_id, normalize_record_text(record.text)) for record in dataset.records]
    verified = 0
    unmatched: list[tuple[str, str]] = []
    total = 0
    for entry in table.entries:
        for quote in entry.quotes:
            total += 1
            needle = normalize_quote(quote.text)
            match = None
            if needle:
                match = next((rid for rid, text in corpus if needle in text), None)
            quote.matched_record_id = match
            if match is None:
                unmatched.append((entry.theme, quote.text))
            else:
                verified += 1
    return ProvenanceReport(verified=verified, unmatched=unmatched, total=total)


def recount_participants(table: ThemeTable, dataset: Dataset) -> ThemeTable:
    """Replace participant counts with distinct verified speakers per theme.

    Requires verify_quotes to have populated matched_record_ids. The
    model-claimed count stays available as claimed_count.
    """
    speaker_of = {record.record_id: record.speaker_label for record in dataset.records}
    entries = []
    for entry in table.entries:
        speakers = {
            speaker_of[q.matched_record_id]
            for q in entry.quotes
            if q.matched_record_id in speaker_of
        }
        entries.append(replace(entry, participant_count=len(speakers)))
    return replace(table, entries=entries)
