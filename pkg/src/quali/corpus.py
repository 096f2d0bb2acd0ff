"""Dataset ingestion: normalize text files into role-labeled record sequences.

Supported inputs are plain text (UTF-8, blank-line separated paragraphs),
delimited tables (RFC 4180 CSV; tab-delimited with an explicit delimiter),
and spreadsheets (first worksheet of an .xlsx file, header row required).

Trimming rule: each record's text is stripped of leading/trailing whitespace;
interior whitespace is preserved byte-for-byte so that quotes extracted later
can be verified against the exact source text.
"""

from __future__ import annotations

import csv
import io
import re
import zipfile
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from xml.etree import ElementTree

from .errors import EmptyDatasetError, FormatMismatchError, MappingError
from .validation import Severity, ValidationReport


class Role(str, Enum):
    INTERVIEWER = "interviewer"
    PARTICIPANT = "participant"
    MODERATOR = "moderator"
    POSTER = "poster"
    UNLABELED = "unlabeled"


class DataType(str, Enum):
    INTERVIEW = "interview"
    FOCUS_GROUP = "focus_group"
    SOCIAL_MEDIA = "social_media"


class SourceFormat(str, Enum):
    PLAIN_TEXT = "plain_text"
    DELIMITED_TABLE = "delimited_table"
    SPREADSHEET = "spreadsheet"


@dataclass
class ColumnMapping:
    """Where to find text, speaker label, and id in tabular input.

    Columns are addressed by header name or 0-based index. ``text_column``
    is required for tabular formats and ignored for plain text.
    """

    text_column: str | int | None = None
    speaker_column: str | int | None = None
    id_column: str | int | None = None


@dataclass
class Record:
    record_id: str
    speaker_label: str
    role: Role
    text: str
    ordinal: int


@dataclass
class Dataset:
    records: list[Record]
    data_type: DataType
    description: str = ""
    source_path: str = ""
    column_mapping: ColumnMapping = field(default_factory=ColumnMapping)

    @property
    def speaker_labels(self) -> list[str]:
        """Distinct non-empty speaker labels in first-appearance order."""
        seen: dict[str, None] = {}
        for record in self.records:
            if record.speaker_label and record.speaker_label not in seen:
                seen[record.speaker_label] = None
        return list(seen)


# A paragraph's first line carries a speaker label when a colon appears
# within its first 32 characters ("P1: I think ..."). Documented heuristic;
# the label part must be non-empty after stripping.
_LABEL_RE = re.compile(r"^([^:\n]{1,32}):\s?(.*)$", re.DOTALL)

_EXTENSION_FORMATS = {
    ".txt": SourceFormat.PLAIN_TEXT,
    ".text": SourceFormat.PLAIN_TEXT,
    ".csv": SourceFormat.DELIMITED_TABLE,
    ".tsv": SourceFormat.DELIMITED_TABLE,
    ".xlsx": SourceFormat.SPREADSHEET,
}


def guess_format(path: str | Path) -> SourceFormat:
    """Infer the source format from a file extension (default plain text)."""
    return _EXTENSION_FORMATS.get(Path(path).suffix.lower(), SourceFormat.PLAIN_TEXT)


def load_dataset(
    path: str | Path,
    format: SourceFormat | str | None = None,
    mapping: ColumnMapping | None = None,
    data_type: DataType | str = DataType.INTERVIEW,
    description: str = "",
    delimiter: str | None = None,
) -> Dataset:
    """Load a file into a Dataset, one Record per row/paragraph.

    Raises FileNotFoundError, FormatMismatchError, MappingError, or
    EmptyDatasetError. Ordinals follow source order.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    if delimiter is None and path.suffix.lower() == ".tsv":
        delimiter = "\t"
    return parse_dataset(
        path.read_bytes(),
        format=format or guess_format(path),
        mapping=mapping,
        data_type=data_type,
        description=description,
        source_path=str(path),
        delimiter=delimiter,
    )


def parse_dataset(
    data: bytes,
    *,
    format: SourceFormat | str,
    mapping: ColumnMapping | None = None,
    data_type: DataType | str = DataType.INTERVIEW,
    description: str = "",
    source_path: str = "<memory>",
    delimiter: str | None = None,
) -> Dataset:
    """In-memory variant of load_dataset (nothing is written to disk)."""
    fmt = SourceFormat(format)
    mapping = mapping or ColumnMapping()
    if fmt is SourceFormat.PLAIN_TEXT:
        records = _records_from_text(_decode(data))
    elif fmt is SourceFormat.DELIMITED_TABLE:
        records = _records_from_delimited(_decode(data), mapping, delimiter or ",")
    else:
        records = _records_from_xlsx(data, mapping)
    if not records:
        raise EmptyDatasetError(f"no usable records in {source_path}")
    return Dataset(
        records=records,
        data_type=DataType(data_type),
        description=description,
        source_path=source_path,
        column_mapping=mapping,
    )


def assign_roles(dataset: Dataset, role_map: dict[str, Role | str]) -> Dataset:
    """Return a copy where mapped speaker labels get their role.

    Labels absent from role_map become UNLABELED; nothing else changes, so
    applying the same map twice is a no-op.
    """
    coerced = {label: Role(role) for label, role in role_map.items()}
    records = [
        replace(record, role=coerced.get(record.speaker_label, Role.UNLABELED))
        for record in dataset.records
    ]
    return replace(dataset, records=records)


def validate_dataset(dataset: Dataset, budget=None) -> ValidationReport:
    """Report blocking and advisory issues; never raises.

    The single-record ceiling is the effective token budget: larger records
    will be split before submission, which is reported as a warning.
    """
    from .chunking import TokenBudget, estimate_tokens

    budget = budget or TokenBudget()
    report = ValidationReport()
    if not dataset.records:
        report.add(Severity.BLOCKING, "dataset has no records")

    seen_ids: set[str] = set()
    unlabeled = 0
    for record in dataset.records:
        if record.record_id in seen_ids:
            report.add(Severity.BLOCKING, f"duplicate record_id {record.record_id!r}")
        seen_ids.add(record.record_id)
        if not record.text.strip():
            report.add(Severity.BLOCKING, f"empty text at ordinal {record.ordinal}")
        elif estimate_tokens(record.text) > budget.effective_budget:
            report.add(
                Severity.WARNING,
                f"record {record.record_id!r} exceeds single-record ceiling "
                f"({budget.effective_budget} tokens) and will be split",
            )
        if not record.speaker_label:
            unlabeled += 1
    if unlabeled:
        report.add(Severity.INFO, f"{unlabeled} record(s) have no speaker label")
    return report


def _decode(data: bytes) -> str:
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise FormatMismatchError(f"input is not valid UTF-8: {exc}") from None


def _records_from_text(text: str) -> list[Record]:
    records: list[Record] = []
    for paragraph in re.split(r"\n\s*\n", text):
        body = paragraph.strip()
        if not body:
            continue
        first, _, rest = body.partition("\n")
        label = ""
        match = _LABEL_RE.match(first)
        if match and match.group(1).strip():
            label = match.group(1).strip()
            body = (match.group(2) + ("\n" + rest if rest else "")).strip()
        if not body:
            continue
        ordinal = len(records)
        records.append(Record(f"r{ordinal}", label, Role.UNLABELED, body, ordinal))
    return records


def _records_from_delimited(text: str, mapping: ColumnMapping, delimiter: str) -> list[Record]:
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    try:
        header = next(reader)
    except StopIteration:
        return []
    return _records_from_rows(header, list(reader), mapping)


def _records_from_rows(
    header: list[str], rows: list[list[str]], mapping: ColumnMapping
) -> list[Record]:
    if mapping.text_column is None:
        raise MappingError("text_column is required for tabular input")
    text_i = _resolve_column(header, mapping.text_column)
    speaker_i = (
        _resolve_column(header, mapping.speaker_column)
        if mapping.speaker_column is not None
        else None
    )
    id_i = _resolve_column(header, mapping.id_column) if mapping.id_column is not None else None

    records: list[Record] = []
    for row in rows:
        text = _cell(row, text_i).strip()
        if not text:
            continue
        ordinal = len(records)
        label = _cell(row, speaker_i).strip() if speaker_i is not None else ""
        record_id = (_cell(row, id_i).strip() if id_i is not None else "") or f"r{ordinal}"
        records.append(Record(record_id, label, Role.UNLABELED, text, ordinal))
    return records


def _resolve_column(header: list[str], column: str | int) -> int:
    if isinstance(column, int):
        if not 0 <= column < len(header):
            raise MappingError(f"column index {column} out of range (header has {len(header)})")
        return column
    try:
        return header.index(column)
    except ValueError:
        raise MappingError(f"column {column!r} not found in header {header}") from None


def _cell(row: list[str], index: int) -> str:
    return row[index] if index < len(row) else ""


def _records_from_xlsx(data: bytes, mapping: ColumnMapping) -> list[Record]:
    # Minimal reader for the narrow contract (first worksheet, header row):
    # no xlsx library is available in this environment.
    try:
        archive = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile:
        raise FormatMismatchError("input is not an .xlsx workbook") from None
    with archive:
        names = set(archive.namelist())
        shared = _xlsx_shared_strings(archive) if "xl/sharedStrings.xml" in names else []
        sheet_path = _xlsx_first_sheet_path(archive, names)
        if sheet_path not in names:
            raise FormatMismatchError(f"workbook has no worksheet at {sheet_path}")
        rows = _xlsx_rows(archive.read(sheet_path), shared)
    if not rows:
        return []
    header = [cell if cell is not None else "" for cell in rows[0]]
    body = [[cell if cell is not None else "" for cell in row] for row in rows[1:]]
    return _records_from_rows(header, body, mapping)


def _strip_ns(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _xlsx_shared_strings(archive: zipfile.ZipFile) -> list[str]:
    strings: list[str] = []
    root = ElementTree.fromstring(archive.read("xl/sharedStrings.xml"))
    for item in root:
        strings.append("".join(node.text or "" for node in item.iter() if _strip_ns(node.tag) == "t"))
    return strings


def _xlsx_first_sheet_path(archive: zipfile.ZipFile, names: set[str]) -> str:
    try:
        workbook = ElementTree.fromstring(archive.read("xl/workbook.xml"))
        rels = ElementTree.fromstring(archive.read("xl/_rels/workbook.xml.rels"))
    except KeyError:
        return "xl/worksheets/sheet1.xml"
    targets = {}
    for rel in rels:
        targets[rel.get("Id")] = rel.get("Target", "")
    for node in workbook.iter():
        if _strip_ns(node.tag) == "sheet":
            rel_id = next((v for k, v in node.attrib.items() if k.endswith("}id")), None)
            target = targets.get(rel_id, "")
            if target:
                return target.lstrip("/") if target.startswith("/xl") else f"xl/{target}"
            break
    return "xl/worksheets/sheet1.xml"


def _xlsx_rows(sheet_xml: bytes, shared: list[str]) -> list[list[str | None]]:
    rows: list[list[str | None]] = []
    for row_node in ElementTree.fromstring(sheet_xml).iter():
        if _strip_ns(row_node.tag) != "row":
            continue
        cells: list[str | None] = []
        for cell in row_node:
            if _strip_ns(cell.tag) != "c":
                continue
            index = _xlsx_column_index(cell.get("r", ""))
            while len(cells) < index:
                cells.append(None)
            cells.append(_xlsx_cell_value(cell, shared))
        rows.append(cells)
    return rows


def _xlsx_column_index(ref: str) -> int:
    index = 0
    for ch in ref:
        if not ch.isalpha():
            break
        index = index * 26 + (ord(ch.upper()) - ord("A") + 1)
    return max(index - 1, 0)


def _xlsx_cell_value(cell, shared: list[str]) -> str | None:
    kind = cell.get("t", "n")
    if kind == "inlineStr":
        return "".join(n.text or "" for n in cell.iter() if _strip_ns(n.tag) == "t")
    value = next((n.text for n in cell if _strip_ns(n.tag) == "v"), None)
    if value is None:
        return None
    if kind == "s":
        try:
            return shared[int(value)]
        except (ValueError, IndexError):
            return value
    return value
