from __future__ import annotations

import io
import random
import zipfile
from pathlib import Path

import pytest

from quali.chunking import estimate_tokens
from quali.corpus import ColumnMapping, DataType, Dataset, Record, Role, load_dataset

FIXTURE_CSV = Path(__file__).resolve().parent.parent / "data" / "focus_group_remote_work.csv"


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\nACCEPTANCE {outcome}: {name}")


def make_dataset(
    texts: list[str],
    speakers: list[str] | None = None,
    data_type: DataType = DataType.FOCUS_GROUP,
) -> Dataset:
    speakers = speakers or [f"P{i % 4 + 1}" for i in range(len(texts))]
    records = [
        Record(f"r{i}", speakers[i], Role.UNLABELED, text, i) for i, text in enumerate(texts)
    ]
    return Dataset(records=records, data_type=data_type, source_path="<test>")


def make_xlsx(rows: list[list[str]]) -> bytes:
    """Build a minimal, valid .xlsx workbook with inline strings."""

    def cell_ref(col: int, row: int) -> str:
        letters = ""
        col += 1
        while col:
            col, rem = divmod(col - 1, 26)
            letters = chr(ord("A") + rem) + letters
        return f"{letters}{row}"

    rows_xml = []
    for r, row in enumerate(rows, start=1):
        cells = "".join(
            f'<c r="{cell_ref(c, r)}" t="inlineStr"><is><t>{value}</t></is></c>'
            for c, value in enumerate(row)
        )
        rows_xml.append(f'<row r="{r}">{cells}</row>')
    sheet = (
        '<?xml version="1.0"?>'
        '<worksheet xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main">'
        f"<sheetData>{''.join(rows_xml)}</sheetData></worksheet>"
    )
    workbook = (
        '<?xml version="1.0"?>'
        '<workbook xmlns="http://schemas.openxmlformats.org/spreadsheetml/2006/main" '
        'xmlns:r="http://schemas.openxmlformats.org/officeDocument/2006/relationships">'
        '<sheets><sheet name="Sheet1" sheetId="1" r:id="rId1"/></sheets></workbook>'
    )
    rels = (
        '<?xml version="1.0"?>'
        '<Relationships xmlns="http://schemas.openxmlformats.org/package/2006/relationships">'
        '<Relationship Id="rId1" '
        'Type="http://schemas.openxmlformats.org/officeDocument/2006/relationships/worksheet" '
        'Target="worksheets/sheet1.xml"/></Relationships>'
    )
    content_types = (
        '<?xml version="1.0"?>'
        '<Types xmlns="http://schemas.openxmlformats.org/package/2006/content-types">'
        '<Default Extension="xml" ContentType="application/xml"/></Types>'
    )
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as archive:
        archive.writestr("[Content_Types].xml", content_types)
        archive.writestr("xl/workbook.xml", workbook)
        archive.writestr("xl/_rels/workbook.xml.rels", rels)
        archive.writestr("xl/worksheets/sheet1.xml", sheet)
    return buffer.getvalue()


@pytest.fixture(scope="session")
def focus_group_dataset() -> Dataset:
    return load_dataset(
        FIXTURE_CSV,
        mapping=ColumnMapping(text_column="message", speaker_column="name"),
        data_type=DataType.FOCUS_GROUP,
        description="Simulated focus group on the transition to remote work.",
    )


def random_token_dataset(rng: random.Random, effective: int) -> Dataset:
    """Dataset whose record estimates range from 1 to 3x the budget."""
    words = ["work", "home", "team", "call", "desk", "quiet", "focus", "remote"]
    texts = []
    for _ in range(rng.randint(1, 12)):
        target_tokens = rng.randint(1, 3 * effective)
        body: list[str] = []
        while estimate_tokens(" ".join(body)) < target_tokens:
            body.append(rng.choice(words))
            if rng.random() < 0.1:
                body[-1] += "."
        texts.append(" ".join(body))
    return make_dataset(texts)
