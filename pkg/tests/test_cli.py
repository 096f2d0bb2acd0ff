from __future__ import annotations

import json

import pytest

import quali.pipeline as pipeline_module
from quali.cli import main
from quali.corpus import ColumnMapping, DataType, load_dataset
from quali.exporter import import_csv
from quali.mock import script_for_plan
from quali.pipeline import preview_run
from quali.prompts import PromptConfig

from conftest import FIXTURE_CSV


@pytest.fixture(autouse=True)
def fast_clock(monkeypatch):
    sleeps: list[float] = []
    monkeypatch.setattr(pipeline_module.time, "sleep", sleeps.append)
    return sleeps


def fixture_script(theme_count: int) -> list[dict]:
    dataset = load_dataset(
        FIXTURE_CSV,
        mapping=ColumnMapping(text_column="message", speaker_column="name"),
        data_type=DataType.FOCUS_GROUP,
    )
    config = PromptConfig(
        data_type=DataType.FOCUS_GROUP, role_playing=True, theme_count=theme_count
    )
    plan, _, _ = preview_run(dataset, config)
    return script_for_plan(plan, theme_count)


def run_args(tmp_path, script, out="themes.csv", extra_args=()):
    script_path = tmp_path / "ok.json"
    script_path.write_text(json.dumps(script))
    return [
        "run",
        "--input", str(FIXTURE_CSV),
        "--text-col", "message",
        "--speaker-col", "name",
        "--type", "focus-group",
        "--themes", "20",
        "--role-play",
        "--backend", "mock",
        "--mock-script", str(script_path),
        "--out", str(tmp_path / out),
        *extra_args,
    ]


def test_focus_group_workflow_exit_zero_twenty_rows(tmp_path):
    code = main(run_args(tmp_path, fixture_script(20)))
    assert code == 0
    table = import_csv(tmp_path / "themes.csv")
    assert len(table.entries) == 20


def test_missing_input_usage_exit_one(capsys):
    code = main(["run", "--themes", "5"])
    assert code == 1
    err = capsys.readouterr().err
    assert "Usage" in err or "usage" in err


def test_unrecoverable_abort_exit_three_with_partial_transcript(tmp_path):
    script = [{"error": "network"}] * 6
    transcript = tmp_path / "session.txt"
    args = run_args(tmp_path, script, extra_args=["--transcript", str(transcript)])
    code = main(args)
    assert code == 3
    text = transcript.read_text()
    assert "== SECTION: abort ==" in text
    assert "network" in text
    assert not (tmp_path / "themes.csv").exists()


def test_parse_abort_exit_four(tmp_path):
    # three garbage replies: reassert_format twice, third failure aborts
    script = [{"reply": "still not a table"}] * 3
    code = main(run_args(tmp_path, script))
    assert code == 4


def test_dry_run_writes_nothing(tmp_path, capsys):
    args = run_args(tmp_path, [], extra_args=["--dry-run"])
    code = main(args)
    assert code == 0
    assert not (tmp_path / "themes.csv").exists()
    out = capsys.readouterr().out
    assert "estimated cost $" in out
    assert "dry run" in out


def test_invalid_theme_count_exit_one(tmp_path):
    args = run_args(tmp_path, [])
    args[args.index("--themes") + 1] = "0"
    assert main(args) == 1


def test_real_backend_without_key_exit_one(tmp_path, monkeypatch):
    monkeypatch.delenv("QUALI_API_KEY", raising=False)
    args = [
        "run", "--input", str(FIXTURE_CSV), "--text-col", "message",
        "--type", "focus-group", "--backend", "real", "--yes",
        "--out", str(tmp_path / "t.csv"),
    ]
    assert main(args) == 1


def test_missing_file_exit_two(tmp_path):
    args = ["run", "--input", str(tmp_path / "absent.csv"), "--text-col", "x"]
    assert main(args) == 2


def test_bad_mapping_exit_two(tmp_path):
    args = ["run", "--input", str(FIXTURE_CSV), "--text-col", "no_such_column",
            "--backend", "mock"]
    assert main(args) == 2


def test_figure_written_alongside_csv(tmp_path):
    figure = tmp_path / "themes.png"
    code = main(run_args(tmp_path, fixture_script(20), extra_args=["--figure", str(figure)]))
    assert code == 0
    assert figure.stat().st_size > 1000
    assert figure.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_unwritable_output_exit_five(tmp_path):
    args = run_args(tmp_path, fixture_script(20), out="nодir/x.csv")
    args[args.index("--out") + 1] = str(tmp_path / "missing_dir" / "x.csv")
    assert main(args) == 5


def test_cli_csv_byte_identical_to_service(tmp_path):
    import json as _json

    from fastapi.testclient import TestClient

    from quali.service import SessionRegistry, create_app

    script = fixture_script(20)
    code = main(run_args(tmp_path, script))
    assert code == 0
    cli_bytes = (tmp_path / "themes.csv").read_bytes()

    client = TestClient(create_app(SessionRegistry()))
    sid = client.post("/sessions", json={"backend": "mock"}).json()["session_id"]
    mapping = {"text_column": "message", "speaker_column": "name", "data_type": "focus_group"}
    with open(FIXTURE_CSV, "rb") as fh:
        client.post(
            f"/sessions/{sid}/dataset",
            files={"file": ("focus.csv", fh, "text/csv")},
            data={"mapping": _json.dumps(mapping)},
        )
    client.post(
        f"/sessions/{sid}/run",
        json={"theme_count": 20, "role_playing": True, "mock_script": script},
    )
    import time as _time

    for _ in range(500):
        if client.get(f"/sessions/{sid}/status").json()["status"] == "complete":
            break
        _time.sleep(0.02)
    service_bytes = client.get(f"/sessions/{sid}/result.csv").content
    assert service_bytes == cli_bytes
