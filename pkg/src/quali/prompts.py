"""Prompt composition from fixed presets, user choices, and free text.

Every composed prompt carries four components in a fixed order: background,
task, process, and output specification. Fragments are tiered:

- fixed: preset text shipped with the package (chosen by data type and the
  role-playing toggle), plus the per-batch framing line;
- user_choice: fragments realized from toggled options (the theme count);
- dynamic: free text the user typed (dataset description, extra
  instructions), included verbatim and only ever appended.

Preset assets are versioned text files; the version is recorded on every
bundle so transcripts stay reproducible.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources

from .corpus import DataType
from .errors import ConfigInvalidError
from .validation import Severity, ValidationReport

THEME_COUNT_MIN = 1
THEME_COUNT_MAX = 50

RESULT_COLUMNS = ("Themes", "Description", "Quotes", "Participant Count")

_FRAGMENT_SEP = "\n\n"
_VERSION_RE = re.compile(r"^#preset-version:\s*(\S+)\s*$")
_SECTION_RE = re.compile(r"^\[(background|task|process|output)\]\s*$")


class Tier(str, Enum):
    FIXED = "fixed"
    USER_CHOICE = "user_choice"
    DYNAMIC = "dynamic"


@dataclass
class PromptConfig:
    data_type: DataType
    role_playing: bool = False
    theme_count: int = 10
    extra_instructions: str = ""
    dataset_description: str = ""


@dataclass
class PromptBundle:
    """A fully composed instruction set; assembled is the exact byte
    concatenation background + task + process + output_spec."""

    background: str
    task: str
    process: str
    output_spec: str
    assembled: str
    tier_trace: list[tuple[str, Tier]]
    preset_version: str


@dataclass
class _Preset:
    version: str
    background: str
    task: str
    process: str
    output: str


@lru_cache(maxsize=None)
def _load_preset(name: str) -> _Preset:
    text = (resources.files("quali") / "presets" / f"{name}.txt").read_text("utf-8")
    lines = text.splitlines()
    match = _VERSION_RE.match(lines[0]) if lines else None
    if match is None:
        raise ValueError(f"preset {name!r} is missing its #preset-version header")
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in lines[1:]:
        section = _SECTION_RE.match(line)
        if section:
            current = sections.setdefault(section.group(1), [])
        elif current is not None:
            current.append(line)
        elif line.strip():
            # persona-style preset: a single unlabeled body
            current = sections.setdefault("background", [])
            current.append(line)
    body = {key: "\n".join(value).strip() for key, value in sections.items()}
    return _Preset(
        version=match.group(1),
        background=body.get("background", ""),
        task=body.get("task", ""),
        process=body.get("process", ""),
        output=body.get("output", ""),
    )


def preset_version(data_type: DataType | None = None) -> str:
    """Version of the preset family (all presets ship one version)."""
    name = (data_type or DataType.INTERVIEW).value
    return _load_preset(name).version


def validate_config(config: PromptConfig) -> ValidationReport:
    """Range checks; an empty dataset description is only a warning."""
    report = ValidationReport()
    if not THEME_COUNT_MIN <= config.theme_count <= THEME_COUNT_MAX:
        report.add(
            Severity.BLOCKING,
            f"theme_count {config.theme_count} outside "
            f"[{THEME_COUNT_MIN}, {THEME_COUNT_MAX}]",
        )
    if not config.dataset_description.strip():
        report.add(Severity.WARNING, "dataset description is empty; themes may lack context")
    return report


def compose(config: PromptConfig, batch_index: int = 1, batch_total: int = 1) -> PromptBundle:
    """Compose the instruction set for one batch. Deterministic.

    Raises ConfigInvalidError when theme_count is out of range.
    """
    report = validate_config(config)
    if not report.is_ok:
        raise ConfigInvalidError("; ".join(report.messages(Severity.BLOCKING)))
    if batch_index < 1 or batch_total < 1 or batch_index > batch_total:
        raise ValueError(f"bad batch numbering {batch_index}/{batch_total}")

    preset = _load_preset(config.data_type.value)
    persona = _load_preset("persona")

    background: list[tuple[str, Tier]] = []
    if config.role_playing:
        background.append((persona.background, Tier.FIXED))
    background.append(
        (
            f"You are reading part {batch_index} of {batch_total} of the dataset. "
            "Treat this part as complete and self-contained; no other part is "
            "available to you.",
            Tier.FIXED,
        )
    )
    background.append((preset.background, Tier.FIXED))
    if config.dataset_description.strip():
        background.append(
            (f"Dataset context provided by the analyst: {config.dataset_description}", Tier.DYNAMIC)
        )

    task = [(preset.task, Tier.FIXED)]
    process = [(preset.process, Tier.FIXED)]

    output: list[tuple[str, Tier]] = [(preset.output, Tier.FIXED)]
    output.append(
        (
            f"The table must contain exactly {config.theme_count} rows, one row per theme.",
            Tier.USER_CHOICE,
        )
    )
    if config.extra_instructions:
        output.append((config.extra_instructions, Tier.DYNAMIC))

    def joined(fragments: list[tuple[str, Tier]]) -> str:
        return "".join(text + _FRAGMENT_SEP for text, _ in fragments)

    trace = [(text + _FRAGMENT_SEP, tier) for text, tier in background + task + process + output]
    bundle = PromptBundle(
        background=joined(background),
        task=joined(task),
        process=joined(process),
        output_spec=joined(output),
        assembled="".join(text for text, _ in trace),
        tier_trace=trace,
        preset_version=preset.version,
    )
    return bundle


def preview(config: PromptConfig) -> str:
    """The assembled text for a single-batch run; no side effects."""
    return compose(config, 1, 1).assembled
