"""Deterministic mock backend for offline runs and tests.

Script format: an ordered list of entries, each either

    {"match": 2, "reply": "...table text..."}
    {"match": 2, "error": "token_limit"}

``match`` is the 1-based batch index ("part 2 of N"); omit it to match any
batch. Entries are consumed top-down, first unconsumed match wins. Optional
fields: ``message`` overrides the error's raw message, ``delay_s`` sleeps
before answering (for cancellation tests). When no entry matches and
``fallback_auto`` is on (default), the mock fabricates a well-formed theme
table whose quotes are verbatim excerpts of the submitted payload.
"""

from __future__ import annotations

import json
import re
import threading
import time
from pathlib import Path
from typing import Mapping, Sequence, Union

from .chunking import BatchPlan, estimate_tokens, render_payload
from .errors import MockScriptError
from .gateway import ErrorKind, GatewayError, LlmRequest, RawResponse

# Messages a scripted error kind produces, mirroring the documented failure
# taxonomy, so the classifier sees realistic text.
CANONICAL_MESSAGES: dict[ErrorKind, str] = {
    ErrorKind.NETWORK: "Network errors",
    ErrorKind.NOT_PROCESSED: (
        "Something went wrong. If this issue persists please contact us "
        "through our help center at help.openai.com"
    ),
    ErrorKind.POLICY_VIOLATION: (
        "This content may violate our content policy. If you believe this "
        "to be in error, please submit your feedback - your input will aid "
        "our research in this area."
    ),
    ErrorKind.TOKEN_LIMIT: (
        "The message you submitted was too long, please reload the "
        "conversation and submit something shorter."
    ),
    ErrorKind.RATE_LIMIT: (
        "Only one message at a time. Please allow any other responses to "
        "complete before sending another message, or wait one minute."
    ),
    ErrorKind.REFUSAL: "I'm sorry, but I can't assist with that request.",
    ErrorKind.COUNT_MISMATCH: "Mismatch in the amount of input and output content",
    ErrorKind.FORMAT_ERROR: "Output format does not match the requirements",
    ErrorKind.CONTENT_MISREAD: "Output misreads the provided content",
}

_THEME_COUNT_RE = re.compile(r"exactly (\d+) rows")
_LABEL_PREFIX_RE = re.compile(r"^[^:\n]{1,32}:\s?")


def load_script(path: str | Path) -> list[dict]:
    """Read and validate a mock script JSON file."""
    entries = json.loads(Path(path).read_text("utf-8"))
    return validate_script(entries)


def validate_script(entries: Sequence[Mapping]) -> list[dict]:
    if not isinstance(entries, Sequence) or isinstance(entries, (str, bytes)):
        raise MockScriptError("mock script must be a list of entries")
    validated = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, Mapping):
            raise MockScriptError(f"entry {i} is not an object")
        if ("reply" in entry) == ("error" in entry):
            raise MockScriptError(f"entry {i} must have exactly one of 'reply' or 'error'")
        if "error" in entry:
            try:
                ErrorKind(entry["error"])
            except ValueError:
                raise MockScriptError(f"entry {i} has unknown error kind {entry['error']!r}")
        if "match" in entry and entry["match"] is not None and int(entry["match"]) < 1:
            raise MockScriptError(f"entry {i} has non-positive match index")
        validated.append(dict(entry))
    return validated


class MockBackend:
    """Scripted, thread-safe, deterministic chat-completion stand-in."""

    def __init__(self, script: Sequence[Mapping] | None = None, fallback_auto: bool = True):
        self._entries = validate_script(script or [])
        self._consumed = [False] * len(self._entries)
        self._lock = threading.Lock()
        self.fallback_auto = fallback_auto

    def complete(
        self, request: LlmRequest, batch_index: int = 1
    ) -> Union[RawResponse, GatewayError]:
        entry = self._take(batch_index)
        if entry is None:
            if not self.fallback_auto:
                raise MockScriptError(f"no scripted entry for batch {batch_index}")
            return self._respond(request, auto_reply(request))
        if entry.get("delay_s"):
            time.sleep(float(entry["delay_s"]))
        if "error" in entry:
            kind = ErrorKind(entry["error"])
            message = entry.get("message") or CANONICAL_MESSAGES[kind]
            return GatewayError(kind, message, {"scripted": True})
        return self._respond(request, entry["reply"])

    def _take(self, batch_index: int) -> dict | None:
        with self._lock:
            for i, entry in enumerate(self._entries):
                if self._consumed[i]:
                    continue
                match = entry.get("match")
                if match is None or int(match) == batch_index:
                    self._consumed[i] = True
                    return entry
        return None

    @staticmethod
    def _respond(request: LlmRequest, text: str) -> RawResponse:
        return RawResponse(
            text=text,
            input_tokens=estimate_tokens(request.prompt) + estimate_tokens(request.payload),
            output_tokens=estimate_tokens(text),
            model_id=request.model_id,
        )


def auto_reply(request: LlmRequest) -> str:
    """Fabricate a valid table for a request, quoting its own payload."""
    match = _THEME_COUNT_RE.search(request.prompt)
    count = int(match.group(1)) if match else 10
    texts = payload_texts(request.payload)
    return render_reply(fabricate_rows(texts, count))


def payload_texts(payload: str) -> list[str]:
    """Entry bodies from a rendered payload, speaker prefixes stripped."""
    texts = []
    for block in payload.split("\n\n"):
        body = _LABEL_PREFIX_RE.sub("", block, count=1).strip()
        if body:
            texts.append(body)
    return texts


def fabricate_rows(texts: Sequence[str], theme_count: int) -> list[tuple[str, str, list[str], int]]:
    """Deterministic (theme, description, quotes, count) rows.

    Quotes are leading excerpts of the source texts (whitespace-collapsed),
    so they verify as provenance matches. Sources containing pipes are
    skipped when possible to keep the table well-formed.
    """
    pool = [t for t in texts if "|" not in t] or ["no usable entries were provided"]
    rows = []
    for i in range(theme_count):
        words = pool[i % len(pool)].split()
        quote = " ".join(words[:12])
        topic = " ".join(words[:3]) or "the data"
        rows.append(
            (
                f"Topic {i + 1}: {topic}",
                f"Recurring remarks in this part about {topic}.",
                [quote],
                1,
            )
        )
    return rows


def render_reply(rows: Sequence[tuple[str, str, list[str], int]]) -> str:
    """Render fabricated rows as the pipe table a cooperative model returns."""
    lines = [
        "| Themes | Description | Quotes | Participant Count |",
        "| --- | --- | --- | --- |",
    ]
    for theme, description, quotes, count in rows:
        joined = " || ".join(quotes)
        lines.append(f"| {theme} | {description} | {joined} | {count} |")
    return "\n".join(lines)


def script_for_plan(plan: BatchPlan, theme_count: int) -> list[dict]:
    """A full script of valid tables, one reply per planned batch."""
    script = []
    for batch in plan.batches:
        texts = [item.text for item in batch.items]
        rows = fabricate_rows(texts, theme_count)
        script.append({"match": batch.index + 1, "reply": render_reply(rows)})
    return script
