"""Token estimation and greedy batching under a context budget.

The default estimator is the documented heuristic ceil(utf8_bytes / 4); any
callable with the same contract (deterministic, nonnegative, monotone over
prefixes) can be plugged in instead, e.g. an exact tokenizer.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .corpus import Dataset, Record, Role
from .errors import BudgetTooSmallError

TokenEstimator = Callable[[str], int]

# A batch (or record fragment) below this size is not worth submitting.
MIN_FRAGMENT_TOKENS = 64

# End of sentence: terminal punctuation, optional closing quotes/brackets,
# then whitespace. The whitespace stays with the preceding fragment so that
# fragment concatenation reproduces the original text exactly.
_SENTENCE_END = re.compile(r"[.!?…][\"'”’)\]]*\s+")
_WHITESPACE = re.compile(r"\s+")


def estimate_tokens(text: str) -> int:
    """Heuristic token count: ceil(UTF-8 byte length / 4)."""
    return math.ceil(len(text.encode("utf-8")) / 4)


@dataclass(frozen=True)
class TokenBudget:
    """Context-window accounting: what is left for batch payloads."""

    context_limit: int = 4096
    prompt_reserve: int = 600
    completion_reserve: int = 1200

    def __post_init__(self) -> None:
        if self.effective_budget <= 0:
            raise BudgetTooSmallError(
                f"effective budget {self.effective_budget} <= 0 "
                f"(context {self.context_limit}, reserves "
                f"{self.prompt_reserve}+{self.completion_reserve})"
            )

    @property
    def effective_budget(self) -> int:
        return self.context_limit - self.prompt_reserve - self.completion_reserve


@dataclass
class RecordFragment:
    """A record, or one piece of an oversized record, ready for a batch."""

    record_id: str
    fragment_index: int
    fragment_total: int
    text: str
    speaker_label: str
    role: Role
    ordinal: int


@dataclass
class Batch:
    index: int
    items: list[RecordFragment]
    estimated_tokens: int


@dataclass
class BatchPlan:
    batches: list[Batch]
    budget: TokenBudget
    total_estimated_tokens: int


def split_oversized_record(
    record: Record,
    effective_budget: int,
    estimator: TokenEstimator = estimate_tokens,
) -> list[RecordFragment]:
    """Split a record whose estimate exceeds the budget into fragments.

    Cut points prefer sentence boundaries, then whitespace, then a hard
    character offset. Concatenating the fragment texts restores the record
    text exactly.
    """
    if effective_budget < MIN_FRAGMENT_TOKENS:
        raise BudgetTooSmallError(
            f"effective budget {effective_budget} below minimum fragment size "
            f"{MIN_FRAGMENT_TOKENS}"
        )
    if estimator(record.text) <= effective_budget:
        raise ValueError(f"record {record.record_id!r} already fits the budget")
    pieces = split_text(record.text, effective_budget, estimator)
    return [
        RecordFragment(
            record_id=record.record_id,
            fragment_index=i,
            fragment_total=len(pieces),
            text=piece,
            speaker_label=record.speaker_label,
            role=record.role,
            ordinal=record.ordinal,
        )
        for i, piece in enumerate(pieces)
    ]


def split_text(text: str, budget: int, estimator: TokenEstimator = estimate_tokens) -> list[str]:
    """Partition text into pieces each estimating <= budget tokens."""
    pieces: list[str] = []
    rest = text
    while rest:
        if estimator(rest) <= budget:
            pieces.append(rest)
            break
        window = rest[: _max_fit(rest, budget, estimator)]
        cut = _last_boundary(window) or len(window)
        pieces.append(rest[:cut])
        rest = rest[cut:]
    return pieces


def _max_fit(text: str, budget: int, estimator: TokenEstimator) -> int:
    """Largest prefix length (in characters) whose estimate fits the budget."""
    lo, hi = 1, len(text)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if estimator(text[:mid]) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return lo


def _last_boundary(window: str) -> int:
    for pattern in (_SENTENCE_END, _WHITESPACE):
        last = 0
        for match in pattern.finditer(window):
            last = match.end()
        if last:
            return last
    return 0


def whole_fragment(record: Record) -> RecordFragment:
    return RecordFragment(
        record_id=record.record_id,
        fragment_index=0,
        fragment_total=1,
        text=record.text,
        speaker_label=record.speaker_label,
        role=record.role,
        ordinal=record.ordinal,
    )


def plan_batches(
    dataset: Dataset,
    budget: TokenBudget,
    estimator: TokenEstimator = estimate_tokens,
) -> BatchPlan:
    """Greedy first-fit packing of records (in ordinal order) into batches.

    A record that alone exceeds the effective budget is split and its
    fragments packed in order. A record exactly filling the remaining space
    joins the current batch.
    """
    effective = budget.effective_budget
    if effective < MIN_FRAGMENT_TOKENS:
        raise BudgetTooSmallError(
            f"effective budget {effective} below minimum fragment size {MIN_FRAGMENT_TOKENS}"
        )

    batches: list[Batch] = []
    current: list[RecordFragment] = []
    current_sum = 0

    def flush() -> None:
        nonlocal current, current_sum
        if current:
            batches.append(Batch(index=len(batches), items=current, estimated_tokens=current_sum))
            current = []
            current_sum = 0

    def place(fragment: RecordFragment) -> None:
        nonlocal current_sum
        size = estimator(fragment.text)
        if current and current_sum + size > effective:
            flush()
        current.append(fragment)
        current_sum += size

    for record in dataset.records:
        if estimator(record.text) > effective:
            # Fragments get dedicated batches: letting them share a batch
            # with neighbors makes the batch count non-monotone in the
            # budget (a bigger budget grows the first fragment past the
            # space a neighbor left open).
            flush()
            for fragment in split_oversized_record(record, effective, estimator):
                place(fragment)
            flush()
        else:
            place(whole_fragment(record))
    flush()

    return BatchPlan(
        batches=batches,
        budget=budget,
        total_estimated_tokens=sum(b.estimated_tokens for b in batches),
    )


def replan_items(
    items: Sequence[RecordFragment],
    effective_budget: int,
    estimator: TokenEstimator = estimate_tokens,
) -> list[list[RecordFragment]]:
    """Re-pack a batch's items under a smaller budget (recovery path).

    Items larger than the new budget are split further; provenance
    (record_id, speaker, ordinal) is preserved, fragment indices are
    renumbered within each original item.
    """
    if effective_budget < MIN_FRAGMENT_TOKENS:
        raise BudgetTooSmallError(
            f"effective budget {effective_budget} below minimum fragment size "
            f"{MIN_FRAGMENT_TOKENS}"
        )
    flat: list[RecordFragment] = []
    for item in items:
        if estimator(item.text) <= effective_budget:
            flat.append(item)
            continue
        pieces = split_text(item.text, effective_budget, estimator)
        for i, piece in enumerate(pieces):
            flat.append(
                RecordFragment(
                    record_id=item.record_id,
                    fragment_index=i,
                    fragment_total=len(pieces),
                    text=piece,
                    speaker_label=item.speaker_label,
                    role=item.role,
                    ordinal=item.ordinal,
                )
            )
    groups: list[list[RecordFragment]] = []
    current: list[RecordFragment] = []
    current_sum = 0
    for fragment in flat:
        size = estimator(fragment.text)
        if current and current_sum + size > effective_budget:
            groups.append(current)
            current = []
            current_sum = 0
        current.append(fragment)
        current_sum += size
    if current:
        groups.append(current)
    return groups


def render_payload(items: Sequence[RecordFragment]) -> str:
    """Render batch items as labeled entries separated by blank lines."""
    parts = []
    for item in items:
        if item.speaker_label:
            parts.append(f"{item.speaker_label}: {item.text}")
        else:
            parts.append(item.text)
    return "\n\n".join(parts)
