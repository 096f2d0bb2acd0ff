"""Merge per-batch theme tables into one table of the requested size.

Grouping is lexical: themes sharing a normalized name (casefold, whitespace
collapse, edge punctuation stripped) merge into one entry. Ranking follows
recounted participant prevalence, then verified-quote count, then first
appearance, which makes the merge deterministic for a given table order.
"""

from __future__ import annotations

import logging
from typing import Sequence

from .corpus import Dataset
from .themeparse import Quote, ThemeEntry, ThemeTable, normalize_quote

logger = logging.getLogger(__name__)


def merge_key(theme: str) -> str:
    """Normalized grouping key for a theme name (idempotent)."""
    return normalize_quote(theme)


def merge_tables(tables: Sequence[ThemeTable], target_count: int, dataset: Dataset) -> ThemeTable:
    """Merge tables, keeping the top target_count groups.

    Merged entries take the longest description and the union of quotes
    (deduplicated by normalized text); participant counts are recounted over
    the union. Fewer distinct groups than requested is a warning, not a
    failure: all groups are returned.
    """
    if not tables:
        raise ValueError("merge_tables needs at least one table")
    if target_count < 1:
        raise ValueError(f"target_count must be >= 1, got {target_count}")

    groups: dict[str, dict] = {}
    for table in tables:
        for entry in table.entries:
            key = merge_key(entry.theme)
            group = groups.get(key)
            if group is None:
                group = groups[key] = {
                    "order": len(groups),
                    "theme": entry.theme,
                    "description": entry.description,
                    "quotes": {},
                }
            if len(entry.description) > len(group["description"]):
                group["description"] = entry.description
            for quote in entry.quotes:
                qkey = normalize_quote(quote.text)
                group["quotes"].setdefault(qkey, quote)

    speaker_of = {record.record_id: record.speaker_label for record in dataset.records}
    merged: list[tuple[int, int, int, ThemeEntry]] = []
    for group in groups.values():
        quotes = [Quote(q.text, q.matched_record_id) for q in group["quotes"].values()]
        speakers = {
            speaker_of[q.matched_record_id] for q in quotes if q.matched_record_id in speaker_of
        }
        verified = sum(1 for q in quotes if q.matched_record_id is not None)
        entry = ThemeEntry(
            theme=group["theme"],
            description=group["description"],
            quotes=quotes,
            participant_count=len(speakers),
            claimed_count=None,
        )
        merged.append((len(speakers), verified, group["order"], entry))

    merged.sort(key=lambda item: (-item[0], -item[1], item[2]))
    if len(merged) < target_count:
        logger.warning(
            "only %d distinct themes across batches; %d were requested",
            len(merged),
            target_count,
        )
    entries = [item[3] for item in merged[:target_count]]
    first = tables[0]
    return ThemeTable(
        entries=entries,
        source_batch="merged",
        model_id=first.model_id,
        preset_version=first.preset_version,
        temperature=first.temperature,
    )
