"""Render a theme-prevalence figure next to the delimited output."""

from __future__ import annotations

from pathlib import Path

from matplotlib.figure import Figure

from .themeparse import ThemeTable


def save_theme_chart(table: ThemeTable, path: str | Path) -> Path:
    """Horizontal bar chart of participant counts per theme.

    Uses the object-oriented matplotlib API (no global backend state), so it
    is safe to call from service worker threads.
    """
    path = Path(path)
    themes = [entry.theme for entry in table.entries]
    counts = [entry.participant_count for entry in table.entries]

    height = max(2.5, 0.4 * len(themes) + 1.2)
    fig = Figure(figsize=(9, height))
    ax = fig.add_subplot(111)
    positions = range(len(themes) - 1, -1, -1)
    ax.barh(list(positions), counts, color="#4878a8")
    ax.set_yticks(list(positions))
    ax.set_yticklabels([t if len(t) <= 48 else t[:45] + "..." for t in themes], fontsize=8)
    ax.set_xlabel("participants supporting the theme")
    ax.set_title("Theme prevalence")
    ax.xaxis.get_major_locator().set_params(integer=True)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    return path
