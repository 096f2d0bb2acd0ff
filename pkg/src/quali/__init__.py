"""LLM-assisted thematic coding of labeled text corpora.

The pipeline: ingest a dataset (corpus), batch it under the token budget
(chunking), compose instructions (prompts), submit with failure recovery
(gateway/pipeline), parse and verify the resulting theme table (themeparse),
merge batches (consolidate), and export CSV/transcript/figure (exporter,
figures). A loopback HTTP service (service) and a CLI (cli) drive it.
"""

__version__ = "0.1.0"
