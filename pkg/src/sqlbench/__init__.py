"""sqlbench: a text-to-SQL benchmarking harness.

Covers the full loop: dataset ingestion, text-representation prompt
rendering, exemplar selection, prediction through a chat-completions
endpoint, scoring (exact-set match, execution accuracy, valid efficiency
score), per-difficulty reporting, and fine-tuning corpus export.
"""

__version__ = "0.1.0"
