"""Column definitions for the aligned text tables printed by the CLI."""

from __future__ import annotations

from typing import Any

EVAL_COLUMNS: list[dict[str, Any]] = [
    {"key": "model", "header": "Model", "width": 16, "align": "left", "format": "{}"},
    {"key": "task", "header": "Task", "width": 14, "align": "left", "format": "{}"},
    {"key": "rag", "header": "RAG", "width": 4, "align": "left", "format": "{}"},
    {"key": "precision", "header": "Precision", "width": 9, "align": "right", "format": "{:.2f}"},
    {"key": "recall", "header": "Recall", "width": 6, "align": "right", "format": "{:.2f}"},
    {"key": "f1", "header": "F1", "width": 5, "align": "right", "format": "{:.2f}"},
    {"key": "accuracy", "header": "Accuracy", "width": 8, "align": "right", "format": "{:.2f}"},
]

LEDGER_COLUMNS: list[dict[str, Any]] = [
    {"key": "timestamp", "header": "Timestamp", "width": 25, "align": "left", "format": "{}"},
    {"key": "model_id", "header": "Model", "width": 16, "align": "left", "format": "{}"},
    {"key": "prompt_tokens", "header": "Prompt", "width": 8, "align": "right", "format": "{:,}"},
    {"key": "completion_tokens", "header": "Completion", "width": 10, "align": "right", "format": "{:,}"},
    {"key": "cost", "header": "Cost", "width": 8, "align": "right", "format": "{:,}"},
    {"key": "balance", "header": "Balance", "width": 12, "align": "right", "format": "{:,}"},
]

INGEST_COLUMNS: list[dict[str, Any]] = [
    {"key": "kind", "header": "Kind", "width": 20, "align": "left", "format": "{}"},
    {"key": "count", "header": "Documents", "width": 9, "align": "right", "format": "{:,}"},
]


def get_headers(columns: list[dict[str, Any]]) -> list[str]:
    return [c["header"] for c in columns]
