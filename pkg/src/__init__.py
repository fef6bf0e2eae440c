"""Diff Sentinel - security review of pull request diffs with LLM analyzers."""

__version__ = "1.0.0"
