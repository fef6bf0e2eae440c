#!/usr/bin/env python3
"""Diff Sentinel - Main entry point.

Security review of pull request diffs with LLM analyzers. Runs either as a
GitHub webhook service or as a one-shot command-line tool.

Features:
    - Webhook intake with HMAC signature verification
    - Diff chunking sized to the model context window
    - Several analyzer models per chunk with a judge model picking the best
    - Optional project context retrieval from ingested documentation
    - Credit ledger with pre-flight balance checks
    - Review comments on the pull request and Slack notifications
    - Evaluation against a labeled dataset

Usage:
    python main.py serve                  # Run the webhook service
    python main.py analyze change.diff    # Analyze a local diff
    DiffSentinel analyze --git main..HEAD # Run as compiled executable

Requirements:
    - Python 3.10+ (for development)
    - A GitHub token and webhook secret for the service mode
"""

import os
import sys

# Ensure the src directory is in the path
if getattr(sys, 'frozen', False):
    app_dir = os.path.dirname(sys.executable)
else:
    app_dir = os.path.dirname(os.path.abspath(__file__))

sys.path.insert(0, app_dir)

from src.cli import main


if __name__ == "__main__":
    sys.exit(main())
