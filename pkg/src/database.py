"""Database module for Diff Sentinel.

This module manages all SQLite storage. The database lives in the store
directory (``~/.diffsentinel`` unless configured) and contains:

Tables:
    reports: Analysis reports, append-only, one JSON payload per report
    ledger_entries: Credit ledger, append-only, in application order
    context_docs: Ingested project documentation for retrieval
    settings: Store metadata such as the opening credit balance
"""

import json
import logging
import sqlite3
import threading
from datetime import datetime
from pathlib import Path
from typing import Iterable, Optional

from .credits import CreditLedger, LedgerEntry
from .llm_gateway import TokenUsage
from .reporting import AnalysisReport, report_from_dict, report_to_dict
from .retrieval import ContextDoc, DocKind

logger = logging.getLogger(__name__)

DB_FILENAME = "diffsentinel.db"
OPENING_BALANCE_KEY = "opening_balance"

_db_path: Optional[Path] = None
_write_lock = threading.Lock()


class StoreError(Exception):
    """The store could not be read or written."""


class ReportNotFoundError(StoreError):
    """No report with the requested id."""


def default_store_dir() -> Path:
    return Path.home() / ".diffsentinel"


def set_db_path(path: Optional[Path]) -> None:
    """Point the module at a database file (None restores the default)."""
    global _db_path
    _db_path = Path(path) if path is not None else None


def get_db_path() -> Path:
    """Get the database path, creating its directory if needed.

    Returns:
        Path: The configured path, or ``~/.diffsentinel/diffsentinel.db``.
    """
    path = _db_path or default_store_dir() / DB_FILENAME
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def get_connection() -> sqlite3.Connection:
    """Get a database connection with row factory enabled.

    Raises:
        StoreError: If the database cannot be opened.
    """
    try:
        conn = sqlite3.connect(get_db_path(), timeout=30)
    except (sqlite3.Error, OSError) as e:
        raise StoreError(f"Cannot open store: {e}") from e
    conn.row_factory = sqlite3.Row
    return conn


def init_database():
    """Create all tables if they don't already exist."""
    conn = get_connection()
    try:
        cursor = conn.cursor()

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS reports (
                report_id TEXT PRIMARY KEY,
                repo TEXT NOT NULL,
                pr_number INTEGER NOT NULL,
                head_sha TEXT NOT NULL,
                created_at TEXT NOT NULL,
                payload TEXT NOT NULL
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS ledger_entries (
                seq INTEGER PRIMARY KEY AUTOINCREMENT,
                timestamp TEXT NOT NULL,
                model_id TEXT NOT NULL,
                prompt_tokens INTEGER NOT NULL,
                completion_tokens INTEGER NOT NULL,
                cost INTEGER NOT NULL,
                balance INTEGER NOT NULL
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS context_docs (
                doc_id TEXT PRIMARY KEY,
                source_path TEXT NOT NULL,
                kind TEXT NOT NULL,
                text TEXT NOT NULL,
                ingested_at TEXT DEFAULT CURRENT_TIMESTAMP
            )
        """)

        cursor.execute("""
            CREATE TABLE IF NOT EXISTS settings (
                key TEXT PRIMARY KEY,
                value TEXT
            )
        """)

        cursor.execute("CREATE INDEX IF NOT EXISTS idx_reports_repo ON reports(repo, pr_number)")
        conn.commit()
    except sqlite3.Error as e:
        raise StoreError(f"Cannot initialize store: {e}") from e
    finally:
        conn.close()


# =============================================================================
# Reports
# =============================================================================

def save_report(report: AnalysisReport) -> str:
    """Append a report.

    Returns:
        str: The report id.

    Raises:
        StoreError: If the id already exists or the write fails.
    """
    payload = json.dumps(report_to_dict(report), sort_keys=True)
    pr = report.pr
    with _write_lock:
        conn = get_connection()
        try:
            conn.execute(
                "INSERT INTO reports (report_id, repo, pr_number, head_sha, created_at, payload) "
                "VALUES (?, ?, ?, ?, ?, ?)",
                (report.report_id, f"{pr.repo_owner}/{pr.repo_name}", pr.number,
                 pr.head_sha, report.created_at.isoformat(), payload),
            )
            conn.commit()
        except sqlite3.IntegrityError as e:
            raise StoreError(f"Report {report.report_id} already stored") from e
        except sqlite3.Error as e:
            raise StoreError(f"Cannot store report {report.report_id}: {e}") from e
        finally:
            conn.close()
    logger.debug("Stored report %s", report.report_id)
    return report.report_id


def load_report(report_id: str) -> AnalysisReport:
    """Load a stored report.

    Raises:
        ReportNotFoundError: If no report has this id.
        StoreError: If the stored payload cannot be decoded.
    """
    conn = get_connection()
    try:
        row = conn.execute("SELECT payload FROM reports WHERE report_id = ?", (report_id,)).fetchone()
    except sqlite3.Error as e:
        raise StoreError(f"Cannot read report {report_id}: {e}") from e
    finally:
        conn.close()
    if row is None:
        raise ReportNotFoundError(f"Report {report_id} not found")
    try:
        return report_from_dict(json.loads(row["payload"]))
    except (ValueError, KeyError, TypeError) as e:
        raise StoreError(f"Report {report_id} is unreadable: {e}") from e


# =============================================================================
# Credit ledger
# =============================================================================

def append_ledger_entry(entry: LedgerEntry):
    """Append one ledger entry (called by the ledger while it holds its lock)."""
    with _write_lock:
        conn = get_connection()
        try:
            conn.execute(
                "INSERT INTO ledger_entries "
                "(timestamp, model_id, prompt_tokens, completion_tokens, cost, balance) "
                "VALUES (?, ?, ?, ?, ?, ?)",
                (entry.timestamp.isoformat(), entry.model_id, entry.usage.prompt_tokens,
                 entry.usage.completion_tokens, entry.cost, entry.balance),
            )
            conn.commit()
        except sqlite3.Error as e:
            raise StoreError(f"Cannot append ledger entry: {e}") from e
        finally:
            conn.close()


def load_ledger_entries() -> list[LedgerEntry]:
    """All ledger entries, oldest first."""
    conn = get_connection()
    try:
        rows = conn.execute("SELECT * FROM ledger_entries ORDER BY seq").fetchall()
    except sqlite3.Error as e:
        raise StoreError(f"Cannot read ledger: {e}") from e
    finally:
        conn.close()
    return [
        LedgerEntry(
            timestamp=datetime.fromisoformat(row["timestamp"]),
            model_id=row["model_id"],
            usage=TokenUsage.of(row["prompt_tokens"], row["completion_tokens"]),
            cost=row["cost"],
            balance=row["balance"],
        )
        for row in rows
    ]


def get_opening_balance(default: int) -> int:
    """Opening balance recorded in the store; ``default`` is recorded on first use."""
    stored = get_setting(OPENING_BALANCE_KEY)
    if stored is None:
        set_setting(OPENING_BALANCE_KEY, str(default))
        return default
    return int(stored)


def open_ledger(default_opening_balance: int) -> CreditLedger:
    """Ledger backed by the store; new entries are persisted as they are applied."""
    return CreditLedger(
        get_opening_balance(default_opening_balance),
        load_ledger_entries(),
        on_append=append_ledger_entry,
    )


# =============================================================================
# Context documents
# =============================================================================

def save_context_docs(docs: Iterable[ContextDoc]) -> int:
    """Insert or replace documents by doc_id.

    Returns:
        int: Number of documents written.
    """
    rows = [(d.doc_id, d.source_path, d.kind.value, d.text) for d in docs]
    with _write_lock:
        conn = get_connection()
        try:
            conn.executemany(
                "INSERT OR REPLACE INTO context_docs (doc_id, source_path, kind, text) VALUES (?, ?, ?, ?)",
                rows,
            )
            conn.commit()
        except sqlite3.Error as e:
            raise StoreError(f"Cannot store context documents: {e}") from e
        finally:
            conn.close()
    return len(rows)


def load_context_docs() -> list[ContextDoc]:
    """All stored documents ordered by doc_id."""
    conn = get_connection()
    try:
        rows = conn.execute("SELECT doc_id, source_path, kind, text FROM context_docs ORDER BY doc_id").fetchall()
    except sqlite3.Error as e:
        raise StoreError(f"Cannot read context documents: {e}") from e
    finally:
        conn.close()
    return [ContextDoc(row["doc_id"], row["source_path"], DocKind(row["kind"]), row["text"]) for row in rows]


# =============================================================================
# Settings
# =============================================================================

def get_setting(key: str, default: Optional[str] = None) -> Optional[str]:
    """Get a setting value.

    Args:
        key: Setting key.
        default: Default value to return if the key is not present.

    Returns:
        Optional[str]: Stored setting value, or `default` if missing.
    """
    conn = get_connection()
    try:
        row = conn.execute("SELECT value FROM settings WHERE key = ?", (key,)).fetchone()
    finally:
        conn.close()
    return row["value"] if row else default


def set_setting(key: str, value: str):
    """Set a setting value.

    Args:
        key: Setting key.
        value: Setting value to store.
    """
    with _write_lock:
        conn = get_connection()
        try:
            conn.execute("INSERT OR REPLACE INTO settings (key, value) VALUES (?, ?)", (key, value))
            conn.commit()
        finally:
            conn.close()
