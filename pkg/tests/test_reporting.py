from dataclasses import replace
from datetime import datetime, timezone

import pytest

from src.findings import Finding, Severity
from src.llm_gateway import TokenUsage
from src.reporting import (
    NO_FINDINGS,
    REPORT_TITLE,
    AnalysisReport,
    ChunkProvenance,
    make_report_id,
    render_markdown,
    render_notification,
    report_from_dict,
    report_to_dict,
    summary_line,
)
from src.slack import MAX_TEXT_CHARS

from .helpers import make_pr

CREATED = datetime(2024, 6, 1, 12, 0, tzinfo=timezone.utc)


def make_report(findings=(), notes=()):
    pr = make_pr()
    return AnalysisReport(
        report_id=make_report_id(pr, CREATED),
        pr=pr,
        findings=tuple(findings),
        chunk_count=2,
        per_chunk_provenance=(ChunkProvenance(0, "gpt-4o", 2), ChunkProvenance(1, None, 2, "timeout")),
        usage_total=TokenUsage.of(1200, 300),
        elapsed_ms=840,
        created_at=CREATED,
        notes=tuple(notes),
    )


HIGH = Finding.create(
    "Reentrancy in withdraw", "reentrancy", Severity.HIGH, "Vault.sol", 21, 23,
    description="External call before the balance is cleared.",
    impact="Funds can be drained.",
    remediation="Clear the balance before calling out.",
    confidence=0.9,
)
LOW = Finding.create("Verbose error", "information_disclosure", Severity.LOW, "api.py", 4, 4)


def test_report_id_is_stable():
    pr = make_pr()
    assert make_report_id(pr, CREATED) == make_report_id(pr, CREATED)
    assert len(make_report_id(pr, CREATED)) == 24
    assert make_report_id(pr, CREATED) != make_report_id(make_pr(number=8), CREATED)


def test_chunk_count_at_least_one():
    with pytest.raises(ValueError):
        AnalysisReport("r", make_pr(), (), 0, (), TokenUsage(), 0, CREATED)


def test_summary_line():
    assert summary_line(()) == NO_FINDINGS
    assert summary_line((HIGH, LOW)) == "1 high, 1 low"


def test_markdown_layout():
    text = render_markdown(make_report([HIGH, LOW]))
    assert text.startswith(REPORT_TITLE + "\n\n")
    assert f"**acme/vault#7** at `{'a' * 7}`, 2 chunk(s) analyzed" in text
    assert "### 1. [HIGH] Reentrancy in withdraw" in text
    assert "- **Location:** `Vault.sol:21-23`" in text
    assert "**Remediation:** Clear the balance before calling out." in text
    assert text.index("[HIGH]") < text.index("[LOW]")
    assert text.endswith("\n") and not text.endswith("\n\n")


def test_markdown_skips_empty_sections_and_shows_notes():
    text = render_markdown(make_report([LOW], notes=["Nothing else to say."]))
    assert "**Impact:**" not in text
    assert "_Nothing else to say._" in text


def test_markdown_ignores_timing():
    a = make_report([HIGH])
    b = replace(a, elapsed_ms=5, created_at=datetime(2030, 1, 1, tzinfo=timezone.utc))
    assert render_markdown(a) == render_markdown(b)


def test_notification():
    message = render_notification(make_report([HIGH]))
    assert "acme/vault#7" in message.text and "1 high" in message.text
    assert len(message.text) <= MAX_TEXT_CHARS


def test_dict_round_trip():
    report = make_report([HIGH, LOW], notes=["n"])
    assert report_from_dict(report_to_dict(report)) == report


def test_has_findings_at():
    report = make_report([LOW])
    assert report.has_findings_at(Severity.LOW)
    assert not report.has_findings_at(Severity.MEDIUM)
