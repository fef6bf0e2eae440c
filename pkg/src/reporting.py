"""Analysis reports: the record itself, its JSON form and its markdown rendering."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from datetime import datetime
from typing import Any, Optional

from .diffs import PullRequestRef
from .findings import Finding, Severity, severity_counts
from .llm_gateway import TokenUsage
from .slack import NotificationMessage

REPORT_TITLE = "## Diff Sentinel security review"
NO_FINDINGS = "No security findings."


@dataclass(frozen=True)
class ChunkProvenance:
    chunk_index: int
    selected_model: Optional[str]
    candidate_count: int
    error: Optional[str] = None


@dataclass(frozen=True)
class AnalysisReport:
    report_id: str
    pr: PullRequestRef
    findings: tuple[Finding, ...]
    chunk_count: int
    per_chunk_provenance: tuple[ChunkProvenance, ...]
    usage_total: TokenUsage
    elapsed_ms: int
    created_at: datetime
    notes: tuple[str, ...] = ()

    def __post_init__(self):
        if self.chunk_count < 1:
            raise ValueError("chunk_count must be >= 1")
        if self.elapsed_ms < 0:
            raise ValueError("elapsed_ms must be >= 0")

    def has_findings_at(self, gate: Severity) -> bool:
        return any(f.severity.rank >= gate.rank for f in self.findings)


def make_report_id(pr: PullRequestRef, created_at: datetime) -> str:
    payload = f"{pr.slug}|{pr.head_sha}|{created_at.isoformat()}".encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:24]


def summary_line(findings: tuple[Finding, ...]) -> str:
    """``"1 high, 1 low"``; severities without findings are omitted."""
    if not findings:
        return NO_FINDINGS
    counts = severity_counts(findings)
    return ", ".join(f"{counts[s]} {s.value}" for s in Severity if counts[s])


def _finding_section(position: int, finding: Finding) -> str:
    lines = [
        f"### {position}. [{finding.severity.value.upper()}] {finding.title}",
        "",
        f"- **Class:** `{finding.vuln_class}`",
        f"- **Severity:** {finding.severity.value}",
        f"- **Location:** `{finding.location}`",
        f"- **Confidence:** {finding.confidence:.2f}",
    ]
    for label, text in (("Description", finding.description),
                        ("Impact", finding.impact),
                        ("Remediation", finding.remediation)):
        if text:
            lines.extend(["", f"**{label}:** {text}"])
    return "\n".join(lines)


def render_markdown(report: AnalysisReport) -> str:
    """Render the pull request summary comment.

    Output depends only on the report's findings, pull request and chunk
    count, so identical runs render byte-identical text.
    """
    parts = [
        REPORT_TITLE,
        f"**{report.pr.slug}** at `{report.pr.head_sha[:7]}`, "
        f"{report.chunk_count} chunk(s) analyzed",
        summary_line(report.findings),
    ]
    parts.extend(f"_{note}_" for note in report.notes)
    parts.extend(_finding_section(i, f) for i, f in enumerate(report.findings, start=1))
    return "\n\n".join(parts) + "\n"


def render_notification(report: AnalysisReport) -> NotificationMessage:
    return NotificationMessage.of(
        f"Diff Sentinel reviewed {report.pr.slug} ({report.pr.head_sha[:7]}): "
        f"{summary_line(report.findings)} [report {report.report_id}]"
    )


def report_to_dict(report: AnalysisReport) -> dict[str, Any]:
    pr = report.pr
    return {
        "report_id": report.report_id,
        "pr": {
            "repo_owner": pr.repo_owner,
            "repo_name": pr.repo_name,
            "number": pr.number,
            "head_sha": pr.head_sha,
            "base_sha": pr.base_sha,
        },
        "findings": [f.to_dict() for f in report.findings],
        "chunk_count": report.chunk_count,
        "per_chunk_provenance": [
            {
                "chunk_index": p.chunk_index,
                "selected_model": p.selected_model,
                "candidate_count": p.candidate_count,
                "error": p.error,
            }
            for p in report.per_chunk_provenance
        ],
        "usage_total": {
            "prompt_tokens": report.usage_total.prompt_tokens,
            "completion_tokens": report.usage_total.completion_tokens,
            "total_tokens": report.usage_total.total_tokens,
        },
        "elapsed_ms": report.elapsed_ms,
        "created_at": report.created_at.isoformat(),
        "notes": list(report.notes),
    }


def report_from_dict(data: dict[str, Any]) -> AnalysisReport:
    """Inverse of ``report_to_dict``.

    Raises:
        KeyError, ValueError: If the payload is incomplete or invalid.
    """
    usage = data["usage_total"]
    return AnalysisReport(
        report_id=data["report_id"],
        pr=PullRequestRef(**data["pr"]),
        findings=tuple(Finding.from_dict(f) for f in data["findings"]),
        chunk_count=data["chunk_count"],
        per_chunk_provenance=tuple(ChunkProvenance(**p) for p in data["per_chunk_provenance"]),
        usage_total=TokenUsage(usage["prompt_tokens"], usage["completion_tokens"], usage["total_tokens"]),
        elapsed_ms=data["elapsed_ms"],
        created_at=datetime.fromisoformat(data["created_at"]),
        notes=tuple(data.get("notes", ())),
    )
