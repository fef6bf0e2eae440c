"""Structured vulnerability findings: schema, parsing, deduplication and ordering.

Analyzers must answer with a findings block::

    ===FINDINGS===
    {"findings": [{"title": ..., "class": ..., "severity": ..., "description": ...,
                   "impact": ..., "remediation": ..., "file": ..., "line_start": ...,
                   "line_end": ..., "confidence": ...}]}
    ===END===

Free prose without a block is a parse failure; it is never mined heuristically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Optional

from .llm_gateway import FINDINGS_CLOSE, FINDINGS_OPEN

logger = logging.getLogger(__name__)

DEFAULT_CONFIDENCE = 0.5

_BLOCK_RE = re.compile(re.escape(FINDINGS_OPEN) + r"[ \t]*\n(.*?)\n?[ \t]*" + re.escape(FINDINGS_CLOSE), re.DOTALL)
_CLASS_RE = re.compile(r"^[a-z0-9]+(?:_[a-z0-9]+)*$")


class FindingsParseError(Exception):
    """No well-formed findings block was found in an analyzer response."""


class Severity(str, Enum):
    CRITICAL = "critical"
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    INFORMATIONAL = "informational"

    @property
    def rank(self) -> int:
        return _SEVERITY_RANKS[self]


_SEVERITY_RANKS = {
    Severity.CRITICAL: 4,
    Severity.HIGH: 3,
    Severity.MEDIUM: 2,
    Severity.LOW: 1,
    Severity.INFORMATIONAL: 0,
}


def finding_digest(vuln_class: str, file: str, line_start: int, line_end: int, title: str) -> str:
    payload = f"{vuln_class}|{file}|{line_start}-{line_end}|{title}".encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


def normalize_class(raw: str) -> str:
    """``"Insecure-Deserialization"`` -> ``"insecure_deserialization"``."""
    return re.sub(r"[\s\-]+", "_", raw.strip().lower())


@dataclass(frozen=True)
class Finding:
    finding_id: str
    title: str
    vuln_class: str
    severity: Severity
    description: str
    impact: str
    remediation: str
    file: str
    line_start: int
    line_end: int
    confidence: float = DEFAULT_CONFIDENCE

    def __post_init__(self):
        if not _CLASS_RE.match(self.vuln_class):
            raise ValueError(f"vuln_class must be a lower_snake tag, got {self.vuln_class!r}")
        if not 1 <= self.line_start <= self.line_end:
            raise ValueError(f"invalid line range {self.line_start}-{self.line_end}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be within [0, 1]")

    @classmethod
    def create(
        cls,
        title: str,
        vuln_class: str,
        severity: Severity,
        file: str,
        line_start: int,
        line_end: int,
        description: str = "",
        impact: str = "",
        remediation: str = "",
        confidence: float = DEFAULT_CONFIDENCE,
    ) -> "Finding":
        return cls(
            finding_id=finding_digest(vuln_class, file, line_start, line_end, title),
            title=title,
            vuln_class=vuln_class,
            severity=severity,
            description=description,
            impact=impact,
            remediation=remediation,
            file=file,
            line_start=line_start,
            line_end=line_end,
            confidence=confidence,
        )

    @property
    def width(self) -> int:
        return self.line_end - self.line_start + 1

    @property
    def location(self) -> str:
        return f"{self.file}:{self.line_start}-{self.line_end}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "finding_id": self.finding_id,
            "title": self.title,
            "class": self.vuln_class,
            "severity": self.severity.value,
            "description": self.description,
            "impact": self.impact,
            "remediation": self.remediation,
            "file": self.file,
            "line_start": self.line_start,
            "line_end": self.line_end,
            "confidence": self.confidence,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Finding":
        return cls(
            finding_id=data["finding_id"],
            title=data["title"],
            vuln_class=data["class"],
            severity=Severity(data["severity"]),
            description=data["description"],
            impact=data["impact"],
            remediation=data["remediation"],
            file=data["file"],
            line_start=data["line_start"],
            line_end=data["line_end"],
            confidence=data["confidence"],
        )


@dataclass(frozen=True)
class CandidateAnalysis:
    """One analyzer's answer for one chunk."""

    analyzer_model_id: str
    raw_text: str
    findings: tuple[Finding, ...] = ()
    parse_ok: bool = True
    error: Optional[str] = None

    def __post_init__(self):
        if not self.parse_ok and self.findings:
            raise ValueError("a failed parse cannot carry findings")

    @property
    def transport_failed(self) -> bool:
        return self.error is not None


def _strip_fences(body: str) -> str:
    return "\n".join(line for line in body.split("\n") if not line.strip().startswith("```"))


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _finding_from_item(item: Any) -> Finding:
    if not isinstance(item, dict):
        raise ValueError("finding is not an object")

    def text(key: str, required: bool = False) -> str:
        value = item.get(key, "")
        if not isinstance(value, str) or (required and not value.strip()):
            raise ValueError(f"field {key!r} must be a{' non-empty' if required else ''} string")
        return value.strip()

    title = text("title", required=True)
    vuln_class = normalize_class(text("class", required=True))
    severity = Severity(text("severity", required=True).lower())
    file = text("file", required=True)
    line_start, line_end = item.get("line_start"), item.get("line_end")
    if not _is_int(line_start) or not _is_int(line_end):
        raise ValueError("line_start/line_end must be integers")
    confidence = item.get("confidence", DEFAULT_CONFIDENCE)
    if confidence is None:
        confidence = DEFAULT_CONFIDENCE
    if isinstance(confidence, bool) or not isinstance(confidence, (int, float)):
        raise ValueError("confidence must be a number")
    return Finding.create(
        title=title,
        vuln_class=vuln_class,
        severity=severity,
        file=file,
        line_start=line_start,
        line_end=line_end,
        description=text("description"),
        impact=text("impact"),
        remediation=text("remediation"),
        confidence=float(confidence),
    )


def parse_findings(raw: str) -> list[Finding]:
    """Extract findings from the first well-formed findings block.

    Invalid findings (unknown severity, bad line range, missing fields) are
    dropped individually; the rest of the block is kept.

    Raises:
        FindingsParseError: If ``raw`` holds no well-formed block.
    """
    for match in _BLOCK_RE.finditer(raw):
        try:
            document = json.loads(_strip_fences(match.group(1)))
        except json.JSONDecodeError:
            continue
        if not isinstance(document, dict) or not isinstance(document.get("findings"), list):
            continue
        findings = []
        for position, item in enumerate(document["findings"]):
            try:
                findings.append(_finding_from_item(item))
            except ValueError as exc:
                logger.debug("Rejected finding #%d: %s", position, exc)
        return findings
    raise FindingsParseError("no findings block in analyzer response")


def report_order_key(finding: Finding) -> tuple:
    return (-finding.severity.rank, finding.file, finding.line_start,
            finding.line_end, finding.vuln_class, finding.finding_id)


def sort_findings(findings: Iterable[Finding]) -> list[Finding]:
    """Severity descending, then file, then start line."""
    return sorted(findings, key=report_order_key)


def is_duplicate(a: Finding, b: Finding) -> bool:
    """Same class, same file and overlapping line ranges."""
    return (a.vuln_class == b.vuln_class and a.file == b.file
            and a.line_start <= b.line_end and b.line_start <= a.line_end)


def aggregate(selected: Iterable[tuple[int, CandidateAnalysis]]) -> list[Finding]:
    """Pool the selected analyses of every chunk into one deduplicated list.

    Among duplicates the higher-confidence finding wins; ties go to the wider
    range, then the lower chunk index.
    """
    pooled = [(chunk_index, finding)
              for chunk_index, candidate in selected
              for finding in candidate.findings]
    pooled.sort(key=lambda item: (-item[1].confidence, -item[1].width, item[0], item[1].finding_id))
    kept: list[Finding] = []
    for _, finding in pooled:
        if not any(is_duplicate(finding, other) for other in kept):
            kept.append(finding)
    return sort_findings(kept)


def severity_counts(findings: Iterable[Finding]) -> dict[Severity, int]:
    counts = {severity: 0 for severity in Severity}
    for finding in findings:
        counts[finding.severity] += 1
    return counts
