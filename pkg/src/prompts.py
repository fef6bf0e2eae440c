"""Prompt templates for analyzers and the judge.

Analyzer templates are plain text with three placeholders: ``{{context}}``
(retrieved project documentation), ``{{diff}}`` (the rendered chunk) and
``{{languages}}``. Operators can replace the built-in templates with their own
files; a template missing any placeholder is rejected at load time.
"""

from __future__ import annotations

import logging
import re
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .chunking import BYTES_PER_TOKEN, Chunk, TokenBudget, estimate_tokens, render_chunk
from .diffs import Language
from .findings import CandidateAnalysis
from .llm_gateway import DIFF_BEGIN, DIFF_END, FINDINGS_CLOSE, FINDINGS_OPEN, ChatRequest
from .retrieval import RetrievalHit

logger = logging.getLogger(__name__)

PLACEHOLDERS = ("{{context}}", "{{diff}}", "{{languages}}")
CONTEXT_BEGIN = "--- BEGIN PROJECT CONTEXT ---"
CONTEXT_END = "--- END PROJECT CONTEXT ---"
NO_CONTEXT = "(no project context)"
TRUNCATION_MARKER = "[...]"

DEFAULT_JUDGE_CRITERION = "the most accurate and actionable analysis"
JUDGE_MAX_RESPONSE_TOKENS = 16
JUDGE_LABELS = string.ascii_uppercase

DEFAULT_SYSTEM_PROMPT = f"""You are a senior application security engineer reviewing a pull request.
Target languages: {{{{languages}}}}.
Report only real, exploitable vulnerabilities introduced or exposed by the change.
Answer with exactly one findings block and nothing else:
{FINDINGS_OPEN}
{{"findings": [{{"title": "...", "class": "lower_snake_tag", "severity": "critical|high|medium|low|informational",
  "description": "...", "impact": "...", "remediation": "...", "file": "path",
  "line_start": 1, "line_end": 1, "confidence": 0.0}}]}}
{FINDINGS_CLOSE}
Line numbers refer to the new side of the diff. Use an empty list when nothing is wrong."""

DEFAULT_USER_PROMPT = """Project context:
{{context}}

Review the following change:
{{diff}}"""

JUDGE_SYSTEM_PROMPT = (
    "You compare several security reviews of the same code change. "
    "Reply with the single capital letter of the review you choose and nothing else."
)

_LABEL_RE = re.compile(r"\b([A-Z])\b")


class TemplateError(Exception):
    """Prompt template is unusable (configuration error)."""


@dataclass(frozen=True)
class PromptTemplate:
    system: str = DEFAULT_SYSTEM_PROMPT
    user: str = DEFAULT_USER_PROMPT

    def __post_init__(self):
        combined = self.system + self.user
        missing = [p for p in PLACEHOLDERS if p not in combined]
        if missing:
            raise TemplateError(f"prompt template is missing placeholder(s): {', '.join(missing)}")

    @classmethod
    def from_files(cls, system_path: Optional[Path], user_path: Optional[Path]) -> "PromptTemplate":
        """Load a template; either part falls back to the built-in text when None.

        Raises:
            TemplateError: If a file cannot be read or a placeholder is missing.
        """
        try:
            system = system_path.read_text(encoding="utf-8") if system_path else DEFAULT_SYSTEM_PROMPT
            user = user_path.read_text(encoding="utf-8") if user_path else DEFAULT_USER_PROMPT
        except OSError as exc:
            raise TemplateError(f"cannot read prompt template: {exc}") from exc
        return cls(system, user)


def render_context(hits: Sequence[RetrievalHit], allowance_tokens: int) -> str:
    """Render retrieved documents, highest score first, within the allowance.

    The document that crosses the allowance is cut and marked; the rest are
    dropped.
    """
    if not hits:
        return NO_CONTEXT
    allowance = allowance_tokens * BYTES_PER_TOKEN
    parts: list[str] = []
    used = 0
    for hit in sorted(hits, key=lambda h: (-h.score, h.doc_id)):
        block = f"[{hit.doc_id}] (score {hit.score:.3f})\n{hit.text}"
        size = len(block.encode("utf-8")) + 1
        if used + size <= allowance:
            parts.append(block)
            used += size
            continue
        room = allowance - used - len(TRUNCATION_MARKER) - 2
        if room > 0:
            cut = block.encode("utf-8")[:room].decode("utf-8", errors="ignore")
            parts.append(f"{cut}\n{TRUNCATION_MARKER}")
        logger.debug("Project context truncated at %s", hit.doc_id)
        break
    if not parts:
        return NO_CONTEXT
    return "\n".join([CONTEXT_BEGIN, *parts, CONTEXT_END])


def assemble_prompt(
    chunk: Chunk,
    retrieval_hits: Sequence[RetrievalHit],
    template: PromptTemplate,
    model_id: str,
    budget: TokenBudget,
    max_response_tokens: int = 2048,
) -> ChatRequest:
    """Build the analyzer request for one chunk.

    Returns:
        ChatRequest: Request with every placeholder substituted.
    """
    languages = ", ".join(chunk.languages) or "unknown"
    substitutions = {
        "{{context}}": render_context(retrieval_hits, budget.context_allowance),
        "{{diff}}": f"{DIFF_BEGIN}\n{render_chunk(chunk)}\n{DIFF_END}",
        "{{languages}}": languages,
    }

    def fill(text: str) -> str:
        for placeholder, value in substitutions.items():
            text = text.replace(placeholder, value)
        return text

    return ChatRequest(
        model_id=model_id,
        system_prompt=fill(template.system),
        user_prompt=fill(template.user),
        max_response_tokens=max_response_tokens,
    )


def build_judge_request(
    candidates: Sequence[CandidateAnalysis],
    judge_model: str,
    criterion: str = DEFAULT_JUDGE_CRITERION,
) -> ChatRequest:
    """Ask the judge to pick one of the labeled candidate analyses.

    Raises:
        ValueError: With fewer than two or more than 26 candidates.
    """
    if not 2 <= len(candidates) <= len(JUDGE_LABELS):
        raise ValueError(f"judge needs 2..{len(JUDGE_LABELS)} candidates, got {len(candidates)}")
    sections = [f"Select {criterion}. Candidates:"]
    for label, candidate in zip(JUDGE_LABELS, candidates):
        sections.append(f"=== Candidate {label} ({candidate.analyzer_model_id}) ===\n{candidate.raw_text}")
    labels = ", ".join(JUDGE_LABELS[:len(candidates)])
    sections.append(f"Reply with exactly one of: {labels}.")
    return ChatRequest(
        model_id=judge_model,
        system_prompt=JUDGE_SYSTEM_PROMPT,
        user_prompt="\n\n".join(sections),
        max_response_tokens=JUDGE_MAX_RESPONSE_TOKENS,
    )


def parse_judge_reply(reply: str, candidate_count: int) -> Optional[int]:
    """Index of the first standalone capital letter naming a candidate, or None."""
    for match in _LABEL_RE.finditer(reply):
        index = JUDGE_LABELS.index(match.group(1))
        if index < candidate_count:
            return index
    return None


def prompt_overhead_tokens(template: PromptTemplate, budget: TokenBudget) -> int:
    """Upper bound on the tokens an analyzer prompt spends outside the rendered chunk.

    Placeholders are filled with their largest possible values: project context
    at its full allowance, every language name, and the diff fences around an
    empty chunk. ``{{diff}}`` is expected once; the chunk text itself is
    charged by the partitioner.
    """
    context_bytes = budget.context_allowance * BYTES_PER_TOKEN + len(CONTEXT_BEGIN) + len(CONTEXT_END) + 2
    fillers = {
        "{{context}}": "x" * max(context_bytes, len(NO_CONTEXT)),
        "{{diff}}": f"{DIFF_BEGIN}\n\n{DIFF_END}",
        "{{languages}}": ", ".join(sorted(language.value for language in Language)),
    }
    text = template.system + template.user
    for placeholder, value in fillers.items():
        text = text.replace(placeholder, value)
    return estimate_tokens(text)
