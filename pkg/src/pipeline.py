"""Pull request analysis workflow.

One run walks the steps in a fixed order::

    fetch -> partition -> (analyze, judge) per chunk -> aggregate
          -> debit -> persist -> comment -> notify

Chunks can be analyzed on a worker pool, but candidates are accumulated in
chunk-index order so the report never depends on completion order. Comment and
notification failures are logged and never fail the run.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from typing import Callable, Optional, Sequence

from .chunking import Chunk, TokenBudget, new_side_spans, partition, render_chunk
from .credits import CreditLedger, InsufficientCreditsError, RateCard, estimate_preflight_cost, utc_now
from .diffs import DiffParseError, FileDiff, PullRequestRef, parse_unified_diff
from .findings import CandidateAnalysis, Finding, FindingsParseError, aggregate, parse_findings
from .github_api import GitHubApiError
from .llm_gateway import Gateway, GatewayError, UsageRecorder
from .prompts import (
    DEFAULT_JUDGE_CRITERION,
    PromptTemplate,
    assemble_prompt,
    build_judge_request,
    parse_judge_reply,
    prompt_overhead_tokens,
)
from .reporting import (
    AnalysisReport,
    ChunkProvenance,
    make_report_id,
    render_markdown,
    render_notification,
)
from .retrieval import DEFAULT_TOP_K, ContextIndex, retrieve
from .slack import DeliveryResult, NotificationMessage

logger = logging.getLogger(__name__)

EMPTY_DIFF_NOTE = "Diff has no text hunks (empty or binary-only); nothing was analyzed."


class PipelineError(Exception):
    """Base class for analysis run failures."""


class FetchError(PipelineError):
    """The pull request diff could not be fetched or parsed."""


class ChunkAnalysisError(PipelineError):
    """Every analyzer failed at transport level for one chunk."""

    def __init__(self, chunk_index: int, candidates: Sequence[CandidateAnalysis]):
        errors = "; ".join(f"{c.analyzer_model_id}: {c.error}" for c in candidates)
        super().__init__(f"chunk {chunk_index}: all analyzers failed ({errors})")
        self.chunk_index = chunk_index
        self.candidates = tuple(candidates)


@dataclass(frozen=True)
class AnalysisSettings:
    """Everything a run needs to know about models, budgets and prompts."""

    analyzers: tuple[str, ...]
    budget: TokenBudget
    judge_model: Optional[str] = None
    rates: RateCard = field(default_factory=RateCard)
    template: PromptTemplate = field(default_factory=PromptTemplate)
    rag_enabled: bool = True
    retrieval_k: int = DEFAULT_TOP_K
    judge_criterion: str = DEFAULT_JUDGE_CRITERION
    max_response_tokens: int = 2048
    worker_limit: int = 1
    post_comment: bool = True

    def __post_init__(self):
        if not self.analyzers:
            raise ValueError("at least one analyzer is required")
        if self.worker_limit < 1:
            raise ValueError("worker_limit must be >= 1")
        if self.overhead_tokens >= self.budget.max_context_tokens:
            raise ValueError(
                f"prompt scaffolding and context allowance need ~{self.overhead_tokens} tokens, "
                f"leaving no room for the diff in {self.budget.max_context_tokens}"
            )

    @property
    def overhead_tokens(self) -> int:
        """Prompt tokens spent outside the diff: scaffolding plus context allowance."""
        return prompt_overhead_tokens(self.template, self.budget)

    @property
    def diff_budget(self) -> TokenBudget:
        """Budget the partitioner packs rendered chunks into.

        The reservation grows to cover the prompt overhead when the configured
        one is smaller, so every assembled prompt fits the context window.
        """
        reserved = max(self.budget.reserved_tokens, self.overhead_tokens)
        return TokenBudget(self.budget.max_context_tokens, reserved, self.budget.context_allowance)


@dataclass
class PipelineServices:
    """Collaborators of a run. Integrations are plain callables so tests can fake them.

    Attributes:
        gateway: Chat gateway; each run records usage on a fresh recorder.
        fetch_diff: Returns the unified diff text of a pull request.
        persist: Stores a report and returns its id.
        ledger: Credit ledger; runs are not charged when None.
        context_index: Project documentation index for retrieval.
        post_comment: Posts the markdown summary; returns comment ids.
        notify: Delivers a notification; never raises.
        clock: Timestamp source for ``created_at``.
        timer: Monotonic seconds used for ``elapsed_ms``.
        on_step: Called with each step name as the run progresses.
    """

    gateway: Gateway
    fetch_diff: Callable[[PullRequestRef], str]
    persist: Callable[[AnalysisReport], str]
    ledger: Optional[CreditLedger] = None
    context_index: Optional[ContextIndex] = None
    post_comment: Optional[Callable[[PullRequestRef, str], list[int]]] = None
    notify: Optional[Callable[[NotificationMessage], DeliveryResult]] = None
    clock: Callable[[], datetime] = utc_now
    timer: Callable[[], float] = time.monotonic
    on_step: Optional[Callable[[str], None]] = None

    def step(self, name: str) -> None:
        logger.debug("Pipeline step: %s", name)
        if self.on_step is not None:
            self.on_step(name)


@dataclass(frozen=True)
class ChunkOutcome:
    chunk_index: int
    candidates: tuple[CandidateAnalysis, ...]
    selected: Optional[CandidateAnalysis]
    error: Optional[str] = None

    @property
    def provenance(self) -> ChunkProvenance:
        model = self.selected.analyzer_model_id if self.selected else None
        return ChunkProvenance(self.chunk_index, model, len(self.candidates), self.error)


@dataclass(frozen=True)
class CoreResult:
    chunks: tuple[Chunk, ...]
    outcomes: tuple[ChunkOutcome, ...]
    findings: list[Finding]


def _within_chunk(finding: Finding, spans: dict[str, tuple[int, int]]) -> bool:
    span = spans.get(finding.file)
    return span is not None and span[0] <= finding.line_start and finding.line_end <= span[1]


def _ignore_step(name: str) -> None:
    pass


def analyze_chunk(
    chunk: Chunk,
    analyzers: Sequence[str],
    gateway: Gateway,
    settings: AnalysisSettings,
    context_index: Optional[ContextIndex] = None,
    on_step: Callable[[str], None] = _ignore_step,
) -> list[CandidateAnalysis]:
    """Ask every analyzer about one chunk.

    Analyzer failures become ``parse_ok=False`` candidates; findings outside the
    chunk's new-side line span are dropped.

    Returns:
        list[CandidateAnalysis]: One candidate per analyzer, in analyzer order.

    Raises:
        ChunkAnalysisError: If every analyzer failed at transport level.
    """
    if not analyzers:
        raise ValueError("analyzers must be non-empty")
    on_step("analyze")
    hits = []
    if settings.rag_enabled and context_index is not None and len(context_index):
        hits = retrieve(context_index, render_chunk(chunk), settings.retrieval_k)
    spans = new_side_spans(chunk)

    candidates = []
    for model_id in analyzers:
        request = assemble_prompt(chunk, hits, settings.template, model_id,
                                  settings.budget, settings.max_response_tokens)
        try:
            response = gateway.complete(request, purpose="analysis")
        except GatewayError as exc:
            logger.warning("Analyzer %s failed on chunk %d: %s", model_id, chunk.index, exc)
            candidates.append(CandidateAnalysis(model_id, "", parse_ok=False, error=str(exc)))
            continue
        try:
            parsed = parse_findings(response.text)
        except FindingsParseError:
            logger.info("Analyzer %s returned no findings block for chunk %d", model_id, chunk.index)
            candidates.append(CandidateAnalysis(model_id, response.text, parse_ok=False))
            continue
        kept = tuple(f for f in parsed if _within_chunk(f, spans))
        if len(kept) < len(parsed):
            logger.info("Dropped %d finding(s) outside chunk %d", len(parsed) - len(kept), chunk.index)
        candidates.append(CandidateAnalysis(model_id, response.text, kept))

    if all(c.transport_failed for c in candidates):
        raise ChunkAnalysisError(chunk.index, candidates)
    return candidates


def fallback_choice(candidates: Sequence[CandidateAnalysis]) -> CandidateAnalysis:
    """Candidate with the most findings; ties go to the earliest label."""
    best = candidates[0]
    for candidate in candidates[1:]:
        if len(candidate.findings) > len(best.findings):
            best = candidate
    return best


def judge_select(
    candidates: Sequence[CandidateAnalysis],
    judge_model: Optional[str],
    gateway: Gateway,
    criterion: str = DEFAULT_JUDGE_CRITERION,
    on_step: Callable[[str], None] = _ignore_step,
) -> CandidateAnalysis:
    """Pick one candidate for a chunk.

    A lone candidate is returned without calling the judge. Candidates whose
    analyzer failed at transport level are not shown to the judge. Judge
    failures and unparseable replies fall back to ``fallback_choice``.
    ``on_step`` sees "judge" only when the judge model is actually called.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    eligible = [c for c in candidates if not c.transport_failed] or list(candidates)
    if len(eligible) == 1:
        return eligible[0]
    if not judge_model:
        return fallback_choice(eligible)
    on_step("judge")
    try:
        response = gateway.complete(build_judge_request(eligible, judge_model, criterion), purpose="judge")
    except GatewayError as exc:
        logger.warning("Judge %s failed, using fallback: %s", judge_model, exc)
        return fallback_choice(eligible)
    choice = parse_judge_reply(response.text, len(eligible))
    if choice is None:
        logger.info("Unparseable judge reply %r, using fallback", response.text[:80])
        return fallback_choice(eligible)
    return eligible[choice]


def _run_chunk(
    chunk: Chunk,
    settings: AnalysisSettings,
    gateway: Gateway,
    context_index: Optional[ContextIndex],
    on_step: Callable[[str], None],
) -> ChunkOutcome:
    try:
        candidates = analyze_chunk(chunk, settings.analyzers, gateway, settings, context_index, on_step)
    except ChunkAnalysisError as exc:
        logger.error("%s", exc)
        return ChunkOutcome(chunk.index, exc.candidates, None, str(exc))
    selected = judge_select(candidates, settings.judge_model, gateway, settings.judge_criterion, on_step)
    return ChunkOutcome(chunk.index, tuple(candidates), selected)


def analyze_chunks(
    chunks: Sequence[Chunk],
    settings: AnalysisSettings,
    gateway: Gateway,
    context_index: Optional[ContextIndex] = None,
    on_step: Callable[[str], None] = _ignore_step,
) -> CoreResult:
    """Analyze, judge and aggregate already partitioned chunks.

    With more than one worker, "analyze" and "judge" steps are reported from
    the worker threads as each chunk progresses.
    """
    if settings.worker_limit > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=settings.worker_limit) as pool:
            outcomes = list(pool.map(lambda c: _run_chunk(c, settings, gateway, context_index, on_step), chunks))
    else:
        outcomes = [_run_chunk(c, settings, gateway, context_index, on_step) for c in chunks]

    on_step("aggregate")
    selected = [(o.chunk_index, o.selected) for o in outcomes if o.selected is not None]
    return CoreResult(tuple(chunks), tuple(outcomes), aggregate(selected))


def analyze_diffs(
    diffs: Sequence[FileDiff],
    settings: AnalysisSettings,
    gateway: Gateway,
    context_index: Optional[ContextIndex] = None,
    on_step: Callable[[str], None] = _ignore_step,
) -> CoreResult:
    """Partition, analyze, judge and aggregate, without charging or storing anything.

    Raises:
        OversizeInputError: If a single diff line exceeds the analyzer budget.
    """
    on_step("partition")
    return analyze_chunks(partition(diffs, settings.diff_budget), settings, gateway, context_index, on_step)


def run_pipeline(
    pr: PullRequestRef,
    settings: AnalysisSettings,
    services: PipelineServices,
) -> AnalysisReport:
    """Analyze one pull request end to end.

    Raises:
        InsufficientCreditsError: If the pre-flight estimate exceeds the balance
            (no analyzer is called) or the metered usage does (nothing is
            charged and no report is stored).
        FetchError: If the diff cannot be fetched or parsed.
        OversizeInputError: If a single diff line exceeds the analyzer budget.
    """
    started = services.timer()
    recorder = UsageRecorder()
    gateway = services.gateway.with_recorder(recorder)

    services.step("fetch")
    try:
        diffs = parse_unified_diff(services.fetch_diff(pr))
    except (GitHubApiError, OSError) as exc:
        raise FetchError(f"{pr.slug}: could not fetch diff: {exc}") from exc
    except DiffParseError as exc:
        raise FetchError(f"{pr.slug}: malformed diff: {exc}") from exc

    services.step("partition")
    chunks = partition(diffs, settings.diff_budget)
    if services.ledger is not None:
        estimate = estimate_preflight_cost(
            [c.estimated_tokens for c in chunks],
            settings.analyzers, settings.judge_model, settings.overhead_tokens,
            settings.max_response_tokens, settings.rates,
        )
        services.ledger.require(estimate)

    core = analyze_chunks(chunks, settings, gateway, services.context_index, services.step)
    notes = () if core.chunks else (EMPTY_DIFF_NOTE,)

    services.step("debit")
    if services.ledger is not None:
        usages = recorder.by_model()
        try:
            services.ledger.debit_many(usages, settings.rates)
        except InsufficientCreditsError:
            logger.error("Run for %s used more credits than remain; no report stored (usage %s)",
                         pr.slug, {model_id: usage.total_tokens for model_id, usage in usages.items()})
            raise

    created_at = services.clock()
    report = AnalysisReport(
        report_id=make_report_id(pr, created_at),
        pr=pr,
        findings=tuple(core.findings),
        chunk_count=max(len(core.chunks), 1),
        per_chunk_provenance=tuple(o.provenance for o in core.outcomes),
        usage_total=recorder.total(),
        elapsed_ms=max(int((services.timer() - started) * 1000), 0),
        created_at=created_at,
        notes=notes,
    )
    services.step("persist")
    services.persist(report)
    logger.info("Report %s for %s: %d finding(s) in %d chunk(s)",
                report.report_id, pr.slug, len(report.findings), report.chunk_count)

    services.step("comment")
    if settings.post_comment and services.post_comment is not None:
        try:
            services.post_comment(pr, render_markdown(report))
        except GitHubApiError as exc:
            logger.warning("Could not post summary comment on %s: %s", pr.slug, exc)

    services.step("notify")
    if services.notify is not None:
        result = services.notify(render_notification(report))
        if not result.delivered:
            logger.warning("Slack notification for %s failed: %s", pr.slug, result.error)
    return report
