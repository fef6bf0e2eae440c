"""Evaluation harness: finding matching, detection metrics and throughput.

Metrics are finding-level and micro-averaged: match counts from every sample
are summed before precision, recall, F1 and accuracy are computed. Accuracy is
tp / (tp + fp + fn).

Dataset layout, one directory per sample::

    dataset/
      sample-01/
        input.diff            (or input.<ext>, analyzed as an all-added file)
        truth.json            {"source": "manual_audit",
                               "findings": [{"class": "...", "description": "..."}]}
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterable, Optional, Sequence

from .chunking import OversizeInputError
from .components.column_config import EVAL_COLUMNS
from .components.text_table import render_table
from .diffs import ChangeStats, DiffParseError, Language, change_stats, language_for_path, parse_unified_diff, wrap_as_added_diff
from .findings import normalize_class
from .llm_gateway import Gateway
from .pipeline import AnalysisSettings, analyze_diffs
from .retrieval import ContextIndex

logger = logging.getLogger(__name__)

STOP_WORDS = frozenset({"a", "an", "the", "of", "in", "to", "is"})
DEFAULT_DESCRIPTION_THRESHOLD = 0.5
MANUAL_REVIEW_LINES_PER_SECOND = 0.11
F1_TOLERANCE = 0.01
ACCURACY_TOLERANCE = 0.015
TRUTH_FILE = "truth.json"

_WORD_RE = re.compile(r"[a-z0-9]+")


class EvaluationError(Exception):
    """The dataset cannot be evaluated."""


class Task(str, Enum):
    CLASSIFICATION = "classification"
    DESCRIPTION = "description"


class SampleSource(str, Enum):
    MANUAL_AUDIT = "manual_audit"
    BUG_BOUNTY = "bug_bounty"


@dataclass(frozen=True)
class TruthFinding:
    vuln_class: str
    description: str = ""


@dataclass(frozen=True)
class EvalSample:
    sample_id: str
    language_hint: Language
    diff_or_code: str
    truth_findings: tuple[TruthFinding, ...]
    source: SampleSource = SampleSource.MANUAL_AUDIT


@dataclass(frozen=True)
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    task: Task = Task.CLASSIFICATION

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        if other.task is not self.task:
            raise ValueError("cannot add counts of different tasks")
        return MatchCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.task)


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    fp_rate: float = 0.0
    fn_rate: float = 0.0


@dataclass(frozen=True)
class ThroughputStats:
    lines_changed: int
    pr_count: int
    elapsed_seconds: float
    lines_per_second: float
    seconds_per_pr: float
    speedup_vs_manual: Optional[float] = None


def description_tokens(text: str) -> set[str]:
    return {w for w in _WORD_RE.findall(text.lower()) if w not in STOP_WORDS}


def description_similarity(a: str, b: str) -> float:
    """Token Jaccard similarity of two descriptions (0 when both are empty)."""
    left, right = description_tokens(a), description_tokens(b)
    union = left | right
    if not union:
        return 0.0
    return len(left & right) / len(union)


def match_findings(
    predicted: Sequence[Any],
    truth: Sequence[Any],
    task: Task,
    threshold: float = DEFAULT_DESCRIPTION_THRESHOLD,
) -> MatchCounts:
    """Greedy one-to-one matching of predictions against ground truth.

    Items only need ``vuln_class`` and ``description`` attributes, so findings
    and truth entries can be used on either side.

    Classification matches equal classes; description matches token Jaccard
    similarity at or above ``threshold``. Each prediction takes the first
    unmatched truth item it matches.
    """
    matched = [False] * len(truth)
    tp = 0
    for prediction in predicted:
        for index, expected in enumerate(truth):
            if matched[index]:
                continue
            if task is Task.CLASSIFICATION:
                hit = prediction.vuln_class == expected.vuln_class
            else:
                hit = description_similarity(prediction.description, expected.description) >= threshold
            if hit:
                matched[index] = True
                tp += 1
                break
    return MatchCounts(tp, len(predicted) - tp, len(truth) - tp, task)


def compute_metrics(counts: MatchCounts) -> Metrics:
    """Precision, recall, F1, accuracy and error rates from match counts.

    With no predictions, precision is 1 when nothing was missed and 0
    otherwise; recall mirrors this when there is no ground truth.
    """
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    precision = tp / (tp + fp) if tp + fp else (1.0 if fn == 0 else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if fp == 0 else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = tp / (tp + fp + fn) if tp + fp + fn else 1.0
    return Metrics(
        precision=precision,
        recall=recall,
        f1=f1,
        accuracy=accuracy,
        fp_rate=fp / (tp + fp) if tp + fp else 0.0,
        fn_rate=fn / (tp + fn) if tp + fn else 0.0,
    )


@dataclass(frozen=True)
class RowDeviation:
    row_index: int
    f1_deviation: float
    accuracy_deviation: float
    flagged: bool


def table_consistency_check(
    rows: Iterable[tuple[float, float, float, float]],
    f1_tolerance: float = F1_TOLERANCE,
    accuracy_tolerance: float = ACCURACY_TOLERANCE,
) -> list[RowDeviation]:
    """Check published (P, R, F1, Acc) rows against the metric identities.

    F1 must equal 2PR/(P+R) and accuracy must equal 1/(1/P + 1/R - 1), the
    value tp/(tp+fp+fn) takes for the given precision and recall.

    Raises:
        ValueError: If P or R is outside (0, 1].
    """
    deviations = []
    for index, (p, r, f1, acc) in enumerate(rows):
        if not (0 < p <= 1 and 0 < r <= 1):
            raise ValueError(f"row {index}: precision and recall must be in (0, 1]")
        f1_dev = abs(f1 - 2 * p * r / (p + r))
        acc_dev = abs(acc - 1 / (1 / p + 1 / r - 1))
        flagged = f1_dev > f1_tolerance or acc_dev > accuracy_tolerance
        deviations.append(RowDeviation(index, f1_dev, acc_dev, flagged))
    return deviations


def compute_throughput(
    lines_changed: int,
    pr_count: int,
    elapsed_seconds: float,
    manual_lines_per_second: Optional[float] = MANUAL_REVIEW_LINES_PER_SECOND,
) -> ThroughputStats:
    """Lines per second, seconds per pull request and speedup over manual review.

    Raises:
        ValueError: If ``elapsed_seconds`` <= 0 or ``pr_count`` < 1.
    """
    if elapsed_seconds <= 0:
        raise ValueError("elapsed_seconds must be positive")
    if pr_count < 1:
        raise ValueError("pr_count must be >= 1")
    lines_per_second = lines_changed / elapsed_seconds
    speedup = lines_per_second / manual_lines_per_second if manual_lines_per_second else None
    return ThroughputStats(
        lines_changed=lines_changed,
        pr_count=pr_count,
        elapsed_seconds=elapsed_seconds,
        lines_per_second=lines_per_second,
        seconds_per_pr=elapsed_seconds / pr_count,
        speedup_vs_manual=speedup,
    )


# =============================================================================
# Datasets
# =============================================================================

def _load_sample(directory: Path) -> EvalSample:
    """Read one sample directory.

    Raises:
        OSError, ValueError, KeyError: If the sample is missing or malformed.
    """
    inputs = sorted(p for p in directory.iterdir() if p.is_file() and p.stem == "input")
    if len(inputs) != 1:
        raise ValueError(f"expected exactly one input file, found {len(inputs)}")
    source_path = inputs[0]
    text = source_path.read_text(encoding="utf-8")
    truth = json.loads((directory / TRUTH_FILE).read_text(encoding="utf-8"))
    if not isinstance(truth, dict) or not isinstance(truth.get("findings"), list):
        raise ValueError(f"{TRUTH_FILE} must hold a findings list")
    findings = tuple(
        TruthFinding(normalize_class(item["class"]), item.get("description", ""))
        for item in truth["findings"]
    )
    if source_path.suffix == ".diff":
        diffs = parse_unified_diff(text)
        language = diffs[0].language_hint if diffs else Language.OTHER
    else:
        language = language_for_path(source_path.name)
        text = wrap_as_added_diff(f"{directory.name}/{source_path.name}", text)
    return EvalSample(
        sample_id=directory.name,
        language_hint=language,
        diff_or_code=text,
        truth_findings=findings,
        source=SampleSource(truth.get("source", SampleSource.MANUAL_AUDIT.value)),
    )


def load_dataset(dataset_dir: Path) -> tuple[list[EvalSample], list[tuple[str, str]]]:
    """Load every sample directory, in name order.

    Returns:
        Samples and ``(sample_id, reason)`` pairs for samples that were skipped.

    Raises:
        EvaluationError: If the directory does not exist or holds no samples.
    """
    dataset_dir = Path(dataset_dir)
    if not dataset_dir.is_dir():
        raise EvaluationError(f"dataset directory {dataset_dir} not found")
    samples, skipped = [], []
    for directory in sorted(p for p in dataset_dir.iterdir() if p.is_dir() and not p.name.startswith(".")):
        try:
            samples.append(_load_sample(directory))
        except (OSError, ValueError, KeyError, TypeError, DiffParseError) as e:
            logger.warning("Skipping sample %s: %s", directory.name, e)
            skipped.append((directory.name, str(e)))
    if not samples and not skipped:
        raise EvaluationError(f"dataset directory {dataset_dir} holds no samples")
    return samples, skipped


# =============================================================================
# Runs
# =============================================================================

@dataclass(frozen=True)
class EvalRow:
    model: str
    task: Task
    rag: bool
    counts: MatchCounts
    metrics: Metrics


@dataclass(frozen=True)
class SampleResult:
    sample_id: str
    rag: bool
    predicted: int
    counts: tuple[MatchCounts, ...] = ()
    error: Optional[str] = None


@dataclass
class EvalResult:
    rows: list[EvalRow] = field(default_factory=list)
    samples: list[SampleResult] = field(default_factory=list)
    skipped: list[tuple[str, str]] = field(default_factory=list)
    throughput: dict[bool, ThroughputStats] = field(default_factory=dict)
    stats: ChangeStats = field(default_factory=lambda: ChangeStats(pr_count=0))


def model_label(settings: AnalysisSettings) -> str:
    return "+".join(settings.analyzers)


def run_eval(
    samples: Sequence[EvalSample],
    settings: AnalysisSettings,
    gateway: Gateway,
    context_index: Optional[ContextIndex] = None,
    rag_modes: Sequence[bool] = (True,),
    description_threshold: float = DEFAULT_DESCRIPTION_THRESHOLD,
    timer: Callable[[], float] = time.monotonic,
) -> EvalResult:
    """Analyze every sample once per RAG mode and pool the match counts.

    Samples that fail to analyze are recorded in ``skipped`` and left out of
    the counts.

    Raises:
        EvaluationError: If there are no samples.
    """
    if not samples:
        raise EvaluationError("no samples to evaluate")
    result = EvalResult()
    label = model_label(settings)
    for rag in rag_modes:
        mode_settings = dataclasses.replace(settings, rag_enabled=rag)
        totals = {task: MatchCounts(task=task) for task in Task}
        stats = ChangeStats(pr_count=0)
        started = timer()
        for sample in samples:
            try:
                diffs = parse_unified_diff(sample.diff_or_code)
                core = analyze_diffs(diffs, mode_settings, gateway, context_index)
            except (DiffParseError, OversizeInputError) as e:
                logger.warning("Sample %s failed: %s", sample.sample_id, e)
                result.samples.append(SampleResult(sample.sample_id, rag, 0, error=str(e)))
                if rag == rag_modes[0]:
                    result.skipped.append((sample.sample_id, str(e)))
                continue
            counts = tuple(
                match_findings(core.findings, sample.truth_findings, task, description_threshold)
                for task in Task
            )
            for c in counts:
                totals[c.task] = totals[c.task] + c
            stats = stats + change_stats(diffs)
            result.samples.append(SampleResult(sample.sample_id, rag, len(core.findings), counts))
        elapsed = max(timer() - started, 1e-9)
        if stats.pr_count:
            result.throughput[rag] = compute_throughput(stats.lines_changed, stats.pr_count, elapsed)
            result.stats = stats
        for task in Task:
            result.rows.append(EvalRow(label, task, rag, totals[task], compute_metrics(totals[task])))
    return result


def eval_result_to_dict(result: EvalResult) -> dict[str, Any]:
    return {
        "averaging": "finding-level micro-averaged",
        "rows": [
            {
                "model": row.model,
                "task": row.task.value,
                "rag": row.rag,
                "counts": {"tp": row.counts.tp, "fp": row.counts.fp, "fn": row.counts.fn},
                "metrics": dataclasses.asdict(row.metrics),
            }
            for row in result.rows
        ],
        "throughput": {
            ("rag" if rag else "no_rag"): dataclasses.asdict(stats)
            for rag, stats in result.throughput.items()
        },
        "change_stats": dataclasses.asdict(result.stats),
        "samples": [
            {
                "sample_id": s.sample_id,
                "rag": s.rag,
                "predicted": s.predicted,
                "counts": {c.task.value: {"tp": c.tp, "fp": c.fp, "fn": c.fn} for c in s.counts},
                "error": s.error,
            }
            for s in result.samples
        ],
        "skipped": [{"sample_id": sid, "reason": reason} for sid, reason in result.skipped],
    }


def render_eval_table(result: EvalResult) -> str:
    """Aligned table (Model, Task, RAG, Precision, Recall, F1, Accuracy) with a header line."""
    sample_count = len({s.sample_id for s in result.samples if s.error is None})
    header = f"Evaluation over {sample_count} sample(s), finding-level micro-averaged"
    rows = [
        {
            "model": row.model,
            "task": row.task.value.capitalize(),
            "rag": "Yes" if row.rag else "No",
            "precision": row.metrics.precision,
            "recall": row.metrics.recall,
            "f1": row.metrics.f1,
            "accuracy": row.metrics.accuracy,
        }
        for row in result.rows
    ]
    return f"{header}\n\n{render_table(EVAL_COLUMNS, rows)}"
