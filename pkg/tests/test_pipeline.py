import json
import random
import time
from dataclasses import replace
from datetime import datetime, timezone

import pytest

from src.chunking import TokenBudget, estimate_tokens, partition, render_chunk
from src.credits import CreditLedger, InsufficientCreditsError, cost_of
from src.diffs import parse_unified_diff
from src.findings import Severity
from src.github_api import GitHubTransportError
from src.llm_gateway import Gateway, RuleMockProvider, ScriptedProvider
from src.pipeline import (
    EMPTY_DIFF_NOTE,
    AnalysisSettings,
    ChunkAnalysisError,
    FetchError,
    PipelineServices,
    analyze_chunk,
    analyze_diffs,
    run_pipeline,
)
from src.prompts import assemble_prompt
from src.reporting import render_markdown
from src.retrieval import RetrievalHit
from src.slack import DeliveryResult

from .helpers import file_diff_text, hunk_text, random_diff_text

CREATED = datetime(2024, 6, 1, 12, 0, tzinfo=timezone.utc)

VULNERABLE = (
    file_diff_text("contracts/Vault.sol", [
        hunk_text(20, ["(bool ok, ) = msg.sender.call{value: amount}(\"\");", "balances[msg.sender] = 0;"],
                  context_before=["function withdraw(uint amount) external {"]),
    ])
    + file_diff_text("app/cache.py", [hunk_text(5, ["return pickle.loads(raw)"])])
)

MANY_HUNKS = file_diff_text(
    "many.py", [hunk_text(i * 100 + 1, [f"v{i} = pickle.loads(x)"] + ["pad = 0"] * 40) for i in range(6)]
)

EMPTY_FINDINGS = "===FINDINGS===\n{\"findings\": []}\n===END==="


class Recorder:
    def __init__(self):
        self.steps = []
        self.persisted = []
        self.comments = []
        self.notifications = []


def make_services(gateway, diff_text=VULNERABLE, ledger=None, notify_ok=True, comment_error=None):
    rec = Recorder()

    def persist(report):
        rec.persisted.append(report)
        return report.report_id

    def post_comment(pr, body):
        if comment_error:
            raise comment_error
        rec.comments.append(body)
        return [1]

    def notify(message):
        rec.notifications.append(message)
        return DeliveryResult(notify_ok, 200 if notify_ok else 500, None if notify_ok else "HTTP 500")

    services = PipelineServices(
        gateway=gateway,
        fetch_diff=lambda pr: diff_text,
        persist=persist,
        ledger=ledger,
        post_comment=post_comment,
        notify=notify,
        clock=lambda: CREATED,
        on_step=rec.steps.append,
    )
    return services, rec


def test_runs_steps_in_order(pr, settings, gateway):
    services, rec = make_services(gateway, ledger=CreditLedger(1_000_000))
    report = run_pipeline(pr, settings, services)
    assert rec.steps == ["fetch", "partition", "analyze", "aggregate",
                         "debit", "persist", "comment", "notify"]
    assert [f.vuln_class for f in report.findings] == ["insecure_deserialization", "reentrancy"]
    assert report.chunk_count == 1
    assert rec.persisted == [report]
    assert rec.comments == [render_markdown(report)]
    assert len(rec.notifications) == 1


def test_judge_step_follows_each_analyzed_chunk(pr, settings):
    judge = ScriptedProvider({}, prompt_tokens=50, completion_tokens=1, default="A")
    gateway = Gateway({"rule-mock": RuleMockProvider(), "second": RuleMockProvider(), "judge": judge})
    two = replace(settings, analyzers=("rule-mock", "second"), judge_model="judge", budget=TokenBudget(700, 100))
    services, rec = make_services(gateway, diff_text=MANY_HUNKS)
    report = run_pipeline(pr, two, services)
    assert report.chunk_count > 1
    assert len(judge.requests) == report.chunk_count
    assert rec.steps == (["fetch", "partition"] + ["analyze", "judge"] * report.chunk_count
                         + ["aggregate", "debit", "persist", "comment", "notify"])


def test_no_judge_step_without_a_judge_call(pr, settings):
    services, rec = make_services(Gateway({"rule-mock": RuleMockProvider()}), diff_text=MANY_HUNKS)
    report = run_pipeline(pr, replace(settings, budget=TokenBudget(700, 100), judge_model="judge"), services)
    assert report.chunk_count > 1
    assert "judge" not in rec.steps
    assert rec.steps.count("analyze") == report.chunk_count


def test_debit_matches_recorded_usage(pr, settings, gateway, rates):
    ledger = CreditLedger(1_000_000)
    services, _ = make_services(gateway, ledger=ledger)
    report = run_pipeline(pr, settings, services)
    (entry,) = ledger.entries
    assert entry.model_id == "rule-mock"
    assert entry.usage == report.usage_total
    assert entry.cost == cost_of(report.usage_total, "rule-mock", rates)
    assert ledger.balance == 1_000_000 - entry.cost


def test_insufficient_credits_stop_before_any_model_call(pr, settings):
    analyzer = ScriptedProvider({}, default="===FINDINGS===\n{\"findings\": []}\n===END===")
    services, rec = make_services(Gateway({"rule-mock": analyzer}), ledger=CreditLedger(1))
    with pytest.raises(InsufficientCreditsError):
        run_pipeline(pr, settings, services)
    assert analyzer.requests == []
    assert rec.persisted == []
    assert "analyze" not in rec.steps


def test_empty_diff_gives_one_chunk_note(pr, settings, gateway):
    services, rec = make_services(gateway, diff_text="")
    report = run_pipeline(pr, settings, services)
    assert report.chunk_count == 1
    assert report.findings == ()
    assert report.notes == (EMPTY_DIFF_NOTE,)
    assert "No security findings." in rec.comments[0]


def test_binary_only_diff(pr, settings, gateway):
    services, _ = make_services(gateway, diff_text="diff --git a/x.png b/x.png\nBinary files a/x.png and b/x.png differ\n")
    assert run_pipeline(pr, settings, services).notes == (EMPTY_DIFF_NOTE,)


def test_slack_failure_does_not_fail_the_run(pr, settings, gateway):
    services, rec = make_services(gateway, notify_ok=False)
    report = run_pipeline(pr, settings, services)
    assert rec.persisted == [report]


def test_comment_failure_does_not_fail_the_run(pr, settings, gateway):
    services, rec = make_services(gateway, comment_error=GitHubTransportError("down"))
    report = run_pipeline(pr, settings, services)
    assert rec.persisted == [report]
    assert len(rec.notifications) == 1


def test_comment_disabled(pr, settings, gateway):
    services, rec = make_services(gateway)
    run_pipeline(pr, replace(settings, post_comment=False), services)
    assert rec.comments == []
    assert "comment" in rec.steps


def test_fetch_failures(pr, settings, gateway):
    services, _ = make_services(gateway)
    def unreachable(pr):
        raise GitHubTransportError("unreachable")

    services.fetch_diff = unreachable
    with pytest.raises(FetchError):
        run_pipeline(pr, settings, services)

    malformed, _ = make_services(gateway, diff_text="--- a/x\n+++ b/x\n@@ -1,5 +1,5 @@\n a\n")
    with pytest.raises(FetchError):
        run_pipeline(pr, settings, malformed)


def test_findings_outside_chunk_are_dropped(settings):
    text = file_diff_text("a.py", [hunk_text(10, ["x = 1", "y = 2"])])
    (chunk,) = partition(parse_unified_diff(text), settings.budget)
    reply = "===FINDINGS===\n" + json.dumps({"findings": [
        {"title": "in", "class": "injection", "severity": "low", "file": "a.py", "line_start": 10, "line_end": 11},
        {"title": "out", "class": "injection", "severity": "low", "file": "a.py", "line_start": 40, "line_end": 41},
        {"title": "elsewhere", "class": "injection", "severity": "low", "file": "b.py", "line_start": 10, "line_end": 10},
    ]}) + "\n===END==="
    gateway = Gateway({"rule-mock": ScriptedProvider({}, default=reply)})
    (candidate,) = analyze_chunk(chunk, ["rule-mock"], gateway, settings)
    assert [f.title for f in candidate.findings] == ["in"]


def test_prose_reply_is_a_failed_parse(settings):
    text = file_diff_text("a.py", [hunk_text(1, ["x"])])
    (chunk,) = partition(parse_unified_diff(text), settings.budget)
    gateway = Gateway({"rule-mock": ScriptedProvider({}, default="Looks fine to me.")})
    (candidate,) = analyze_chunk(chunk, ["rule-mock"], gateway, settings)
    assert not candidate.parse_ok and candidate.findings == () and not candidate.transport_failed


def test_all_analyzers_failing_is_a_chunk_error(settings):
    text = file_diff_text("a.py", [hunk_text(1, ["x"])])
    (chunk,) = partition(parse_unified_diff(text), settings.budget)
    gateway = Gateway({"a": ScriptedProvider({}), "b": ScriptedProvider({})})
    with pytest.raises(ChunkAnalysisError) as info:
        analyze_chunk(chunk, ["a", "b"], gateway, settings)
    assert info.value.chunk_index == 0
    assert len(info.value.candidates) == 2


def test_failed_chunk_is_recorded_in_provenance(pr, settings):
    gateway = Gateway({"rule-mock": ScriptedProvider({})})
    services, _ = make_services(gateway)
    report = run_pipeline(pr, settings, services)
    (provenance,) = report.per_chunk_provenance
    assert provenance.selected_model is None and provenance.error


def test_two_analyzers_and_judge(pr, settings, rates):
    judge = ScriptedProvider({}, prompt_tokens=50, completion_tokens=1, default="B")
    gateway = Gateway({"rule-mock": RuleMockProvider(), "second": RuleMockProvider(), "judge": judge})
    two = replace(settings, analyzers=("rule-mock", "second"), judge_model="judge")
    ledger = CreditLedger(1_000_000)
    services, _ = make_services(gateway, ledger=ledger)
    report = run_pipeline(pr, two, services)
    assert len(judge.requests) == 1
    assert report.per_chunk_provenance[0].selected_model == "second"
    assert report.per_chunk_provenance[0].candidate_count == 2
    assert [e.model_id for e in ledger.entries] == ["rule-mock", "second", "judge"]


def test_parallel_chunks_match_sequential(settings, gateway):
    hunks = [hunk_text(i * 100 + 1, [f"v{i} = pickle.loads(x)"] + ["pad = 0"] * 40) for i in range(12)]
    diffs = parse_unified_diff(file_diff_text("many.py", hunks))
    small = replace(settings, budget=TokenBudget(700, 100))
    sequential = analyze_diffs(diffs, small, gateway)
    parallel = analyze_diffs(diffs, replace(small, worker_limit=4), gateway)
    assert len(sequential.chunks) > 1
    assert parallel.findings == sequential.findings
    assert [o.chunk_index for o in parallel.outcomes] == list(range(len(parallel.chunks)))


def test_identical_runs_render_identically(pr, settings, gateway):
    first, _ = make_services(gateway)
    second, _ = make_services(gateway)
    assert render_markdown(run_pipeline(pr, settings, first)) == render_markdown(run_pipeline(pr, settings, second))


def test_report_gate(pr, settings, gateway):
    services, _ = make_services(gateway)
    report = run_pipeline(pr, settings, services)
    assert report.has_findings_at(Severity.HIGH)
    assert not report.has_findings_at(Severity.CRITICAL)


def test_usage_overrun_charges_nothing_and_stores_nothing(pr, settings):
    greedy = ScriptedProvider({}, prompt_tokens=500_000_000, completion_tokens=0, default=EMPTY_FINDINGS)
    gateway = Gateway({"rule-mock": RuleMockProvider(), "second": greedy})
    ledger = CreditLedger(1_000_000)
    services, rec = make_services(gateway, ledger=ledger)
    with pytest.raises(InsufficientCreditsError):
        run_pipeline(pr, replace(settings, analyzers=("rule-mock", "second")), services)
    assert ledger.entries == []
    assert ledger.balance == 1_000_000
    assert rec.persisted == [] and rec.comments == [] and rec.notifications == []
    assert "persist" not in rec.steps


def _assembled_tokens(request) -> int:
    return estimate_tokens(request.system_prompt + request.user_prompt)


def test_long_hunk_prompts_fit_the_context_window():
    budget = TokenBudget(1000, 100)
    settings = AnalysisSettings(("m",), budget)
    diffs = parse_unified_diff(file_diff_text("x.py", [hunk_text(1, ["x"] * 1000)]))
    chunks = partition(diffs, settings.diff_budget)
    assert len(chunks) > 1
    for chunk in chunks:
        request = assemble_prompt(chunk, [], settings.template, "m", budget)
        assert _assembled_tokens(request) <= budget.max_context_tokens


def test_assembled_prompts_fit_over_generated_diffs():
    rng = random.Random(20241019)
    for _ in range(150):
        diffs = parse_unified_diff(random_diff_text(rng, max_files=12, max_lines=1500))
        budget = TokenBudget(rng.randint(1000, 6000), rng.randint(0, 400))
        settings = AnalysisSettings(("m",), budget)
        hits = [RetrievalHit(f"doc{i}.md", 1.0 / (i + 1), "validate input " * rng.randint(0, 200))
                for i in range(rng.randint(0, 4))]
        for chunk in partition(diffs, settings.diff_budget):
            assert estimate_tokens(render_chunk(chunk)) <= chunk.estimated_tokens
            request = assemble_prompt(chunk, hits, settings.template, "m", budget)
            assert _assembled_tokens(request) <= budget.max_context_tokens


def test_overhead_larger_than_window_is_rejected():
    with pytest.raises(ValueError):
        AnalysisSettings(("m",), TokenBudget(200, 100))


def test_twenty_thousand_line_diff_at_desk_scale(pr, settings, gateway):
    files = []
    for f in range(40):
        lines = [f"cache_{i} = pickle.loads(blob)" if i % 100 == 50 else f"value_{i} = compute({i})"
                 for i in range(500)]
        files.append(file_diff_text(f"svc/module_{f:02d}.py", [hunk_text(1, lines)]))
    text = "".join(files)
    services, rec = make_services(gateway, diff_text=text, ledger=CreditLedger(10_000_000))

    started = time.perf_counter()
    report = run_pipeline(pr, settings, services)
    elapsed = time.perf_counter() - started

    assert elapsed < 10
    diffs = parse_unified_diff(text)
    assert sum(len(h.lines) for d in diffs for h in d.hunks) == 20_000
    chunks = partition(diffs, settings.diff_budget)
    assert report.chunk_count == len(chunks) > 1
    assert [c.index for c in chunks] == list(range(len(chunks)))
    assert all(c.estimated_tokens <= settings.diff_budget.effective for c in chunks)
    assert [(p.file_index, p.hunk_index) for c in chunks for p in c.pieces] == [(f, 0) for f in range(40)]
    assert len(report.findings) == 200
    assert {f.vuln_class for f in report.findings} == {"insecure_deserialization"}
    assert rec.persisted == [report]
