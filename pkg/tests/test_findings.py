import json
import random

import pytest

from src.findings import (
    CandidateAnalysis,
    Finding,
    FindingsParseError,
    Severity,
    aggregate,
    normalize_class,
    parse_findings,
    severity_counts,
    sort_findings,
)


def block(findings, fence: bool = False) -> str:
    body = json.dumps({"findings": findings})
    if fence:
        body = f"```json\n{body}\n```"
    return f"Here is my review.\n===FINDINGS===\n{body}\n===END===\nThanks."


def item(**overrides):
    data = {
        "title": "Reentrancy in withdraw",
        "class": "reentrancy",
        "severity": "high",
        "description": "External call before state update.",
        "impact": "Funds can be drained.",
        "remediation": "Update balances first.",
        "file": "Vault.sol",
        "line_start": 12,
        "line_end": 14,
        "confidence": 0.8,
    }
    data.update(overrides)
    return data


def finding(vuln_class="reentrancy", file="a.sol", start=1, end=1, confidence=0.5, severity=Severity.HIGH, title="t"):
    return Finding.create(title, vuln_class, severity, file, start, end, confidence=confidence)


class TestParse:
    def test_well_formed_block(self):
        (parsed,) = parse_findings(block([item()]))
        assert parsed.vuln_class == "reentrancy"
        assert parsed.severity is Severity.HIGH
        assert parsed.location == "Vault.sol:12-14"
        assert parsed.confidence == 0.8
        assert len(parsed.finding_id) == 16

    def test_code_fences_inside_block(self):
        assert len(parse_findings(block([item()], fence=True))) == 1

    def test_prose_without_block_fails(self):
        with pytest.raises(FindingsParseError):
            parse_findings("I found a reentrancy bug on line 12 of Vault.sol.")

    def test_invalid_json_fails(self):
        with pytest.raises(FindingsParseError):
            parse_findings("===FINDINGS===\n{not json}\n===END===")

    def test_first_good_block_wins(self):
        raw = "===FINDINGS===\nnope\n===END===\n" + block([item()]) + block([item(), item(title="x")])
        assert len(parse_findings(raw)) == 1

    def test_empty_list(self):
        assert parse_findings(block([])) == []

    @pytest.mark.parametrize("bad", [
        {"severity": "catastrophic"},
        {"line_start": 5, "line_end": 2},
        {"line_start": 0},
        {"title": ""},
        {"confidence": 1.5},
        {"line_start": "12"},
    ])
    def test_invalid_items_dropped_individually(self, bad):
        parsed = parse_findings(block([item(**bad), item(title="kept")]))
        assert [f.title for f in parsed] == ["kept"]

    def test_class_and_severity_normalized(self):
        (parsed,) = parse_findings(block([item(**{"class": "Insecure-Deserialization", "severity": "CRITICAL"})]))
        assert parsed.vuln_class == "insecure_deserialization"
        assert parsed.severity is Severity.CRITICAL

    def test_missing_confidence_defaults(self):
        data = item()
        del data["confidence"]
        assert parse_findings(block([data]))[0].confidence == 0.5


def test_normalize_class():
    assert normalize_class("  Integer Overflow ") == "integer_overflow"


def test_finding_round_trips_through_dict():
    original = finding(confidence=0.7)
    assert Finding.from_dict(original.to_dict()) == original


def test_failed_parse_cannot_carry_findings():
    with pytest.raises(ValueError):
        CandidateAnalysis("m", "", (finding(),), parse_ok=False)


def test_sort_order():
    low = finding(severity=Severity.LOW, file="a.py")
    high_b = finding(severity=Severity.HIGH, file="b.py", start=3, end=3)
    high_a = finding(severity=Severity.HIGH, file="a.py", start=9, end=9)
    crit = finding(severity=Severity.CRITICAL, file="z.py")
    assert sort_findings([low, high_b, high_a, crit]) == [crit, high_a, high_b, low]


class TestAggregate:
    def test_higher_confidence_wins(self):
        weak = finding(start=1, end=5, confidence=0.4)
        strong = finding(start=4, end=6, confidence=0.9)
        assert aggregate([(0, CandidateAnalysis("m", "", (weak,))),
                          (1, CandidateAnalysis("m", "", (strong,)))]) == [strong]

    def test_wider_range_breaks_confidence_tie(self):
        narrow = finding(start=3, end=3)
        wide = finding(start=1, end=8)
        assert aggregate([(0, CandidateAnalysis("m", "", (narrow, wide)))]) == [wide]

    def test_lower_chunk_breaks_full_tie(self):
        first = finding(start=1, end=3, title="first")
        second = finding(start=2, end=4, title="second")
        assert aggregate([(1, CandidateAnalysis("m", "", (second,))),
                          (0, CandidateAnalysis("m", "", (first,)))]) == [first]

    def test_different_class_or_file_kept(self):
        a = finding()
        b = finding(vuln_class="access_control")
        c = finding(file="other.sol")
        assert len(aggregate([(0, CandidateAnalysis("m", "", (a, b, c)))])) == 3

    def test_idempotent_and_order_independent(self):
        rng = random.Random(9)
        for _ in range(50):
            pool = [
                finding(
                    vuln_class=rng.choice(["reentrancy", "overflow"]),
                    file=rng.choice(["a.sol", "b.sol"]),
                    start=(s := rng.randint(1, 40)),
                    end=s + rng.randint(0, 6),
                    confidence=rng.choice([0.3, 0.6, 0.9]),
                    severity=rng.choice(list(Severity)),
                    title=f"f{i}",
                )
                for i in range(rng.randint(0, 12))
            ]
            once = aggregate([(0, CandidateAnalysis("m", "", tuple(pool)))])
            assert aggregate([(0, CandidateAnalysis("m", "", tuple(once)))]) == once
            shuffled = pool[:]
            rng.shuffle(shuffled)
            assert aggregate([(0, CandidateAnalysis("m", "", tuple(shuffled)))]) == once
            for x in once:
                assert not any(x is not y and x.vuln_class == y.vuln_class and x.file == y.file
                               and x.line_start <= y.line_end and y.line_start <= x.line_end for y in once)


def test_severity_counts():
    counts = severity_counts([finding(), finding(severity=Severity.LOW), finding(title="u")])
    assert counts[Severity.HIGH] == 2 and counts[Severity.LOW] == 1 and counts[Severity.CRITICAL] == 0
