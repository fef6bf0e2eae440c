import random
from dataclasses import replace
from datetime import datetime, timezone

import pytest

from src.credits import (
    PREFLIGHT_SAFETY_FACTOR,
    CreditLedger,
    InsufficientCreditsError,
    ModelRate,
    RateCard,
    UnknownModelError,
    cost_of,
    debit,
    estimate_preflight_cost,
    replay,
)
from src.llm_gateway import TokenUsage

RATES = RateCard({"m": ModelRate(3, 12), "free": ModelRate(0, 0), "flat": ModelRate(1000, 1000)})
FIXED = datetime(2024, 5, 1, tzinfo=timezone.utc)


def ledger(balance: int) -> CreditLedger:
    return CreditLedger(balance, clock=lambda: FIXED)


@pytest.mark.parametrize(
    ("usage", "cost"),
    [(TokenUsage.of(0, 0), 0), (TokenUsage.of(1000, 0), 3), (TokenUsage.of(1500, 200), 8)],
)
def test_cost_examples(usage, cost):
    assert cost_of(usage, "m", RATES) == cost


def test_unknown_model():
    with pytest.raises(UnknownModelError):
        cost_of(TokenUsage.of(1, 1), "nope", RATES)


def test_negative_rates_rejected():
    with pytest.raises(ValueError):
        ModelRate(-1, 0)


def test_separate_billing_never_undercharges():
    rng = random.Random(5)
    for _ in range(500):
        a = TokenUsage.of(rng.randint(0, 5000), rng.randint(0, 5000))
        b = TokenUsage.of(rng.randint(0, 5000), rng.randint(0, 5000))
        assert cost_of(a, "m", RATES) + cost_of(b, "m", RATES) >= cost_of(a + b, "m", RATES)
        assert cost_of(a + b, "m", RATES) >= cost_of(a, "m", RATES)


class TestDebit:
    def test_reduces_balance(self):
        book = ledger(10)
        entry = book.debit("flat", TokenUsage.of(3, 0), RATES)
        assert (entry.cost, entry.balance, book.balance) == (3, 7, 7)
        assert book.entries == [entry]

    def test_insufficient_leaves_ledger_unchanged(self):
        book = ledger(2)
        with pytest.raises(InsufficientCreditsError) as info:
            book.debit("flat", TokenUsage.of(3, 0), RATES)
        assert (info.value.required, info.value.balance) == (3, 2)
        assert book.balance == 2 and book.entries == []

    def test_zero_cost_still_appends(self):
        book = debit(ledger(5), "free", TokenUsage.of(100, 100), RATES)
        assert book.balance == 5 and len(book.entries) == 1

    def test_on_append_sees_every_entry_in_order(self):
        seen = []
        book = CreditLedger(1000, on_append=seen.append, clock=lambda: FIXED)
        for _ in range(4):
            book.debit("m", TokenUsage.of(1000, 0), RATES)
        assert [e.balance for e in seen] == [997, 994, 991, 988]

    def test_debit_many_applies_every_entry(self):
        seen = []
        book = CreditLedger(100, on_append=seen.append, clock=lambda: FIXED)
        entries = book.debit_many({"flat": TokenUsage.of(3, 0), "m": TokenUsage.of(1000, 0)}, RATES)
        assert [(e.model_id, e.cost, e.balance) for e in entries] == [("flat", 3, 97), ("m", 3, 94)]
        assert seen == entries == book.entries
        assert book.balance == 94
        assert replay(100, book.entries).ok

    def test_debit_many_is_all_or_nothing(self):
        seen = []
        book = CreditLedger(10, on_append=seen.append, clock=lambda: FIXED)
        with pytest.raises(InsufficientCreditsError) as info:
            book.debit_many({"flat": TokenUsage.of(6, 0), "m": TokenUsage.of(2_000_000, 0)}, RATES)
        assert (info.value.required, info.value.balance) == (6006, 10)
        assert book.balance == 10 and book.entries == [] and seen == []

    def test_debit_many_with_unknown_model_charges_nothing(self):
        book = ledger(10)
        with pytest.raises(UnknownModelError):
            book.debit_many({"flat": TokenUsage.of(1, 0), "nope": TokenUsage.of(1, 0)}, RATES)
        assert book.entries == []

    def test_require(self):
        book = ledger(10)
        book.require(10)
        with pytest.raises(InsufficientCreditsError):
            book.require(11)


def test_replay_after_random_debits():
    rng = random.Random(42)
    opening = 10_000_000
    book = ledger(opening)
    for _ in range(1000):
        model = rng.choice(["m", "free", "flat"])
        book.debit(model, TokenUsage.of(rng.randint(0, 3000), rng.randint(0, 500)), RATES)
    entries = book.entries
    result = replay(opening, entries)
    assert result.ok and result.final_balance == book.balance

    index = rng.randrange(len(entries))
    corrupted = list(entries)
    corrupted[index] = replace(entries[index], cost=entries[index].cost + 1)
    broken = replay(opening, corrupted)
    assert not broken.ok and broken.first_bad_index == index


def test_replay_empty():
    assert replay(50, []).final_balance == 50


class TestPreflight:
    def test_single_analyzer(self):
        cost = estimate_preflight_cost([1000], ["m"], None, overhead_tokens=0, max_response_tokens=1000, rates=RATES)
        assert cost == (3 + 12) * PREFLIGHT_SAFETY_FACTOR

    def test_judge_charged_with_two_analyzers(self):
        single = estimate_preflight_cost([500, 500], ["m"], "flat", 100, 200, RATES)
        double = estimate_preflight_cost([500, 500], ["m", "m"], "flat", 100, 200, RATES)
        judge_per_chunk = (100 + 2 * 200) + 16
        assert double == 2 * single + 2 * judge_per_chunk * PREFLIGHT_SAFETY_FACTOR

    def test_no_chunks_costs_nothing(self):
        assert estimate_preflight_cost([], ["m"], None, 100, 200, RATES) == 0
