"""Credit accounting for analysis runs.

Costs are integer micro-credits derived from token usage and an operator
supplied rate card (micro-credits per 1,000 tokens). The ledger is append-only:
each entry records the cost and the running balance, so folding the entries
from the opening balance must reproduce the final balance exactly.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .llm_gateway import TokenUsage

logger = logging.getLogger(__name__)

PREFLIGHT_SAFETY_FACTOR = 2
JUDGE_REPLY_TOKENS = 16


class CreditError(Exception):
    """Base class for credit accounting errors."""


class UnknownModelError(CreditError):
    """Model id missing from the rate card."""


class InsufficientCreditsError(CreditError):
    def __init__(self, required: int, balance: int):
        super().__init__(f"Insufficient credits: {required} required, {balance} available")
        self.required = required
        self.balance = balance


@dataclass(frozen=True)
class ModelRate:
    prompt_rate: int
    completion_rate: int

    def __post_init__(self):
        if self.prompt_rate < 0 or self.completion_rate < 0:
            raise ValueError("rates must be >= 0")


@dataclass(frozen=True)
class RateCard:
    rates: Mapping[str, ModelRate] = field(default_factory=dict)

    def rate_for(self, model_id: str) -> ModelRate:
        try:
            return self.rates[model_id]
        except KeyError:
            raise UnknownModelError(f"No rate configured for model {model_id!r}") from None

    def __contains__(self, model_id: str) -> bool:
        return model_id in self.rates


def _ceil_div(numerator: int, denominator: int) -> int:
    return -(-numerator // denominator)


def cost_of(usage: TokenUsage, model_id: str, rates: RateCard) -> int:
    """Cost in micro-credits, one ceiling per token component.

    Raises:
        UnknownModelError: If ``model_id`` has no rate.
    """
    rate = rates.rate_for(model_id)
    return (_ceil_div(usage.prompt_tokens * rate.prompt_rate, 1000)
            + _ceil_div(usage.completion_tokens * rate.completion_rate, 1000))


@dataclass(frozen=True)
class LedgerEntry:
    timestamp: datetime
    model_id: str
    usage: TokenUsage
    cost: int
    balance: int


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


class CreditLedger:
    """Append-only credit ledger; debits are serialized through one lock.

    Args:
        opening_balance: Balance before the first entry.
        entries: Existing entries, oldest first.
        on_append: Called with each new entry while the lock is held (used to
            persist entries in the same order they are applied).
        clock: Timestamp source.
    """

    def __init__(
        self,
        opening_balance: int,
        entries: Sequence[LedgerEntry] = (),
        on_append: Optional[Callable[[LedgerEntry], None]] = None,
        clock: Callable[[], datetime] = utc_now,
    ):
        if opening_balance < 0:
            raise ValueError("opening balance must be non-negative")
        self.opening_balance = opening_balance
        self._entries = list(entries)
        self._balance = self._entries[-1].balance if self._entries else opening_balance
        self._on_append = on_append
        self._clock = clock
        self._lock = threading.Lock()

    @property
    def balance(self) -> int:
        return self._balance

    @property
    def entries(self) -> list[LedgerEntry]:
        with self._lock:
            return list(self._entries)

    def debit(self, model_id: str, usage: TokenUsage, rates: RateCard) -> LedgerEntry:
        """Charge one model's usage.

        Raises:
            UnknownModelError: If ``model_id`` has no rate.
            InsufficientCreditsError: If the cost exceeds the balance; the
                ledger is left unchanged.
        """
        cost = cost_of(usage, model_id, rates)
        with self._lock:
            if cost > self._balance:
                raise InsufficientCreditsError(cost, self._balance)
            entry = LedgerEntry(self._clock(), model_id, usage, cost, self._balance - cost)
            if self._on_append is not None:
                self._on_append(entry)
            self._entries.append(entry)
            self._balance = entry.balance
        logger.info("Debited %d micro-credits for %s (balance %d)", cost, model_id, entry.balance)
        return entry

    def debit_many(self, usages: Mapping[str, TokenUsage], rates: RateCard) -> list[LedgerEntry]:
        """Charge several models at once: every entry is applied or none is.

        Args:
            usages: Usage per model id, charged in iteration order.
            rates: Rate card used to price each entry.

        Raises:
            UnknownModelError: If any model id has no rate; nothing is charged.
            InsufficientCreditsError: If the total exceeds the balance; the
                ledger is left unchanged.
        """
        priced = [(model_id, usage, cost_of(usage, model_id, rates)) for model_id, usage in usages.items()]
        total = sum(cost for _, _, cost in priced)
        applied = []
        with self._lock:
            if total > self._balance:
                raise InsufficientCreditsError(total, self._balance)
            stamp = self._clock()
            balance = self._balance
            for model_id, usage, cost in priced:
                balance -= cost
                entry = LedgerEntry(stamp, model_id, usage, cost, balance)
                if self._on_append is not None:
                    self._on_append(entry)
                self._entries.append(entry)
                self._balance = balance
                applied.append(entry)
        logger.info("Debited %d micro-credits across %d model(s) (balance %d)", total, len(applied), self._balance)
        return applied

    def require(self, amount: int) -> None:
        """Fail closed when ``amount`` exceeds the balance."""
        if amount > self._balance:
            raise InsufficientCreditsError(amount, self._balance)


def debit(ledger: CreditLedger, model_id: str, usage: TokenUsage, rates: RateCard) -> CreditLedger:
    ledger.debit(model_id, usage, rates)
    return ledger


@dataclass(frozen=True)
class ReplayResult:
    ok: bool
    final_balance: int
    first_bad_index: Optional[int] = None


def replay(opening_balance: int, entries: Iterable[LedgerEntry]) -> ReplayResult:
    """Fold entries from the opening balance and verify every running balance."""
    balance = opening_balance
    for index, entry in enumerate(entries):
        expected = balance - entry.cost
        if entry.cost < 0 or expected < 0 or entry.balance != expected:
            return ReplayResult(False, balance, index)
        balance = expected
    return ReplayResult(True, balance)


def estimate_preflight_cost(
    chunk_tokens: Sequence[int],
    analyzers: Sequence[str],
    judge_model: Optional[str],
    overhead_tokens: int,
    max_response_tokens: int,
    rates: RateCard,
) -> int:
    """Pessimistic cost of a run, with the safety factor applied.

    Each analyzer call is charged its chunk estimate plus ``overhead_tokens`` of
    prompt and a full ``max_response_tokens`` reply; with two or more analyzers,
    each chunk also pays one judge call over all candidate replies.
    """
    total = 0
    for tokens in chunk_tokens:
        for model_id in analyzers:
            total += cost_of(TokenUsage.of(tokens + overhead_tokens, max_response_tokens), model_id, rates)
        if judge_model and len(analyzers) > 1:
            judge_prompt = overhead_tokens + len(analyzers) * max_response_tokens
            total += cost_of(TokenUsage.of(judge_prompt, JUDGE_REPLY_TOKENS), judge_model, rates)
    return total * PREFLIGHT_SAFETY_FACTOR
