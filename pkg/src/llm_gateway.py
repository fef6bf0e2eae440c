"""Chat-completion gateway: providers, offline mocks and token-usage capture.

Every analyzer and judge call goes through a provider implementing
``ChatProvider.complete``. Three providers ship in-tree:

    OpenAICompatibleProvider: HTTPS chat-completions API (base URL + key).
    ScriptedProvider: prompt digest -> canned response, for judge/parse tests.
    RuleMockProvider: deterministic pattern rules over the rendered diff,
        reproducing the reentrancy, insecure deserialization and (over-eager)
        Rust ``unsafe`` detections offline.

``Gateway`` maps model ids to providers and records the usage of every call so
that a run's total usage and per-model debits can be derived afterwards.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

import requests

from .chunking import FILE_HEADER_PREFIX, estimate_tokens
from .transport import RetriesExhausted, send_with_retries

logger = logging.getLogger(__name__)

FINDINGS_OPEN = "===FINDINGS==="
FINDINGS_CLOSE = "===END==="
DIFF_BEGIN = "--- BEGIN DIFF ---"
DIFF_END = "--- END DIFF ---"


class GatewayError(Exception):
    """Base class for chat-completion failures."""


class AuthenticationError(GatewayError):
    """Provider rejected the credentials. Not retried."""


class ContextLengthExceededError(GatewayError):
    """Prompt exceeded the model window; indicates a chunking bug. Not retried."""


class TransportError(GatewayError):
    """Provider unreachable or failing after all retries."""


class UnmappedPromptError(GatewayError):
    """Scripted provider has no response for the prompt digest."""


class ProviderNotConfiguredError(GatewayError):
    """No provider is registered for the requested model id."""


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    total_tokens: int = 0

    def __post_init__(self):
        if min(self.prompt_tokens, self.completion_tokens) < 0:
            raise ValueError("token counts must be non-negative")
        if self.total_tokens != self.prompt_tokens + self.completion_tokens:
            raise ValueError("total_tokens must equal prompt_tokens + completion_tokens")

    @classmethod
    def of(cls, prompt_tokens: int, completion_tokens: int) -> "TokenUsage":
        return cls(prompt_tokens, completion_tokens, prompt_tokens + completion_tokens)

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage.of(self.prompt_tokens + other.prompt_tokens,
                             self.completion_tokens + other.completion_tokens)


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    system_prompt: str
    user_prompt: str
    max_response_tokens: int = 2048
    temperature: float = 0.0

    def __post_init__(self):
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if self.max_response_tokens <= 0:
            raise ValueError("max_response_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def digest(self) -> str:
        """SHA-256 over the system and user prompts; keys scripted responses."""
        payload = f"{self.system_prompt}\x00{self.user_prompt}".encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: TokenUsage
    model_id: str
    latency_ms: int = 0


class ChatProvider(ABC):
    """A backend able to answer chat-completion requests."""

    @abstractmethod
    def complete(self, request: ChatRequest) -> ChatResponse:
        """Answer one request.

        Raises:
            GatewayError: On authentication, context-length or transport failure.
        """


class OpenAICompatibleProvider(ChatProvider):
    """Provider for any ``/chat/completions`` endpoint speaking the OpenAI schema."""

    def __init__(
        self,
        base_url: str,
        api_key: Optional[str],
        session: Optional[requests.Session] = None,
        sleep: Callable[[float], None] = time.sleep,
        timeout: int = 120,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.session = session or requests.Session()
        self.sleep = sleep
        self.timeout = timeout

    def _headers(self) -> dict[str, str]:
        if not self.api_key:
            raise AuthenticationError(f"No API key configured for {self.base_url}")
        return {"Authorization": f"Bearer {self.api_key}", "Content-Type": "application/json"}

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model_id,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "max_tokens": request.max_response_tokens,
            "temperature": request.temperature,
        }
        started = time.monotonic()
        try:
            response = send_with_retries(
                self.session, "POST", f"{self.base_url}/chat/completions",
                headers=self._headers(), json=payload, timeout=self.timeout, sleep=self.sleep,
            )
        except RetriesExhausted as exc:
            raise TransportError(str(exc)) from exc
        except requests.exceptions.RequestException as exc:
            raise TransportError(f"Request error: {exc}") from exc
        latency_ms = int((time.monotonic() - started) * 1000)

        if response.status_code in (401, 403):
            raise AuthenticationError(f"{request.model_id}: provider rejected credentials")
        if response.status_code == 400 and _mentions_context_length(response.text):
            raise ContextLengthExceededError(f"{request.model_id}: {response.text[:200]}")
        if response.status_code != 200:
            raise TransportError(f"{request.model_id}: HTTP {response.status_code} - {response.text[:200]}")

        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"{request.model_id}: unexpected response format") from exc
        usage_data = data.get("usage") or {}
        usage = TokenUsage.of(
            int(usage_data.get("prompt_tokens", estimate_tokens(request.system_prompt + request.user_prompt))),
            int(usage_data.get("completion_tokens", estimate_tokens(text))),
        )
        return ChatResponse(text, usage, request.model_id, latency_ms)


def _mentions_context_length(body: str) -> bool:
    lowered = body.lower()
    return "context_length_exceeded" in lowered or "maximum context length" in lowered


class ScriptedProvider(ChatProvider):
    """Replies from a fixed ``{prompt digest: response}`` table.

    Args:
        responses: Mapping of ``ChatRequest.digest()`` to response text.
        prompt_tokens, completion_tokens: Usage reported for every reply.
        default: Reply for unmapped prompts; unmapped prompts raise when None.
    """

    def __init__(
        self,
        responses: Mapping[str, str],
        prompt_tokens: int = 100,
        completion_tokens: int = 20,
        default: Optional[str] = None,
    ):
        self.responses = dict(responses)
        self.usage = TokenUsage.of(prompt_tokens, completion_tokens)
        self.default = default
        self.requests: list[ChatRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: Path) -> "ScriptedProvider":
        """Load a JSON script: ``{"responses": {...}, "default": ..., "usage": {...}}``."""
        data = json.loads(path.read_text(encoding="utf-8"))
        usage = data.get("usage", {})
        return cls(
            data.get("responses", {}),
            prompt_tokens=int(usage.get("prompt_tokens", 100)),
            completion_tokens=int(usage.get("completion_tokens", 20)),
            default=data.get("default"),
        )

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.requests.append(request)
        digest = request.digest()
        text = self.responses.get(digest, self.default)
        if text is None:
            raise UnmappedPromptError(f"{request.model_id}: no scripted response for {digest[:12]}")
        return ChatResponse(text, self.usage, request.model_id, 0)


@dataclass(frozen=True)
class PatternRule:
    vuln_class: str
    severity: str
    patterns: tuple[str, ...]
    title: str
    description: str
    impact: str
    remediation: str
    confidence: float


RULES: tuple[PatternRule, ...] = (
    PatternRule(
        vuln_class="reentrancy",
        severity="high",
        patterns=(".call{value:", ".call.value("),
        title="External call before state update",
        description="External call transfers value before contract state is updated, allowing reentrancy.",
        impact="An attacker contract can re-enter the function and drain funds.",
        remediation="Apply checks-effects-interactions: update state before the external call, "
                    "or guard the function with a reentrancy lock.",
        confidence=0.9,
    ),
    PatternRule(
        vuln_class="insecure_deserialization",
        severity="high",
        patterns=("pickle.loads(",),
        title="Untrusted data passed to pickle.loads",
        description="Deserializing data with pickle.loads can execute arbitrary code from untrusted input.",
        impact="Remote code execution when the serialized payload is attacker controlled.",
        remediation="Use a data-only format such as JSON, or verify the payload with an HMAC before loading.",
        confidence=0.9,
    ),
    PatternRule(
        vuln_class="unsafe_block",
        severity="medium",
        patterns=("unsafe {",),
        title="Unsafe block",
        description="Unsafe block bypasses Rust memory safety guarantees.",
        impact="Memory corruption if the invariants of the unsafe code are violated.",
        remediation="Document the safety invariants or replace the unsafe block with a safe abstraction.",
        confidence=0.6,
    ),
)

_RENDERED_LINE_RE = re.compile(r"^ *(?P<num>\d+)? (?P<mark>[-+ ]) (?P<text>.*)$")


def _diff_section(prompt: str) -> str:
    start = prompt.find(DIFF_BEGIN)
    if start == -1:
        return prompt
    end = prompt.find(DIFF_END, start)
    return prompt[start + len(DIFF_BEGIN):end if end != -1 else len(prompt)]


def rule_mock_analyze(chunk_text: str) -> str:
    """Run the pattern rules over a rendered chunk and emit a findings block.

    Only added lines are inspected. Each rule fires at most once per line.

    Args:
        chunk_text: Chunk rendered with file headers and new-side line numbers.

    Returns:
        str: A ``===FINDINGS===`` block (with an empty list when nothing matched).
    """
    findings = []
    current_path: Optional[str] = None
    for line in chunk_text.split("\n"):
        if line.startswith(FILE_HEADER_PREFIX):
            current_path = line[len(FILE_HEADER_PREFIX):].rsplit(" (", 1)[0]
            continue
        match = _RENDERED_LINE_RE.match(line)
        if not match or match.group("mark") != "+" or current_path is None or not match.group("num"):
            continue
        line_number = int(match.group("num"))
        for rule in RULES:
            if any(pattern in match.group("text") for pattern in rule.patterns):
                findings.append({
                    "title": rule.title,
                    "class": rule.vuln_class,
                    "severity": rule.severity,
                    "description": rule.description,
                    "impact": rule.impact,
                    "remediation": rule.remediation,
                    "file": current_path,
                    "line_start": line_number,
                    "line_end": line_number,
                    "confidence": rule.confidence,
                })
    return f"{FINDINGS_OPEN}\n{json.dumps({'findings': findings}, indent=2)}\n{FINDINGS_CLOSE}"


class RuleMockProvider(ChatProvider):
    """Deterministic offline analyzer; usage is the bytes/4 estimate of prompt and reply."""

    def complete(self, request: ChatRequest) -> ChatResponse:
        text = rule_mock_analyze(_diff_section(request.user_prompt))
        usage = TokenUsage.of(
            estimate_tokens(request.system_prompt) + estimate_tokens(request.user_prompt),
            estimate_tokens(text),
        )
        return ChatResponse(text, usage, request.model_id, 0)


def complete(provider: ChatProvider, request: ChatRequest) -> ChatResponse:
    """Send ``request`` to ``provider`` and log the outcome."""
    response = provider.complete(request)
    logger.debug(
        "%s answered in %d ms (%d prompt / %d completion tokens)",
        request.model_id, response.latency_ms,
        response.usage.prompt_tokens, response.usage.completion_tokens,
    )
    return response


@dataclass(frozen=True)
class UsageRecord:
    model_id: str
    usage: TokenUsage
    purpose: str


@dataclass
class UsageRecorder:
    """Thread-safe log of every completed call in one run."""

    records: list[UsageRecord] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(self, model_id: str, usage: TokenUsage, purpose: str) -> None:
        with self._lock:
            self.records.append(UsageRecord(model_id, usage, purpose))

    def total(self) -> TokenUsage:
        with self._lock:
            records = list(self.records)
        total = TokenUsage()
        for record in records:
            total = total + record.usage
        return total

    def by_model(self) -> dict[str, TokenUsage]:
        """Summed usage per model id, in order of first use."""
        with self._lock:
            records = list(self.records)
        summed: dict[str, TokenUsage] = {}
        for record in records:
            summed[record.model_id] = summed.get(record.model_id, TokenUsage()) + record.usage
        return summed


@dataclass(frozen=True)
class ProviderSpec:
    """Declarative provider configuration for one model id.

    ``kind`` is one of ``rule_mock``, ``scripted`` or ``openai_compatible``.
    """

    kind: str = "rule_mock"
    base_url: Optional[str] = None
    api_key: Optional[str] = None
    script_path: Optional[Path] = None


PROVIDER_KINDS = ("rule_mock", "scripted", "openai_compatible")


def build_provider(spec: ProviderSpec, session: Optional[requests.Session] = None) -> ChatProvider:
    if spec.kind == "rule_mock":
        return RuleMockProvider()
    if spec.kind == "scripted":
        if spec.script_path is None:
            return ScriptedProvider({})
        return ScriptedProvider.from_file(spec.script_path)
    if spec.kind == "openai_compatible":
        if not spec.base_url:
            raise ValueError("openai_compatible provider needs base_url")
        return OpenAICompatibleProvider(spec.base_url, spec.api_key, session=session)
    raise ValueError(f"unknown provider kind {spec.kind!r}")


class Gateway:
    """Routes requests to the provider registered for their model id."""

    def __init__(self, providers: Mapping[str, ChatProvider], recorder: Optional[UsageRecorder] = None):
        self.providers = dict(providers)
        self.recorder = recorder if recorder is not None else UsageRecorder()

    def with_recorder(self, recorder: UsageRecorder) -> "Gateway":
        return Gateway(self.providers, recorder)

    def complete(self, request: ChatRequest, purpose: str = "analysis") -> ChatResponse:
        provider = self.providers.get(request.model_id)
        if provider is None:
            raise ProviderNotConfiguredError(f"no provider configured for {request.model_id!r}")
        response = complete(provider, request)
        self.recorder.record(request.model_id, response.usage, purpose)
        return response
