"""Application configuration.

Settings come from one YAML file (``--config``); every missing key takes its
default. Secrets resolve from the environment first, then the OS credential
store, then the file. ``.env`` files are loaded into the environment before
anything is resolved.

Example::

    analyzers: [gpt-4o, o1-preview]
    judge_model: gpt-4o
    models:
      gpt-4o: {provider: openai_compatible, base_url: https://api.openai.com/v1,
               api_key_env: OPENAI_API_KEY}
      o1-preview: {provider: openai_compatible, base_url: https://api.openai.com/v1,
                   api_key_env: OPENAI_API_KEY}
    rate_card:
      gpt-4o: {prompt: 2500, completion: 10000}
      o1-preview: {prompt: 15000, completion: 60000}
    token_budget: {max_context_tokens: 128000, reserved_tokens: 8000}
    github: {post_comment: true}
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import requests
import yaml
from dotenv import load_dotenv

from . import credentials
from .chunking import TokenBudget
from .credits import ModelRate, RateCard
from .database import DB_FILENAME, default_store_dir
from .findings import Severity
from .github_api import GITHUB_API_BASE
from .llm_gateway import PROVIDER_KINDS, Gateway, ProviderSpec, build_provider
from .pipeline import AnalysisSettings
from .prompts import DEFAULT_JUDGE_CRITERION, PromptTemplate, TemplateError
from .retrieval import DEFAULT_DIMENSION, DEFAULT_TOP_K
from .webhooks import DEFAULT_TRIGGER_ACTIONS

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "rule-mock"
TOKEN_BUDGET_FIELDS = ("max_context_tokens", "reserved_tokens", "context_tokens")


class ConfigError(Exception):
    """Invalid configuration; ``field`` names the offending setting."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class GitHubSettings:
    api_base: str = GITHUB_API_BASE
    token: Optional[str] = None
    webhook_secret: Optional[str] = None
    post_comment: bool = True
    trigger_actions: tuple[str, ...] = DEFAULT_TRIGGER_ACTIONS


@dataclass(frozen=True)
class AppConfig:
    analyzers: tuple[str, ...] = (DEFAULT_MODEL,)
    judge_model: Optional[str] = None
    models: dict[str, ProviderSpec] = field(default_factory=lambda: {DEFAULT_MODEL: ProviderSpec("rule_mock")})
    token_budget: TokenBudget = field(default_factory=lambda: TokenBudget(8192, 2048))
    max_response_tokens: int = 2048
    rag_enabled: bool = True
    retrieval_k: int = DEFAULT_TOP_K
    embedding_dimension: int = DEFAULT_DIMENSION
    system_prompt_path: Optional[Path] = None
    user_prompt_path: Optional[Path] = None
    judge_criterion: str = DEFAULT_JUDGE_CRITERION
    rate_card: RateCard = field(default_factory=lambda: RateCard({DEFAULT_MODEL: ModelRate(10, 30)}))
    opening_balance: int = 1_000_000
    github: GitHubSettings = field(default_factory=GitHubSettings)
    slack_webhook_url: Optional[str] = None
    store_dir: Path = field(default_factory=default_store_dir)
    worker_limit: int = 4
    severity_gate: Severity = Severity.HIGH
    server_host: str = "127.0.0.1"
    server_port: int = 8080
    description_threshold: float = 0.5

    def validate(self) -> None:
        """Check every invariant.

        Raises:
            ConfigError: Naming the first offending field.
        """
        if not self.analyzers:
            raise ConfigError("analyzers", "at least one analyzer is required")
        if len(self.analyzers) >= 2 and not self.judge_model:
            raise ConfigError("judge_model", "required when two or more analyzers are configured")
        if self.worker_limit < 1:
            raise ConfigError("worker_limit", "must be >= 1")
        if self.retrieval_k < 1:
            raise ConfigError("retrieval_k", "must be >= 1")
        if self.max_response_tokens < 1:
            raise ConfigError("max_response_tokens", "must be >= 1")
        if self.embedding_dimension < 1:
            raise ConfigError("embedding_dimension", "must be >= 1")
        if self.opening_balance < 0:
            raise ConfigError("opening_balance", "must be >= 0")
        if not 0 < self.description_threshold <= 1:
            raise ConfigError("evaluation.description_threshold", "must be in (0, 1]")
        if not 0 < self.server_port < 65536:
            raise ConfigError("server.port", "must be a TCP port")
        used = list(self.analyzers) + ([self.judge_model] if self.judge_model else [])
        for model_id in used:
            if model_id not in self.models:
                raise ConfigError(f"models.{model_id}", "no provider declared")
            if model_id not in self.rate_card:
                raise ConfigError(f"rate_card.{model_id}", "no rate configured")
        for model_id, spec in self.models.items():
            if spec.kind not in PROVIDER_KINDS:
                raise ConfigError(f"models.{model_id}.provider", f"must be one of {', '.join(PROVIDER_KINDS)}")
            if spec.kind == "openai_compatible" and not spec.base_url:
                raise ConfigError(f"models.{model_id}.base_url", "required for openai_compatible")
            if spec.kind == "scripted" and spec.script_path is not None and not spec.script_path.is_file():
                raise ConfigError(f"models.{model_id}.script", f"{spec.script_path} not found")

    @property
    def db_path(self) -> Path:
        return self.store_dir / DB_FILENAME

    def prompt_template(self) -> PromptTemplate:
        try:
            return PromptTemplate.from_files(self.system_prompt_path, self.user_prompt_path)
        except TemplateError as e:
            raise ConfigError("prompts", str(e)) from e

    def analysis_settings(self, rag_enabled: Optional[bool] = None) -> AnalysisSettings:
        try:
            return AnalysisSettings(
                analyzers=self.analyzers,
                budget=self.token_budget,
                judge_model=self.judge_model,
                rates=self.rate_card,
                template=self.prompt_template(),
                rag_enabled=self.rag_enabled if rag_enabled is None else rag_enabled,
                retrieval_k=self.retrieval_k,
                judge_criterion=self.judge_criterion,
                max_response_tokens=self.max_response_tokens,
                worker_limit=self.worker_limit,
                post_comment=self.github.post_comment,
            )
        except ValueError as e:
            raise ConfigError("token_budget.max_context_tokens", str(e)) from e

    def build_gateway(self, session: Optional[requests.Session] = None) -> Gateway:
        """Providers for every declared model, sharing one HTTP session."""
        session = session or requests.Session()
        return Gateway({model_id: build_provider(spec, session) for model_id, spec in self.models.items()})

    def require_service_credentials(self) -> None:
        """Fail fast when the webhook service cannot authenticate."""
        if not self.github.webhook_secret:
            raise ConfigError("github.webhook_secret", "required to serve webhooks")
        if not self.github.token:
            raise ConfigError("github.token", "required to serve webhooks")


def _section(data: dict[str, Any], key: str) -> dict[str, Any]:
    value = data.get(key) or {}
    if not isinstance(value, dict):
        raise ConfigError(key, "must be a mapping")
    return value


def _int(data: dict[str, Any], key: str, default: int, field_name: str) -> int:
    value = data.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(field_name, f"must be an integer, got {value!r}")
    return value


def _bool(data: dict[str, Any], key: str, default: bool, field_name: str) -> bool:
    value = data.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(field_name, f"must be true or false, got {value!r}")
    return value


def _optional_str(data: dict[str, Any], key: str) -> Optional[str]:
    value = data.get(key)
    if value is not None and not isinstance(value, str):
        raise ConfigError(key, "must be a string")
    return value or None


def _str_list(value: Any, field_name: str) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not all(isinstance(v, str) and v for v in value):
        raise ConfigError(field_name, "must be a list of names")
    return tuple(value)


def _path(value: Any, base: Path, field_name: str) -> Optional[Path]:
    if value is None:
        return None
    if not isinstance(value, str):
        raise ConfigError(field_name, "must be a path")
    path = Path(value).expanduser()
    return path if path.is_absolute() else base / path


def _models(data: dict[str, Any], base: Path) -> dict[str, ProviderSpec]:
    raw = data.get("models")
    if raw is None:
        return {DEFAULT_MODEL: ProviderSpec("rule_mock")}
    if not isinstance(raw, dict):
        raise ConfigError("models", "must be a mapping of model id to provider")
    models = {}
    for model_id, spec in raw.items():
        if not isinstance(spec, dict):
            raise ConfigError(f"models.{model_id}", "must be a mapping")
        api_key_env = spec.get("api_key_env")
        models[str(model_id)] = ProviderSpec(
            kind=spec.get("provider", "rule_mock"),
            base_url=spec.get("base_url"),
            api_key=os.environ.get(api_key_env) if api_key_env else None,
            script_path=_path(spec.get("script"), base, f"models.{model_id}.script"),
        )
    return models


def _rate_card(data: dict[str, Any]) -> RateCard:
    raw = data.get("rate_card")
    if raw is None:
        return RateCard({DEFAULT_MODEL: ModelRate(10, 30)})
    if not isinstance(raw, dict):
        raise ConfigError("rate_card", "must be a mapping of model id to rates")
    rates = {}
    for model_id, entry in raw.items():
        name = f"rate_card.{model_id}"
        if not isinstance(entry, dict):
            raise ConfigError(name, "must be a mapping with prompt and completion rates")
        try:
            rates[str(model_id)] = ModelRate(_int(entry, "prompt", 0, name), _int(entry, "completion", 0, name))
        except ValueError as e:
            raise ConfigError(name, str(e)) from e
    return RateCard(rates)


def _token_budget(data: dict[str, Any]) -> TokenBudget:
    raw = _section(data, "token_budget")
    try:
        return TokenBudget(
            _int(raw, "max_context_tokens", 8192, "token_budget.max_context_tokens"),
            _int(raw, "reserved_tokens", 2048, "token_budget.reserved_tokens"),
            _int(raw, "context_tokens", None, "token_budget.context_tokens")
            if raw.get("context_tokens") is not None else None,
        )
    except ValueError as e:
        failed = next((name for name in TOKEN_BUDGET_FIELDS if str(e).startswith(name)), "reserved_tokens")
        raise ConfigError(f"token_budget.{failed}", str(e)) from e


def load_config(path: Optional[Path] = None, store_dir: Optional[Path] = None) -> AppConfig:
    """Load and validate the configuration.

    Args:
        path: YAML file; defaults apply when None.
        store_dir: Overrides ``store_dir`` from the file (``--store``).

    Raises:
        ConfigError: If the file is unreadable or any setting is invalid.
    """
    load_dotenv()
    data: dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError("config", f"cannot read {path}: {e}") from e
        except yaml.YAMLError as e:
            raise ConfigError("config", f"invalid YAML in {path}: {e}") from e
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be a mapping")
        data = loaded or {}
        base = Path(path).resolve().parent

    github_raw = _section(data, "github")
    slack_raw = _section(data, "slack")
    server_raw = _section(data, "server")
    eval_raw = _section(data, "evaluation")
    prompts_raw = _section(data, "prompts")

    severity_raw = data.get("severity_gate", Severity.HIGH.value)
    try:
        severity_gate = Severity(str(severity_raw).lower())
    except ValueError:
        raise ConfigError("severity_gate", f"unknown severity {severity_raw!r}") from None

    threshold = eval_raw.get("description_threshold", 0.5)
    if isinstance(threshold, bool) or not isinstance(threshold, (int, float)):
        raise ConfigError("evaluation.description_threshold", "must be a number")

    config = AppConfig(
        analyzers=_str_list(data.get("analyzers", [DEFAULT_MODEL]), "analyzers"),
        judge_model=_optional_str(data, "judge_model"),
        models=_models(data, base),
        token_budget=_token_budget(data),
        max_response_tokens=_int(data, "max_response_tokens", 2048, "max_response_tokens"),
        rag_enabled=_bool(data, "rag_enabled", True, "rag_enabled"),
        retrieval_k=_int(data, "retrieval_k", DEFAULT_TOP_K, "retrieval_k"),
        embedding_dimension=_int(data, "embedding_dimension", DEFAULT_DIMENSION, "embedding_dimension"),
        system_prompt_path=_path(prompts_raw.get("system"), base, "prompts.system"),
        user_prompt_path=_path(prompts_raw.get("user"), base, "prompts.user"),
        judge_criterion=str(data.get("judge_criterion", DEFAULT_JUDGE_CRITERION)),
        rate_card=_rate_card(data),
        opening_balance=_int(data, "opening_balance", 1_000_000, "opening_balance"),
        github=GitHubSettings(
            api_base=str(github_raw.get("api_base", GITHUB_API_BASE)),
            token=credentials.resolve_secret(credentials.GITHUB_TOKEN, github_raw.get("token")),
            webhook_secret=credentials.resolve_secret(credentials.WEBHOOK_SECRET, github_raw.get("webhook_secret")),
            post_comment=_bool(github_raw, "post_comment", True, "github.post_comment"),
            trigger_actions=_str_list(github_raw.get("trigger_actions", list(DEFAULT_TRIGGER_ACTIONS)),
                                      "github.trigger_actions"),
        ),
        slack_webhook_url=credentials.resolve_secret(credentials.SLACK_WEBHOOK_URL, slack_raw.get("webhook_url")),
        store_dir=store_dir or _path(data.get("store_dir"), base, "store_dir") or default_store_dir(),
        worker_limit=_int(data, "worker_limit", 4, "worker_limit"),
        severity_gate=severity_gate,
        server_host=str(server_raw.get("host", "127.0.0.1")),
        server_port=_int(server_raw, "port", 8080, "server.port"),
        description_threshold=float(threshold),
    )
    config.validate()
    config.prompt_template()
    logger.debug("Loaded configuration from %s", path or "defaults")
    return config
