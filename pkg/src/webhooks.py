"""GitHub webhook authentication and event decoding."""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
from dataclasses import dataclass
from typing import Any, Mapping, Union

from .diffs import PullRequestRef

logger = logging.getLogger(__name__)

EVENT_HEADER = "X-GitHub-Event"
SIGNATURE_HEADER = "X-Hub-Signature-256"
DELIVERY_HEADER = "X-GitHub-Delivery"
SIGNATURE_PREFIX = "sha256="
DEFAULT_TRIGGER_ACTIONS = ("opened", "reopened", "synchronize")


class WebhookError(Exception):
    """Base class for webhook intake errors."""


class MalformedPayloadError(WebhookError):
    """A pull_request delivery lacks required fields or is not valid JSON."""


@dataclass(frozen=True)
class WebhookEvent:
    event_kind: str
    delivery_id: str
    action: str
    pr: PullRequestRef
    raw_payload: bytes

    def __post_init__(self):
        if not self.delivery_id:
            raise ValueError("delivery_id must be non-empty")


@dataclass(frozen=True)
class IgnorableEvent:
    """A verified delivery that never triggers analysis (ping, issues, ...)."""

    event_kind: str
    delivery_id: str


def sign(payload: bytes, secret: bytes) -> str:
    """Signature header value GitHub would send for ``payload``."""
    return SIGNATURE_PREFIX + hmac.new(secret, payload, hashlib.sha256).hexdigest()


def verify_signature(payload: bytes, secret: bytes, signature_header: str) -> bool:
    """Check ``signature_header`` against the HMAC-SHA256 of ``payload``.

    Never raises; a missing or malformed header is simply invalid.
    """
    if not secret or not isinstance(signature_header, str):
        return False
    if not signature_header.startswith(SIGNATURE_PREFIX):
        return False
    expected = sign(payload, secret)
    return hmac.compare_digest(expected.encode("ascii"), signature_header.encode("utf-8", errors="replace"))


def _header(headers: Mapping[str, str], name: str) -> str:
    lowered = name.lower()
    for key, value in headers.items():
        if key.lower() == lowered:
            return value
    return ""


def _field(data: Any, *path: str) -> Any:
    current = data
    for key in path:
        if not isinstance(current, dict) or key not in current:
            raise MalformedPayloadError(f"pull_request payload is missing {'.'.join(path)}")
        current = current[key]
    return current


def decode_event(headers: Mapping[str, str], payload: bytes) -> Union[WebhookEvent, IgnorableEvent]:
    """Decode a verified delivery.

    Returns:
        WebhookEvent for pull_request deliveries, IgnorableEvent otherwise.

    Raises:
        MalformedPayloadError: If headers are missing, the body is not JSON, or
            the pull request coordinates are incomplete.
    """
    event_kind = _header(headers, EVENT_HEADER)
    delivery_id = _header(headers, DELIVERY_HEADER)
    if not event_kind or not delivery_id:
        raise MalformedPayloadError(f"missing {EVENT_HEADER} or {DELIVERY_HEADER} header")
    if event_kind != "pull_request":
        logger.debug("Ignoring %s delivery %s", event_kind, delivery_id)
        return IgnorableEvent(event_kind, delivery_id)

    try:
        data = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedPayloadError(f"delivery {delivery_id} is not valid JSON") from e

    action = _field(data, "action")
    try:
        pr = PullRequestRef(
            repo_owner=_field(data, "repository", "owner", "login"),
            repo_name=_field(data, "repository", "name"),
            number=_field(data, "pull_request", "number"),
            head_sha=_field(data, "pull_request", "head", "sha"),
            base_sha=_field(data, "pull_request", "base", "sha"),
        )
    except (TypeError, ValueError) as e:
        raise MalformedPayloadError(f"delivery {delivery_id}: {e}") from e
    if not isinstance(action, str):
        raise MalformedPayloadError(f"delivery {delivery_id}: action is not a string")
    return WebhookEvent(event_kind, delivery_id, action, pr, payload)
