"""Slack incoming-webhook notifications.

Delivery is fire-and-forget: one POST, no retry, and failures come back as a
``DeliveryResult`` instead of an exception.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import requests

logger = logging.getLogger(__name__)

MAX_TEXT_CHARS = 4000
ELLIPSIS_MARKER = "…[truncated]"
SLACK_TIMEOUT = 10


def truncate_text(text: str, limit: int = MAX_TEXT_CHARS) -> str:
    """Cut ``text`` to ``limit`` characters including the trailing marker."""
    if len(text) <= limit:
        return text
    return text[:limit - len(ELLIPSIS_MARKER)] + ELLIPSIS_MARKER


@dataclass(frozen=True)
class NotificationMessage:
    text: str
    channel_kind: str = "slack"

    def __post_init__(self):
        if len(self.text) > MAX_TEXT_CHARS:
            raise ValueError(f"notification text exceeds {MAX_TEXT_CHARS} characters")

    @classmethod
    def of(cls, text: str) -> "NotificationMessage":
        return cls(truncate_text(text))


@dataclass(frozen=True)
class DeliveryResult:
    delivered: bool
    status_code: Optional[int] = None
    error: Optional[str] = None


def notify_slack(
    webhook_url: str,
    message: NotificationMessage,
    session: Optional[requests.Session] = None,
) -> DeliveryResult:
    """POST ``{"text": ...}`` to an incoming webhook.

    Returns:
        DeliveryResult: ``delivered`` is True for any 2xx response.
    """
    session = session or requests.Session()
    try:
        response = session.post(webhook_url, json={"text": truncate_text(message.text)}, timeout=SLACK_TIMEOUT)
    except requests.exceptions.RequestException as e:
        logger.warning("Slack delivery failed: %s", e)
        return DeliveryResult(False, error=str(e))
    if 200 <= response.status_code < 300:
        return DeliveryResult(True, response.status_code)
    logger.warning("Slack delivery failed: HTTP %d", response.status_code)
    return DeliveryResult(False, response.status_code, f"HTTP {response.status_code}")
