"""Retrying HTTP requests shared by the GitHub and chat-completion clients."""

from __future__ import annotations

import logging
import time
from typing import Callable, Optional

import requests

logger = logging.getLogger(__name__)

RETRY_DELAYS_SECONDS = (1, 2, 4)
DEFAULT_TIMEOUT = 30


def is_retryable_status(status_code: int) -> bool:
    return status_code >= 500 or status_code == 429


class RetriesExhausted(Exception):
    """Every attempt failed with a transient error.

    Attributes:
        response: Last response received, if any attempt got one.
        attempts: Number of requests issued.
    """

    def __init__(self, message: str, attempts: int, response: Optional[requests.Response] = None):
        super().__init__(message)
        self.attempts = attempts
        self.response = response


def send_with_retries(
    session: requests.Session,
    method: str,
    url: str,
    *,
    sleep: Callable[[float], None] = time.sleep,
    delays: tuple[float, ...] = RETRY_DELAYS_SECONDS,
    **kwargs,
) -> requests.Response:
    """Issue a request, retrying transient failures with exponential backoff.

    Connection errors, timeouts, 429 and 5xx responses are retried once per
    entry in ``delays`` (1s, 2s, 4s by default). Any other response is
    returned to the caller unchanged.

    Raises:
        RetriesExhausted: If the last attempt still failed transiently.
    """
    kwargs.setdefault("timeout", DEFAULT_TIMEOUT)
    attempts = 0
    last_error = ""
    last_response: Optional[requests.Response] = None
    for delay in (*delays, None):
        attempts += 1
        try:
            response = session.request(method, url, **kwargs)
        except (requests.exceptions.ConnectionError, requests.exceptions.Timeout) as exc:
            last_error, last_response = str(exc), None
        else:
            if not is_retryable_status(response.status_code):
                return response
            last_error, last_response = f"HTTP {response.status_code}", response
        if delay is None:
            break
        logger.warning("%s %s failed (%s); retrying in %ss", method, url, last_error, delay)
        sleep(delay)
    raise RetriesExhausted(f"{method} {url} failed after {attempts} attempts: {last_error}",
                           attempts, last_response)
