"""GitHub REST API client.

Supported endpoints:
    - GET  /repos/{owner}/{name}/pulls/{number} (diff media type) - PR diff
    - POST /repos/{owner}/{name}/issues/{number}/comments - summary comment

The token is an opaque personal or installation token sent as a bearer token.
Transient failures (connection errors, timeouts, 429 and 5xx) are retried up to
three times with 1s/2s/4s backoff; ``api_base`` can point at a fake server.
"""

import logging
import time
from typing import Callable, Dict, List, Optional

import requests

from .diffs import PullRequestRef
from .transport import RetriesExhausted, send_with_retries

logger = logging.getLogger(__name__)

GITHUB_API_BASE = "https://api.github.com"
DIFF_MEDIA_TYPE = "application/vnd.github.v3.diff"
JSON_MEDIA_TYPE = "application/vnd.github+json"
MAX_COMMENT_CHARS = 65_000


class GitHubApiError(Exception):
    """Base exception for GitHub API errors."""


class UnknownPullRequestError(GitHubApiError):
    """Repository or pull request not found (404)."""


class GitHubAuthError(GitHubApiError):
    """Token missing or rejected (401/403)."""


class GitHubTransportError(GitHubApiError):
    """GitHub unreachable or failing after retries."""


def _get_headers(token: Optional[str], accept: str) -> Dict[str, str]:
    """Build request headers.

    Raises:
        GitHubAuthError: If no token is configured.
    """
    if not token:
        raise GitHubAuthError("No GitHub token configured. Set DIFFSENTINEL_GITHUB_TOKEN or store one.")
    return {
        "Authorization": f"Bearer {token}",
        "Accept": accept,
        "X-GitHub-Api-Version": "2022-11-28",
    }


def _request(
    session: Optional[requests.Session],
    method: str,
    url: str,
    sleep: Callable[[float], None],
    **kwargs,
) -> requests.Response:
    try:
        return send_with_retries(session or requests.Session(), method, url, sleep=sleep, **kwargs)
    except RetriesExhausted as e:
        raise GitHubTransportError(str(e)) from e
    except requests.exceptions.RequestException as e:
        raise GitHubTransportError(f"Request error: {e}") from e


def _check_status(response: requests.Response, pr: PullRequestRef, expected: int) -> None:
    if response.status_code in (401, 403):
        raise GitHubAuthError(f"GitHub rejected the token for {pr.slug} ({response.status_code}).")
    if response.status_code == 404:
        raise UnknownPullRequestError(f"Pull request {pr.slug} not found.")
    if response.status_code != expected:
        raise GitHubApiError(f"GitHub API error: {response.status_code} - {response.text[:200]}")


def fetch_pr_diff(
    api_base: str,
    token: Optional[str],
    pr: PullRequestRef,
    session: Optional[requests.Session] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """Fetch the unified diff of a pull request.

    Args:
        api_base: API root, e.g. ``https://api.github.com``.
        token: GitHub token.
        pr: Pull request to fetch.
        session: HTTP session (a fake one in tests).
        sleep: Backoff sleep.

    Returns:
        str: Response body. Bytes that are not valid UTF-8 become U+FFFD and
        a warning is logged.

    Raises:
        UnknownPullRequestError: On 404.
        GitHubAuthError: On 401/403 or a missing token.
        GitHubTransportError: If the request still fails after retries.
    """
    url = f"{api_base.rstrip('/')}/repos/{pr.repo_owner}/{pr.repo_name}/pulls/{pr.number}"
    response = _request(session, "GET", url, sleep, headers=_get_headers(token, DIFF_MEDIA_TYPE))
    _check_status(response, pr, 200)
    logger.info("Fetched diff for %s (%d bytes)", pr.slug, len(response.content))
    try:
        return response.content.decode("utf-8")
    except UnicodeDecodeError as e:
        logger.warning("Diff for %s is not valid UTF-8 (first bad byte at offset %d); "
                       "undecodable bytes replaced with U+FFFD", pr.slug, e.start)
        return response.content.decode("utf-8", errors="replace")


def split_comment(body: str, limit: int = MAX_COMMENT_CHARS) -> List[str]:
    """Split a long body into numbered parts of at most ``limit`` characters.

    Bodies within the limit are returned as is; otherwise every part ends with
    `` (i/n)``.
    """
    if len(body) <= limit:
        return [body]
    parts = 2
    while True:
        size = limit - len(f" ({parts}/{parts})")
        needed = -(-len(body) // size)
        if needed <= parts:
            break
        parts = needed
    return [f"{body[i * size:(i + 1) * size]} ({i + 1}/{needed})" for i in range(needed)]


def post_comment(
    api_base: str,
    token: Optional[str],
    pr: PullRequestRef,
    body: str,
    session: Optional[requests.Session] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> List[int]:
    """Post a summary comment on the pull request conversation.

    Returns:
        List[int]: Server-assigned comment ids, one per posted part.

    Raises:
        ValueError: If ``body`` is empty; nothing is sent.
        GitHubApiError: On auth, not-found or transport failure.
    """
    if not body:
        raise ValueError("comment body must be non-empty")
    url = f"{api_base.rstrip('/')}/repos/{pr.repo_owner}/{pr.repo_name}/issues/{pr.number}/comments"
    headers = _get_headers(token, JSON_MEDIA_TYPE)
    comment_ids = []
    for part in split_comment(body):
        response = _request(session, "POST", url, sleep, headers=headers, json={"body": part})
        _check_status(response, pr, 201)
        try:
            comment_ids.append(int(response.json()["id"]))
        except (ValueError, KeyError, TypeError) as e:
            raise GitHubApiError("GitHub returned a comment without an id") from e
    logger.info("Posted %d comment(s) on %s", len(comment_ids), pr.slug)
    return comment_ids
