"""Secret storage using the operating system credential store.

Secrets (GitHub token, webhook secret, Slack webhook URL, provider API keys) are
kept in the OS vault via the keyring library, namespaced under the service name
"DiffSentinel". An environment variable always takes precedence over the vault,
so CI runners can inject secrets without touching it.
"""

import logging
import os
from typing import Optional

import keyring
import keyring.errors

SERVICE_NAME = "DiffSentinel"

GITHUB_TOKEN = "github_token"
WEBHOOK_SECRET = "webhook_secret"
SLACK_WEBHOOK_URL = "slack_webhook_url"

SECRET_NAMES = (GITHUB_TOKEN, WEBHOOK_SECRET, SLACK_WEBHOOK_URL)

logger = logging.getLogger(__name__)


def env_var_for(name: str) -> str:
    """``"github_token"`` -> ``"DIFFSENTINEL_GITHUB_TOKEN"``."""
    return f"DIFFSENTINEL_{name.upper()}"


def store_secret(name: str, value: str) -> bool:
    """Store a secret in the credential store.

    Returns:
        bool: True on success, False on failure.
    """
    try:
        keyring.set_password(SERVICE_NAME, name, value)
        return True
    except Exception:
        logger.exception("Error storing secret %s", name)
        return False


def get_secret(name: str) -> Optional[str]:
    """Read a secret from the credential store; None when absent or unavailable."""
    try:
        return keyring.get_password(SERVICE_NAME, name)
    except Exception:
        logger.exception("Error retrieving secret %s", name)
        return None


def delete_secret(name: str) -> bool:
    """Delete a secret.

    Returns:
        bool: True on success (or if the secret doesn't exist), False on other failures.
    """
    try:
        keyring.delete_password(SERVICE_NAME, name)
        return True
    except keyring.errors.PasswordDeleteError:
        # Not stored
        return True
    except Exception:
        logger.exception("Error deleting secret %s", name)
        return False


def resolve_secret(name: str, file_value: Optional[str] = None, env_var: Optional[str] = None) -> Optional[str]:
    """Resolve a secret: environment variable, then credential store, then config file.

    Args:
        name: Secret name in the credential store.
        file_value: Value from the config file, used last.
        env_var: Environment variable to consult; defaults to ``env_var_for(name)``.
    """
    from_env = os.environ.get(env_var or env_var_for(name))
    if from_env:
        return from_env
    return get_secret(name) or file_value or None
