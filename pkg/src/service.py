"""Background analysis service for webhook-triggered runs.

Webhook deliveries must be acknowledged quickly, so verified pull request events
are queued here and analyzed on a pool of worker threads (up to the configured
worker limit). ``shutdown`` drains in-flight analyses before returning.
"""

import functools
import logging
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from datetime import datetime
from typing import Callable, Optional

import requests

from . import database as db
from .chunking import OversizeInputError
from .config import AppConfig
from .credits import CreditError
from .diffs import PullRequestRef
from .github_api import GitHubApiError, fetch_pr_diff, post_comment
from .pipeline import PipelineError, PipelineServices, run_pipeline
from .reporting import AnalysisReport
from .retrieval import build_index
from .slack import notify_slack

logger = logging.getLogger(__name__)

RUN_ERRORS = (PipelineError, CreditError, GitHubApiError, OversizeInputError, db.StoreError)


def build_services(
    config: AppConfig,
    session: Optional[requests.Session] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> PipelineServices:
    """Wire the pipeline to GitHub, Slack and the store described by ``config``.

    The store must already be initialized. The context index is built once from
    the stored documents.
    """
    session = session or requests.Session()
    github = config.github
    index = None
    if config.rag_enabled:
        index = build_index(db.load_context_docs(), config.embedding_dimension)
        logger.info("Context index holds %d document(s)", len(index))
    notify = None
    if config.slack_webhook_url:
        notify = functools.partial(notify_slack, config.slack_webhook_url, session=session)
    return PipelineServices(
        gateway=config.build_gateway(session),
        fetch_diff=functools.partial(fetch_pr_diff, github.api_base, github.token, session=session, sleep=sleep),
        persist=db.save_report,
        ledger=db.open_ledger(config.opening_balance),
        context_index=index,
        post_comment=functools.partial(post_comment, github.api_base, github.token, session=session, sleep=sleep),
        notify=notify,
    )


def make_runner(config: AppConfig, services: PipelineServices) -> Callable[[PullRequestRef], AnalysisReport]:
    """Bind the configured analysis settings and services to ``run_pipeline``."""
    return functools.partial(run_pipeline, settings=config.analysis_settings(), services=services)


class AnalysisService:
    """Runs queued pull request analyses on a worker pool.

    Args:
        run: Analyzes one pull request and returns its report.
        worker_limit: Maximum concurrent analyses.
        on_complete: Optional callback receiving each finished report.
        on_error: Optional callback receiving ``(pr, error message)``.
    """

    def __init__(
        self,
        run: Callable[[PullRequestRef], AnalysisReport],
        worker_limit: int = 1,
        on_complete: Optional[Callable[[AnalysisReport], None]] = None,
        on_error: Optional[Callable[[PullRequestRef, str], None]] = None,
    ):
        self._run = run
        self._worker_limit = worker_limit
        self._on_complete = on_complete
        self._on_error = on_error
        self._executor: Optional[ThreadPoolExecutor] = None
        self._lock = threading.Lock()
        self._completed = 0
        self._failed = 0
        self._last_run: Optional[datetime] = None

    def start(self):
        """Start the worker pool. Calling it twice is harmless."""
        with self._lock:
            if self._executor is None:
                self._executor = ThreadPoolExecutor(max_workers=self._worker_limit,
                                                    thread_name_prefix="analysis")

    def shutdown(self, wait: bool = True):
        """Stop accepting work; with ``wait`` block until queued analyses finish."""
        with self._lock:
            executor, self._executor = self._executor, None
        if executor is not None:
            executor.shutdown(wait=wait)

    @property
    def running(self) -> bool:
        return self._executor is not None

    def submit(self, pr: PullRequestRef) -> Future:
        """Queue one analysis.

        Raises:
            RuntimeError: If the service is not running.
        """
        with self._lock:
            if self._executor is None:
                raise RuntimeError("analysis service is not running")
            logger.info("Queued analysis of %s at %s", pr.slug, pr.head_sha[:7])
            return self._executor.submit(self._analyze, pr)

    def stats(self) -> dict:
        """Counters for the health endpoint.

        Returns:
            dict: ``completed``, ``failed`` and ``last_run`` (ISO timestamp or None).
        """
        return {
            "completed": self._completed,
            "failed": self._failed,
            "last_run": self._last_run.isoformat() if self._last_run else None,
        }

    def _analyze(self, pr: PullRequestRef) -> Optional[AnalysisReport]:
        try:
            report = self._run(pr)
        except RUN_ERRORS as e:
            self._record_failure(pr, str(e))
            return None
        except Exception as e:
            logger.exception("Analysis of %s crashed", pr.slug)
            self._record_failure(pr, f"Unexpected error - {e}")
            return None
        with self._lock:
            self._completed += 1
            self._last_run = datetime.now()
        if self._on_complete:
            self._on_complete(report)
        return report

    def _record_failure(self, pr: PullRequestRef, message: str):
        logger.error("Analysis of %s failed: %s", pr.slug, message)
        with self._lock:
            self._failed += 1
            self._last_run = datetime.now()
        if self._on_error:
            self._on_error(pr, message)
