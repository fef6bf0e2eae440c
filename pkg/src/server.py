"""HTTP intake for GitHub webhooks.

    POST /webhook   401 bad signature, 400 malformed payload, 200 ignored,
                    202 analysis queued
    GET  /healthz   service counters
"""

import logging
from contextlib import asynccontextmanager
from typing import Iterable

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from . import __version__
from .service import AnalysisService
from .webhooks import (
    DEFAULT_TRIGGER_ACTIONS,
    SIGNATURE_HEADER,
    IgnorableEvent,
    MalformedPayloadError,
    decode_event,
    verify_signature,
)

logger = logging.getLogger(__name__)


def create_app(
    webhook_secret: str,
    service: AnalysisService,
    trigger_actions: Iterable[str] = DEFAULT_TRIGGER_ACTIONS,
) -> FastAPI:
    """Build the webhook application.

    The analysis service is started with the app and drained on shutdown.
    """
    secret = webhook_secret.encode("utf-8")
    triggers = frozenset(trigger_actions)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        service.start()
        try:
            yield
        finally:
            logger.info("Draining in-flight analyses")
            service.shutdown(wait=True)

    app = FastAPI(title="Diff Sentinel", version=__version__, lifespan=lifespan)

    @app.post("/webhook")
    async def webhook(request: Request):
        payload = await request.body()
        if not verify_signature(payload, secret, request.headers.get(SIGNATURE_HEADER, "")):
            logger.warning("Rejected delivery with invalid signature")
            return JSONResponse({"status": "invalid signature"}, status_code=401)
        try:
            event = decode_event(request.headers, payload)
        except MalformedPayloadError as e:
            logger.warning("Malformed delivery: %s", e)
            return JSONResponse({"status": "malformed", "detail": str(e)}, status_code=400)
        if isinstance(event, IgnorableEvent):
            return JSONResponse({"status": "ignored", "event": event.event_kind})
        if event.action not in triggers:
            return JSONResponse({"status": "ignored", "action": event.action})
        service.submit(event.pr)
        return JSONResponse({"status": "queued", "delivery_id": event.delivery_id}, status_code=202)

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok", "version": __version__, **service.stats()}

    return app
