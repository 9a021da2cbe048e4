"""HTTP surface over the orchestrator.

Endpoints:
    POST /webhook/channel   inbound channel messages (seekers and experts)
    POST /onboard           enrollment form
    GET  /admin/tasks       verification queue (filter: state, expert_id)
    POST /kb/review         upload the reviewed CSV sheet
    GET  /health
    GET  /conversation/{user_id}   read model for chat clients
    GET  /admin/users       registered profiles
    GET  /admin/events      event log (read-only, audit/debug)
"""
from __future__ import annotations

import logging
from datetime import date

from fastapi import FastAPI, HTTPException, Query, Request

from .channel import SchemaViolation
from .kb_update import ReviewError, rows_from_csv
from .model import LanguageCode
from .onboarding import (
    DuplicateEnrollment,
    InvalidForm,
    OnboardingForm,
    UnknownUser,
)
from .service import Orchestrator

logger = logging.getLogger(__name__)


def create_app(orchestrator: Orchestrator) -> FastAPI:
    app = FastAPI(title="expertloop", docs_url=None, redoc_url=None)
    app.state.orchestrator = orchestrator
    admin_token = orchestrator.config.admin_token

    def check_admin(request: Request) -> None:
        if admin_token and request.headers.get("x-admin-token") != admin_token:
            raise HTTPException(status_code=403, detail="admin token required")

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "events": orchestrator.log.next_offset}

    @app.post("/webhook/channel")
    async def webhook(request: Request) -> dict:
        try:
            payload = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be JSON")
        try:
            outcomes = orchestrator.handle_webhook(payload)
        except SchemaViolation as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"ok": True, "outcomes": [o.to_dict() for o in outcomes]}

    @app.post("/onboard")
    async def onboard(request: Request) -> dict:
        body = await request.json()
        try:
            form = OnboardingForm(
                operating_doctor_id=body["operating_doctor_id"],
                operating_coordinator_id=body["operating_coordinator_id"],
                surgery_date=date.fromisoformat(body["surgery_date"]),
                patient_phone=body.get("patient_phone"),
                attendant_phone=body.get("attendant_phone"),
                patient_language=LanguageCode(body.get("patient_language", "EN")),
                attendant_language=LanguageCode(body.get("attendant_language", "EN")),
                demographics=body.get("demographics", ""),
            )
        except (KeyError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"bad form: {exc}")
        try:
            user_ids = orchestrator.onboard(form)
        except DuplicateEnrollment as exc:
            raise HTTPException(status_code=409, detail=f"already enrolled: {exc}")
        except InvalidForm as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"user_ids": user_ids}

    @app.get("/admin/tasks")
    def admin_tasks(
        request: Request,
        state: str | None = Query(default=None),
        expert_id: str | None = Query(default=None),
    ) -> dict:
        check_admin(request)
        return {"tasks": orchestrator.tasks_view(state=state, expert_id=expert_id)}

    @app.post("/kb/review")
    async def kb_review(request: Request) -> dict:
        check_admin(request)
        text = (await request.body()).decode("utf-8")
        try:
            rows = rows_from_csv(text)
            queued = orchestrator.ingest_review_rows(rows)
        except ReviewError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"queued": queued}

    @app.get("/conversation/{user_id}")
    def conversation(user_id: str) -> dict:
        try:
            return {"messages": orchestrator.conversation_view(user_id)}
        except UnknownUser:
            raise HTTPException(status_code=404, detail="unknown user")

    @app.get("/admin/users")
    def users(request: Request) -> dict:
        check_admin(request)
        return {"users": orchestrator.users_view()}

    @app.get("/admin/events")
    def events(request: Request, since: int = Query(default=0)) -> dict:
        check_admin(request)
        return {"events": orchestrator.events_view(since=since)}

    return app
