"""Local HTTP service over a run: state snapshots, SSE events, operator input.

Binds loopback by default; there is no authentication, the service is a
single-run companion for the operator console.
"""

from __future__ import annotations

import json
import logging

from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, StreamingResponse

from ..orchestrator import RunController
from ..repetition import OperatorDecision
from .schemas import AckResponse, DecisionRequest, FeedbackRequest, StateResponse

logger = logging.getLogger(__name__)


def _sse_frame(event) -> str:
    return f"id: {event.seq}\nevent: {event.kind}\ndata: {json.dumps(event.to_dict())}\n\n"


def create_app(controller: RunController) -> FastAPI:
    app = FastAPI(title="pentagent service", version="0.1.0")

    @app.get("/api/state", response_model=StateResponse)
    def get_state() -> StateResponse:
        return StateResponse(**controller.snapshot())

    @app.get("/api/events")
    def get_events(from_seq: int = Query(default=0, alias="from", ge=0)) -> StreamingResponse:
        def stream():
            for event in controller.events.subscribe(from_seq):
                if event is None:
                    yield ": keepalive\n\n"
                else:
                    yield _sse_frame(event)

        return StreamingResponse(
            stream(),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    @app.post("/api/decision", response_model=AckResponse)
    def post_decision(body: DecisionRequest) -> AckResponse:
        if body.kind in ("interactive", "general") and not body.payload.strip():
            raise HTTPException(status_code=400, detail=f"{body.kind} decision requires a payload")
        decision = OperatorDecision(kind=body.kind, payload=body.payload.strip())
        if not controller.channel.resolve(body.prompt_id, decision):
            raise HTTPException(status_code=409, detail="no pending prompt with that id")
        return AckResponse(accepted=True)

    @app.post("/api/feedback", response_model=AckResponse)
    def post_feedback(body: FeedbackRequest) -> AckResponse:
        pending = controller.channel.pending()
        if pending is None:
            raise HTTPException(status_code=409, detail="no pending prompt awaiting feedback")
        decision = OperatorDecision(kind="interactive", payload=body.text.strip())
        if not controller.channel.resolve(pending.prompt_id, decision):
            raise HTTPException(status_code=409, detail="prompt was answered concurrently")
        return AckResponse(accepted=True)

    @app.get("/api/report")
    def get_report() -> FileResponse:
        if not controller.report_ready:
            raise HTTPException(status_code=404, detail="report not ready")
        return FileResponse(
            controller.config.report_out, media_type="text/csv", filename="report.csv"
        )

    return app
