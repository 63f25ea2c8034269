"""Request/response models for the HTTP API."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field


class PendingPrompt(BaseModel):
    prompt_id: str
    step_statement: str
    nearest_iteration: Optional[int] = None
    distance: float


class StateResponse(BaseModel):
    phase: Optional[str]
    iteration: int
    targets: list[str]
    ptt: str
    ptt_revision: int
    stop_reason: Optional[str] = None
    report_ready: bool = False
    error: Optional[str] = None
    pending_prompt: Optional[PendingPrompt] = None


class DecisionRequest(BaseModel):
    prompt_id: str
    kind: Literal["continue", "exit", "interactive", "general"]
    payload: str = ""


class FeedbackRequest(BaseModel):
    text: str = Field(min_length=1)


class AckResponse(BaseModel):
    accepted: bool
    detail: str = ""
