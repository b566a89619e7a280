"""LLM-driven four-phase audit: dispatch, review, mining, arbitration."""

from .audit import AuditConfig, AuditReport, SliceOutcome, read_report_dicts, run_audit, write_reports
from .llm import (
    HttpChatClient, LlmClient, LlmRequest, LlmResponse, RecordingClient, ReplayClient, ScriptedClient,
    TransientLlmError, llm_complete,
)
from .phases import (
    DEFAULT_ROUND_CAP, FeedbackItem, Finding, Origin, PromptSet, ReviewMode, Route, RouteDecision, Session,
    Status, Verdict, load_template, phase1_dispatch, phase2_1_review, phase2_2_mine, phase3_arbitrate, render,
)

__all__ = [
    "AuditConfig", "AuditReport", "SliceOutcome", "run_audit", "write_reports", "read_report_dicts",
    "HttpChatClient", "LlmClient", "LlmRequest", "LlmResponse", "RecordingClient", "ReplayClient",
    "ScriptedClient", "TransientLlmError", "llm_complete",
    "DEFAULT_ROUND_CAP", "FeedbackItem", "Finding", "Origin", "PromptSet", "ReviewMode", "Route",
    "RouteDecision", "Session", "Status", "Verdict", "load_template", "phase1_dispatch",
    "phase2_1_review", "phase2_2_mine", "phase3_arbitrate", "render",
]
