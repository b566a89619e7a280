"""The four audit phases: dispatch, false-positive review, false-negative
mining, and integration with a bounded verification loop."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Sequence

from ..errors import MalformedVerdict
from ..manifest import ManifestEntry, Tier
from ..slicer import ContractSlice
from ..taxonomy import SemanticCorpus
from .llm import LlmClient, LlmRequest, LlmResponse, llm_complete

log = logging.getLogger(__name__)

DEFAULT_ROUND_CAP = 3

PHASE1 = "phase1"
PHASE21_INITIAL = "phase2_1_initial"
PHASE21_FEEDBACK = "phase2_1_feedback"
PHASE22 = "phase2_2"
PHASE3 = "phase3"


class Origin(str, Enum):
    MANIFEST = "Manifest"
    PHASE22 = "Phase22"


class Status(str, Enum):
    PENDING = "Pending"
    CONFIRMED = "Confirmed"
    SUSPICIOUS = "Suspicious"
    REJECTED = "Rejected"


class ReviewMode(str, Enum):
    INITIAL = "Initial"
    FEEDBACK = "FeedbackVerification"


@dataclass
class Finding:
    slice_id: str
    flaw_code: str
    origin: Origin
    confidence: float
    status: Status = Status.PENDING
    reason: str = ""
    suggestion: str = ""
    phase_trace: list[tuple[str, str]] = field(default_factory=list)
    diagnostic: str = ""

    def passed_review(self) -> bool:
        return any(p in (PHASE21_INITIAL, PHASE21_FEEDBACK) and v == "valid" for p, v in self.phase_trace)

    def to_dict(self) -> dict:
        out = {
            "slice_id": self.slice_id,
            "flaw_code": self.flaw_code,
            "origin": self.origin.value,
            "confidence": float(f"{self.confidence:.9g}"),
            "status": self.status.value,
            "reason": self.reason,
            "suggestion": self.suggestion,
            "phase_trace": [[p, v] for p, v in self.phase_trace],
        }
        if self.diagnostic:
            out["diagnostic"] = self.diagnostic
        return out


# --------------------------------------------------------------------------
# templates


def load_template(name: str) -> str:
    return resources.files(__package__).joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


def render(template: str, **values) -> str:
    """Substitute ``{name}`` placeholders that appear in ``values``; others stay literal."""
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]) if m.group(1) in values else m.group(0), template)


@dataclass(frozen=True)
class PromptSet:
    system: str
    initial: str
    feedback: str
    mining: str
    repair: str

    @classmethod
    def default(cls) -> "PromptSet":
        return cls(
            system=load_template("system"),
            initial=load_template("phase2_1_initial"),
            feedback=load_template("phase2_1_feedback"),
            mining=load_template("phase2_2"),
            repair=load_template("repair"),
        )

    @classmethod
    def from_dir(cls, path) -> "PromptSet":
        from pathlib import Path

        base = Path(path)
        read = lambda n: (base / f"{n}.txt").read_text(encoding="utf-8")  # noqa: E731
        return cls(read("system"), read("phase2_1_initial"), read("phase2_1_feedback"), read("phase2_2"), read("repair"))


_VERDICT_SCHEMA = '{"verdict": "valid" or "false_positive", "reason": "...", "suggestion": "..."}'
_MINING_SCHEMA = '{"findings": [{"flaw_code": "...", "reason": "...", "suggestion": "..."}]}'


# --------------------------------------------------------------------------
# LLM exchange with one repair attempt


class Session:
    """Per-slice LLM context: client, prompts, request settings and token tally."""

    def __init__(self, llm: LlmClient, prompts: PromptSet | None = None, max_tokens: int = 1024,
                 temperature: float = 0.0, attempts: int = 3, sleep=None):
        self.llm = llm
        self.prompts = prompts or PromptSet.default()
        self.max_tokens = max_tokens
        self.temperature = temperature
        self.attempts = attempts
        self.sleep = sleep
        self.usage = {"prompt": 0, "completion": 0}
        self.calls = 0

    def _call(self, user_text: str) -> LlmResponse:
        request = LlmRequest(self.prompts.system, user_text, self.temperature, self.max_tokens)
        kwargs = {"attempts": self.attempts}
        if self.sleep is not None:
            kwargs["sleep"] = self.sleep
        response = llm_complete(self.llm, request, **kwargs)
        self.calls += 1
        for k in ("prompt", "completion"):
            self.usage[k] += int(response.token_usage.get(k, 0))
        return response

    def ask_json(self, user_text: str, validate, schema: str):
        reply = self._call(user_text).text
        try:
            return validate(_parse_json(reply))
        except ValueError as exc:
            first_error = exc
        repair = render(self.prompts.repair, error=str(first_error), reply=reply, schema=schema)
        reply = self._call(repair).text
        try:
            return validate(_parse_json(reply))
        except ValueError as exc:
            raise MalformedVerdict(f"unparseable reply after repair: {exc}") from exc


_FENCE = re.compile(r"^```(?:json)?\s*(.*?)\s*```$", re.DOTALL)


def _parse_json(text: str):
    body = text.strip()
    m = _FENCE.match(body)
    if m:
        body = m.group(1)
    try:
        return json.loads(body)
    except json.JSONDecodeError as exc:
        raise ValueError(f"invalid JSON: {exc.msg}") from None


@dataclass(frozen=True)
class Verdict:
    valid: bool
    reason: str
    suggestion: str

    @property
    def label(self) -> str:
        return "valid" if self.valid else "false_positive"


def _validate_verdict(obj) -> Verdict:
    if not isinstance(obj, dict):
        raise ValueError("verdict must be a JSON object")
    v = obj.get("verdict")
    if v not in ("valid", "false_positive"):
        raise ValueError(f"verdict must be 'valid' or 'false_positive', got {v!r}")
    reason = obj.get("reason", "")
    suggestion = obj.get("suggestion", "")
    if not isinstance(reason, str) or not isinstance(suggestion, str):
        raise ValueError("reason and suggestion must be strings")
    if v == "valid" and not reason.strip():
        raise ValueError("a valid verdict needs a reason")
    return Verdict(v == "valid", reason, suggestion)


# --------------------------------------------------------------------------
# Phase 1


class Route(str, Enum):
    TO_PHASE21 = "ToPhase21"
    TO_PHASE22 = "ToPhase22"
    CLEAN = "Clean"


@dataclass
class RouteDecision:
    route: Route
    slice_id: str
    findings: list[Finding] = field(default_factory=list)
    fuzzy: list[tuple[str, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "slice_id": self.slice_id,
            "route": self.route.value,
            "absolute": [{"flaw_code": f.flaw_code, "confidence": f.confidence} for f in self.findings],
            "fuzzy": [{"flaw_code": c, "confidence": p} for c, p in self.fuzzy],
        }


def phase1_dispatch(entry: ManifestEntry) -> RouteDecision:
    """Route a manifest entry without any LLM call."""
    absolute = [r for r in entry.retained if r.tier is Tier.ABSOLUTE]
    fuzzy = [(r.flaw_code, r.score) for r in entry.retained if r.tier is Tier.FUZZY]
    if absolute:
        findings = [
            Finding(entry.slice_id, r.flaw_code, Origin.MANIFEST, r.score, phase_trace=[(PHASE1, "absolute")])
            for r in absolute
        ]
        return RouteDecision(Route.TO_PHASE21, entry.slice_id, findings, fuzzy)
    if fuzzy:
        return RouteDecision(Route.TO_PHASE22, entry.slice_id, [], fuzzy)
    return RouteDecision(Route.CLEAN, entry.slice_id)


# --------------------------------------------------------------------------
# Phase 2-1


def phase2_1_review(finding: Finding, slice_: ContractSlice, corpus: SemanticCorpus, session: Session,
                    mode: ReviewMode = ReviewMode.INITIAL, round_index: int = 0,
                    prior_findings: str = "") -> Verdict:
    """Ask the LLM to confirm or reject one flaw on one slice."""
    desc = corpus.get(finding.flaw_code)
    template = session.prompts.initial if mode is ReviewMode.INITIAL else session.prompts.feedback
    text = render(
        template,
        slice_id=slice_.slice_id,
        flaw_code=desc.code,
        flaw_name=desc.name,
        flaw_description=desc.description,
        confidence=f"{finding.confidence:.4f}",
        slice=slice_.normalized_slice,
        round=round_index,
        prior_findings=prior_findings or "(none)",
    )
    return session.ask_json(text, _validate_verdict, _VERDICT_SCHEMA)


# --------------------------------------------------------------------------
# Phase 2-2


def _flaw_catalog(corpus: SemanticCorpus) -> str:
    return "\n".join(f"- {d.code} ({d.name}): {d.description}" for d in corpus.descriptors)


def phase2_2_mine(slice_: ContractSlice, corpus: SemanticCorpus, session: Session,
                  hints: Sequence[str] = (), confidences: dict[str, float] | None = None,
                  diagnostics: list[str] | None = None) -> list[Finding]:
    """One breadth scan of a slice against the full flaw catalogue."""
    codes = set(corpus.codes)

    def validate(obj):
        if not isinstance(obj, dict) or not isinstance(obj.get("findings"), list):
            raise ValueError("expected an object with a 'findings' list")
        for item in obj["findings"]:
            if not isinstance(item, dict) or not isinstance(item.get("flaw_code"), str):
                raise ValueError("each finding needs a string flaw_code")
        return obj["findings"]

    text = render(
        session.prompts.mining,
        slice_id=slice_.slice_id,
        flaw_description=_flaw_catalog(corpus),
        slice=slice_.normalized_slice,
        prior_findings="\n".join(hints) if hints else "(none)",
    )
    items = session.ask_json(text, validate, _MINING_SCHEMA)
    confidences = confidences or {}
    out: list[Finding] = []
    seen: set[str] = set()
    for item in items:
        code = item["flaw_code"]
        if code not in codes:
            msg = f"{slice_.slice_id}: phase 2-2 cited unknown flaw code {code!r}; dropped"
            log.warning(msg)
            if diagnostics is not None:
                diagnostics.append(msg)
            continue
        if code in seen:
            continue
        seen.add(code)
        out.append(Finding(
            slice_.slice_id, code, Origin.PHASE22, confidences.get(code, 0.0),
            reason=str(item.get("reason", "")), suggestion=str(item.get("suggestion", "")),
            phase_trace=[(PHASE22, "found")],
        ))
    return out


# --------------------------------------------------------------------------
# Phase 3


@dataclass
class FeedbackItem:
    finding: Finding
    claim: str
    divergent: bool = False
    history: list[str] = field(default_factory=list)

    def prior_text(self) -> str:
        lines = [f"Phase 2-2 claim: {self.claim or '(no rationale given)'}"]
        if self.divergent:
            lines.append("Note: the initial Phase 2-1 review rejected this flaw; Phase 2-2 reports it again.")
        lines += self.history
        return "\n".join(lines)


def phase3_arbitrate(initial: list[Finding], candidates: list[Finding], slice_: ContractSlice,
                     corpus: SemanticCorpus, session: Session, round_cap: int = DEFAULT_ROUND_CAP):
    """Merge Phase 2-1 and Phase 2-2 output and run the verification loop.

    Returns ``(findings, feedback_items, rounds_used)``.  New Phase 2-2
    candidates get up to ``round_cap`` verification rounds and end
    Suspicious if none passes.  A candidate that contradicts an initial
    rejection is re-verified once and the verification verdict wins.
    """
    by_code = {f.flaw_code: f for f in initial}
    final = list(initial)
    items: list[FeedbackItem] = []
    for cand in candidates:
        prev = by_code.get(cand.flaw_code)
        if prev is not None and prev.status is Status.CONFIRMED:
            prev.phase_trace.append((PHASE22, "found"))
            continue
        if prev is not None and prev.status is Status.REJECTED:
            prev.phase_trace.append((PHASE22, "found"))
            prev.phase_trace.append((PHASE3, "divergent"))
            items.append(FeedbackItem(prev, cand.reason, divergent=True))
            continue
        cand.phase_trace.append((PHASE3, "feedback"))
        final.append(cand)
        by_code[cand.flaw_code] = cand
        items.append(FeedbackItem(cand, cand.reason))

    pending = list(items)
    rounds = 0
    for r in range(1, round_cap + 1):
        if not pending:
            break
        rounds = r
        still = []
        for item in pending:
            f = item.finding
            verdict = phase2_1_review(f, slice_, corpus, session, ReviewMode.FEEDBACK, r, item.prior_text())
            f.phase_trace.append((PHASE21_FEEDBACK, verdict.label))
            if verdict.valid:
                f.status = Status.CONFIRMED
                f.reason, f.suggestion = verdict.reason, verdict.suggestion
            elif item.divergent:
                f.status = Status.REJECTED
                f.reason = verdict.reason or f.reason
            else:
                item.history.append(f"Round {r} verification rejected the claim: {verdict.reason}")
                still.append(item)
        pending = still
    for item in pending:
        item.finding.status = Status.SUSPICIOUS
        item.finding.phase_trace.append((PHASE3, "unverified"))
    return final, items, rounds
