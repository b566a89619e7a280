"""Per-contract audit driver over the four phases."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from ..errors import FingerprintMismatch, IdMismatch, LlmTransportError, MalformedVerdict
from ..manifest import AuditInformedManifest, ManifestEntry
from ..slicer import ContractSlice
from ..taxonomy import SemanticCorpus
from .llm import LlmClient
from .phases import (
    DEFAULT_ROUND_CAP, PHASE1, PHASE21_INITIAL, PHASE22, Finding, Origin, PromptSet, ReviewMode, Route,
    Session, Status, phase1_dispatch, phase2_1_review, phase2_2_mine, phase3_arbitrate,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AuditConfig:
    round_cap: int = DEFAULT_ROUND_CAP
    in_flight: int = 4
    temperature: float = 0.0
    max_tokens: int = 1024
    attempts: int = 3

    def __post_init__(self):
        if self.round_cap < 1:
            raise ValueError("round_cap must be at least 1")
        if self.in_flight < 1:
            raise ValueError("in_flight must be at least 1")

    @classmethod
    def from_dict(cls, obj: Mapping) -> "AuditConfig":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SliceOutcome:
    slice_id: str
    route: Route
    findings: list[Finding]
    rounds_used: int = 0
    usage: dict = field(default_factory=lambda: {"prompt": 0, "completion": 0})
    llm_calls: int = 0
    diagnostics: list[str] = field(default_factory=list)


@dataclass
class AuditReport:
    contract_id: str
    findings: list[Finding]
    clean_slices: list[str]
    rounds_used: int
    token_usage_total: dict
    config_fingerprints: dict
    model: str = ""
    temperature: float = 0.0
    llm_calls: int = 0
    diagnostics: list[str] = field(default_factory=list)

    def counts(self) -> dict[str, int]:
        out = {s.value: 0 for s in Status}
        for f in self.findings:
            out[f.status.value] += 1
        return out

    def to_dict(self) -> dict:
        return {
            "contract_id": self.contract_id,
            "model": self.model,
            "temperature": self.temperature,
            "rounds_used": self.rounds_used,
            "llm_calls": self.llm_calls,
            "token_usage_total": dict(self.token_usage_total),
            "config_fingerprints": dict(self.config_fingerprints),
            "clean_slices": list(self.clean_slices),
            "findings": [f.to_dict() for f in self.findings],
            "diagnostics": list(self.diagnostics),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _audit_slice(entry: ManifestEntry, slice_: ContractSlice, corpus: SemanticCorpus, session: Session,
                 cfg: AuditConfig) -> SliceOutcome:
    decision = phase1_dispatch(entry)
    out = SliceOutcome(entry.slice_id, decision.route, [])
    if decision.route is Route.CLEAN:
        return out
    initial = decision.findings
    fuzzy = dict(decision.fuzzy)
    try:
        mine = decision.route is Route.TO_PHASE22 or bool(fuzzy)
        for f in initial:
            verdict = phase2_1_review(f, slice_, corpus, session, ReviewMode.INITIAL)
            f.phase_trace.append((PHASE21_INITIAL, verdict.label))
            f.reason, f.suggestion = verdict.reason, verdict.suggestion
            if verdict.valid:
                f.status = Status.CONFIRMED
            else:
                f.status = Status.REJECTED
                mine = True  # downgrade: the slice gets a breadth scan
        candidates: list[Finding] = []
        if mine:
            hints = [f"DCN fuzzy signal: {c} (confidence {p:.4f})" for c, p in decision.fuzzy]
            hints += [f"Initial review rejected {f.flaw_code}: {f.reason}" for f in initial
                      if f.status is Status.REJECTED]
            conf = {c: p for c, p in entry.scores.items()}
            candidates = phase2_2_mine(slice_, corpus, session, hints, conf, out.diagnostics)
            found = {c.flaw_code for c in candidates}
            for f in initial:
                if f.status is Status.REJECTED and f.flaw_code not in found:
                    f.phase_trace.append((PHASE22, "not_found"))
        findings, _, rounds = phase3_arbitrate(initial, candidates, slice_, corpus, session, cfg.round_cap)
        out.rounds_used = rounds
        # fuzzy signals that mining did not substantiate are recorded as rejections
        present = {f.flaw_code for f in findings}
        for code, p in decision.fuzzy:
            if code not in present:
                findings.append(Finding(
                    entry.slice_id, code, Origin.MANIFEST, p, Status.REJECTED,
                    reason="not substantiated by breadth scan",
                    phase_trace=[(PHASE1, "fuzzy"), (PHASE22, "not_found")],
                ))
        out.findings = findings
    except (LlmTransportError, MalformedVerdict) as exc:
        msg = f"{entry.slice_id}: audit aborted: {exc}"
        log.error(msg)
        out.diagnostics.append(msg)
        for f in initial:
            if f.status is Status.PENDING:
                f.status = Status.SUSPICIOUS
                f.diagnostic = str(exc)
        out.findings = list(initial)
    out.usage = dict(session.usage)
    out.llm_calls = session.calls
    return out


def run_audit(slices: Sequence[ContractSlice], manifest: AuditInformedManifest, corpus: SemanticCorpus,
              llm: LlmClient, config: AuditConfig = AuditConfig(), prompts: PromptSet | None = None,
              model_fingerprint: str | None = None, sleep=None) -> list[AuditReport]:
    """Audit every manifest entry and return one report per contract, sorted by contract id."""
    if manifest.corpus_fingerprint and manifest.corpus_fingerprint != corpus.fingerprint():
        raise FingerprintMismatch("manifest was built against a different corpus")
    if model_fingerprint is not None and manifest.model_fingerprint and manifest.model_fingerprint != model_fingerprint:
        raise FingerprintMismatch("manifest was built with a different model")
    by_id = {s.slice_id: s for s in slices}
    missing = [e.slice_id for e in manifest.entries if e.slice_id not in by_id]
    if missing:
        raise IdMismatch(f"manifest entries without slices: {missing[:5]}")
    prompts = prompts or PromptSet.default()

    def work(entry: ManifestEntry) -> SliceOutcome:
        session = Session(llm, prompts, config.max_tokens, config.temperature, config.attempts, sleep)
        return _audit_slice(entry, by_id[entry.slice_id], corpus, session, config)

    if config.in_flight == 1:
        outcomes = [work(e) for e in manifest.entries]
    else:
        with ThreadPoolExecutor(max_workers=config.in_flight) as pool:
            outcomes = list(pool.map(work, manifest.entries))

    prompt_fp = _sha(json.dumps(asdict(prompts), sort_keys=True))
    fingerprints = {
        "corpus": manifest.corpus_fingerprint or corpus.fingerprint(),
        "model": manifest.model_fingerprint,
        "filter": _sha(json.dumps(manifest.config.to_dict(), sort_keys=True)),
        "audit": _sha(json.dumps(config.to_dict(), sort_keys=True)),
        "prompts": prompt_fp,
    }
    grouped: dict[str, list[SliceOutcome]] = {}
    for o in outcomes:
        grouped.setdefault(by_id[o.slice_id].contract_id, []).append(o)
    reports = []
    for cid in sorted(grouped):
        group = grouped[cid]
        findings = sorted((f for o in group for f in o.findings), key=lambda f: (f.slice_id, f.flaw_code))
        reports.append(AuditReport(
            contract_id=cid,
            findings=findings,
            clean_slices=sorted(o.slice_id for o in group if o.route is Route.CLEAN),
            rounds_used=max((o.rounds_used for o in group), default=0),
            token_usage_total={k: sum(o.usage[k] for o in group) for k in ("prompt", "completion")},
            config_fingerprints=fingerprints,
            model=getattr(llm, "model", "unknown"),
            temperature=config.temperature,
            llm_calls=sum(o.llm_calls for o in group),
            diagnostics=sorted(d for o in group for d in o.diagnostics),
        ))
    return reports


def write_reports(reports: Sequence[AuditReport], path) -> None:
    """Write all reports as one JSON document ``{"reports": [...]}``."""
    doc = {"reports": [r.to_dict() for r in reports]}
    Path(path).write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def read_report_dicts(path) -> list[dict]:
    return json.loads(Path(path).read_text(encoding="utf-8"))["reports"]
