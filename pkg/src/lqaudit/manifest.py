"""Audit-Informed Manifest: two-stage confidence filtering of flaw scores.

Each score ``p_k`` of a slice lands in one of three bands:

* ``p_k >= tau_high``            retained, tier Absolute
* ``p_k < tau_low``              discarded as background noise
* ``tau_low <= p_k < tau_high``  retained as Fuzzy only when its
  peak-to-noise ratio ``p_k / (mu_noise + eps)`` reaches ``tau_pnr``

``mu_noise`` is the mean of the sub-``tau_low`` scores of the same slice
(``tau_low`` itself when there are none).  A corpus-wide noise floor is
available behind ``noise_scope="global"``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dcn.model import ScoredSlice


class Tier(str, Enum):
    ABSOLUTE = "Absolute"
    FUZZY = "Fuzzy"


@dataclass(frozen=True)
class FilterConfig:
    tau_high: float = 0.3
    tau_low: float = 0.001
    tau_pnr: float = 10.0
    epsilon: float = 1e-12
    noise_scope: str = "slice"  # "slice" | "global"

    def __post_init__(self):
        if not 0 < self.tau_low < self.tau_high < 1:
            raise ValueError("need 0 < tau_low < tau_high < 1")
        if not self.tau_pnr > 1:
            raise ValueError("tau_pnr must exceed 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.noise_scope not in ("slice", "global"):
            raise ValueError(f"unknown noise_scope {self.noise_scope!r}")

    @classmethod
    def from_dict(cls, obj: Mapping) -> "FilterConfig":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RetainedFlaw:
    flaw_code: str
    score: float
    tier: Tier
    pnr: float | None = None

    def to_dict(self) -> dict:
        return {"flaw_code": self.flaw_code, "score": _sig9(self.score), "tier": self.tier.value,
                "pnr": None if self.pnr is None else _sig9(self.pnr)}


@dataclass(frozen=True)
class ManifestEntry:
    slice_id: str
    scores: dict[str, float]
    retained: tuple[RetainedFlaw, ...]
    discarded: tuple[str, ...]
    noise_floor: float

    @property
    def is_clean(self) -> bool:
        return not self.retained

    def absolute(self) -> list[RetainedFlaw]:
        return [r for r in self.retained if r.tier is Tier.ABSOLUTE]

    def fuzzy(self) -> list[RetainedFlaw]:
        return [r for r in self.retained if r.tier is Tier.FUZZY]

    def to_dict(self) -> dict:
        return {
            "slice_id": self.slice_id,
            "scores": {k: _sig9(v) for k, v in self.scores.items()},
            "noise_floor": _sig9(self.noise_floor),
            "retained": [r.to_dict() for r in self.retained],
            "discarded": list(self.discarded),
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ManifestEntry":
        return cls(
            slice_id=obj["slice_id"],
            scores=dict(obj["scores"]),
            retained=tuple(
                RetainedFlaw(r["flaw_code"], r["score"], Tier(r["tier"]), r.get("pnr")) for r in obj["retained"]
            ),
            discarded=tuple(obj["discarded"]),
            noise_floor=obj["noise_floor"],
        )


@dataclass
class AuditInformedManifest:
    entries: list[ManifestEntry]
    corpus_fingerprint: str
    model_fingerprint: str
    config: FilterConfig
    provenance: dict = field(default_factory=dict)

    def entry(self, slice_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.slice_id == slice_id:
                return e
        raise KeyError(slice_id)

    def to_dict(self) -> dict:
        out = {
            "config": self.config.to_dict(),
            "model_fingerprint": self.model_fingerprint,
            "corpus_fingerprint": self.corpus_fingerprint,
            "entries": [e.to_dict() for e in self.entries],
        }
        if self.provenance:
            out["provenance"] = self.provenance
        return out

    @classmethod
    def from_dict(cls, obj: Mapping) -> "AuditInformedManifest":
        return cls(
            entries=[ManifestEntry.from_dict(e) for e in obj["entries"]],
            corpus_fingerprint=obj["corpus_fingerprint"],
            model_fingerprint=obj["model_fingerprint"],
            config=FilterConfig.from_dict(obj["config"]),
            provenance=dict(obj.get("provenance", {})),
        )


def _sig9(x: float) -> float:
    return float(f"{x:.9g}")


def noise_floor(scores, tau_low: float) -> float:
    """Mean of the scores strictly below ``tau_low``; ``tau_low`` if none are."""
    s = np.asarray(scores, dtype=np.float64)
    low = s[s < tau_low]
    return float(low.mean()) if low.size else float(tau_low)


def pnr(p: float, mu_noise: float, epsilon: float = 1e-12) -> float:
    return p / (mu_noise + epsilon)


def partition(scores: Sequence[float], config: FilterConfig = FilterConfig(),
              codes: Sequence[str] | None = None, mu_noise: float | None = None,
              slice_id: str = "") -> ManifestEntry:
    """Split one slice's score vector into Absolute / Fuzzy / discarded flaws.

    ``mu_noise`` overrides the per-slice noise floor (used for the global
    noise scope).
    """
    scores = [float(p) for p in scores]
    codes = list(codes) if codes is not None else [str(k) for k in range(len(scores))]
    if len(codes) != len(scores):
        raise ValueError(f"{len(scores)} scores for {len(codes)} codes")
    mu = noise_floor(scores, config.tau_low) if mu_noise is None else float(mu_noise)
    retained, discarded = [], []
    for code, p in zip(codes, scores):
        if p >= config.tau_high:
            retained.append(RetainedFlaw(code, p, Tier.ABSOLUTE))
        elif p < config.tau_low:
            discarded.append(code)
        else:
            ratio = pnr(p, mu, config.epsilon)
            if ratio >= config.tau_pnr:
                retained.append(RetainedFlaw(code, p, Tier.FUZZY, ratio))
            else:
                discarded.append(code)
    return ManifestEntry(slice_id, dict(zip(codes, scores)), tuple(retained), tuple(discarded), mu)


def build_manifest(scored: Sequence[ScoredSlice], codes: Sequence[str], config: FilterConfig = FilterConfig(),
                   corpus_fingerprint: str = "", model_fingerprint: str = "",
                   provenance: dict | None = None) -> AuditInformedManifest:
    """Partition every scored slice; clean slices are kept with empty ``retained``."""
    mu_global = None
    if config.noise_scope == "global":
        everything = [p for s in scored for p in s.scores]
        mu_global = noise_floor(everything, config.tau_low)
    entries = [partition(s.scores, config, codes, mu_global, s.slice_id) for s in scored]
    return AuditInformedManifest(entries, corpus_fingerprint, model_fingerprint, config, provenance or {})


def write_manifest(manifest: AuditInformedManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n", encoding="utf-8")


def read_manifest(path) -> AuditInformedManifest:
    return AuditInformedManifest.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
