"""Liquidity-flaw taxonomy and the semantic corpus of flaw descriptions.

The corpus is the set of textual flaw descriptions that the co-attention
model aligns contract slices against.  Its descriptor order defines the
flaw index ``k`` used by every downstream stage.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

from .errors import ParseError, ValidationError

if TYPE_CHECKING:
    from .embedding import EmbeddedSequence


class FlawGroup(str, Enum):
    ENDOGENOUS = "Endogenous"
    EXOGENOUS = "Exogenous"


# Fixed code -> group mapping of the liquidity taxonomy.
LIQUIDITY_GROUPS: dict[str, FlawGroup] = {
    "LIF": FlawGroup.ENDOGENOUS,
    "BPF": FlawGroup.ENDOGENOUS,
    "GAR": FlawGroup.ENDOGENOUS,
    "LVD": FlawGroup.EXOGENOUS,
    "TLS": FlawGroup.EXOGENOUS,
}

MIN_DESCRIPTION_CHARS = 20


@dataclass(frozen=True)
class FlawDescriptor:
    code: str
    group: FlawGroup
    name: str
    description: str

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "group": self.group.value,
            "name": self.name,
            "description": self.description,
        }


@dataclass(frozen=True)
class SemanticCorpus:
    descriptors: tuple[FlawDescriptor, ...]
    embeddings: tuple["EmbeddedSequence", ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.embeddings is not None and len(self.embeddings) != len(self.descriptors):
            raise ValidationError(
                f"{len(self.embeddings)} embeddings for {len(self.descriptors)} descriptors"
            )

    @property
    def K(self) -> int:
        return len(self.descriptors)

    @property
    def codes(self) -> list[str]:
        return [d.code for d in self.descriptors]

    def index(self, code: str) -> int:
        for k, d in enumerate(self.descriptors):
            if d.code == code:
                return k
        raise KeyError(code)

    def get(self, code: str) -> FlawDescriptor:
        return self.descriptors[self.index(code)]

    def with_embeddings(self, embeddings) -> "SemanticCorpus":
        return SemanticCorpus(self.descriptors, tuple(embeddings))

    def to_json(self) -> str:
        return json.dumps([d.to_dict() for d in self.descriptors], indent=2, ensure_ascii=False) + "\n"

    def fingerprint(self) -> str:
        """sha256 over the canonical descriptor list (embeddings excluded)."""
        canon = json.dumps([d.to_dict() for d in self.descriptors], sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _descriptor_from_obj(obj, position: int, groups: dict[str, FlawGroup] | None) -> FlawDescriptor:
    if not isinstance(obj, dict):
        raise ValidationError(f"entry {position}: expected an object")
    for key in ("code", "group", "name", "description"):
        if not isinstance(obj.get(key), str):
            raise ValidationError(f"entry {position}: missing or non-text field {key!r}")
    code = obj["code"]
    try:
        group = FlawGroup(obj["group"])
    except ValueError:
        raise ValidationError(f"entry {position}: unknown group {obj['group']!r}") from None
    if groups is not None:
        if code not in groups:
            raise ValidationError(f"entry {position}: unknown flaw code {code!r}")
        if groups[code] is not group:
            raise ValidationError(f"{code} belongs to {groups[code].value}, not {group.value}")
    desc = obj["description"].strip()
    if len(desc) < MIN_DESCRIPTION_CHARS:
        raise ValidationError(f"{code}: description shorter than {MIN_DESCRIPTION_CHARS} characters")
    return FlawDescriptor(code=code, group=group, name=obj["name"], description=obj["description"])


def corpus_from_list(entries: list, taxonomy: dict[str, FlawGroup] | None = LIQUIDITY_GROUPS) -> SemanticCorpus:
    """Validate a decoded corpus list.

    With the default liquidity ``taxonomy`` every code must be known and all
    five must be present.  Pass ``taxonomy=None`` for a custom corpus (for
    example a traditional-vulnerability one); only uniqueness and the
    description length are then enforced.
    """
    if not isinstance(entries, list) or not entries:
        raise ValidationError("corpus must be a non-empty JSON array")
    descriptors = [_descriptor_from_obj(o, i, taxonomy) for i, o in enumerate(entries)]
    seen: set[str] = set()
    for d in descriptors:
        if d.code in seen:
            raise ValidationError(f"duplicate flaw code {d.code}")
        seen.add(d.code)
    if taxonomy is not None:
        missing = sorted(set(taxonomy) - seen)
        if missing:
            raise ValidationError(f"missing flaw codes: {', '.join(missing)}")
    return SemanticCorpus(tuple(descriptors))


def load_corpus(path, taxonomy: dict[str, FlawGroup] | None = LIQUIDITY_GROUPS) -> SemanticCorpus:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read corpus {path}: {exc}") from exc
    try:
        entries = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return corpus_from_list(entries, taxonomy)


def save_corpus(corpus: SemanticCorpus, path) -> None:
    Path(path).write_text(corpus.to_json(), encoding="utf-8")


_DEFAULT_ENTRIES = [
    {
        "code": "LIF",
        "group": "Endogenous",
        "name": "Logic Implementation Flaws",
        "description": (
            "Faults in how the code executes drive the stored state away from the intended model. The code updates balances, "
            "shares, reward indexes or accounting state in the wrong order or with wrong arithmetic "
            "(rounding, precision loss, unchecked return values, missing state updates before "
            "external calls), so the recorded contract state no longer matches the intended "
            "liquidity model."
        ),
    },
    {
        "code": "BPF",
        "group": "Endogenous",
        "name": "Business Protocol Flaws",
        "description": (
            "The economic rules leak value even though every statement is syntactically sound. Reward "
            "emission, fee, staking, vesting or redemption rules are individually valid but combine "
            "so that users can claim more than they provided, withdraw rewards repeatedly, or drain "
            "incentive pools through legitimate protocol paths."
        ),
    },
    {
        "code": "GAR",
        "group": "Endogenous",
        "name": "Governance Authority Risks",
        "description": (
            "Control over the protocol can be abused or captured, which lets funds be taken without authorization. "
            "Privileged roles such as owner, admin or operator can change critical parameters, "
            "mint, pause, upgrade or sweep pooled funds without timelock or multi-party checks, and "
            "missing or weak access control lets an attacker seize those privileges."
        ),
    },
    {
        "code": "LVD",
        "group": "Exogenous",
        "name": "Liquidity Valuation Distortion",
        "description": (
            "The value the contract assigns to assets drifts from the market because its price data is manipulated or stale. Asset "
            "prices, exchange rates or collateral values are read from spot reserves, a single "
            "oracle or stale feeds without freshness and deviation checks, so the contract values "
            "liquidity at a price that an attacker can skew."
        ),
    },
    {
        "code": "TLS",
        "group": "Exogenous",
        "name": "Transient Liquidity Shock",
        "description": (
            "Huge amounts of capital moved within one atomic transaction knock the market out of balance. Flash loans or large "
            "single-transaction deposits and withdrawals temporarily distort pool reserves, voting "
            "power or share prices inside one block, letting an attacker mint, borrow, vote or "
            "redeem against the distorted state and unwind before it recovers."
        ),
    },
]


def default_corpus() -> SemanticCorpus:
    """The built-in five-category liquidity corpus."""
    return corpus_from_list(_DEFAULT_ENTRIES)
