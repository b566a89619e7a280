"""Lexical Solidity slicing and identifier normalization.

Parsing is brace-depth structural over a comment/string-aware lexer.  For
every function ``f`` the slice keeps

* the modifiers whose name occurs among ``f``'s identifier tokens, and
* the state variables whose name occurs among the tokens of ``f`` or of
  those modifiers,

emitted in that order (globals, modifiers, then the tagged target
function).  Members are resolved within their own ``contract`` /
``library`` / ``interface`` block plus file-level declarations; inherited
members are not followed.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable

from .errors import NoDeclarationsFound, UnbalancedBraces, UnknownFunction

TARGET_TAG = "[Target_Function]"
PROTECTED_TAGS = frozenset({TARGET_TAG})

_TOKEN_RE = re.compile(
    r"""
    (?P<lcomment>//[^\n]*)
  | (?P<bcomment>/\*[\s\S]*?(?:\*/|\Z))
  | (?P<string>"(?:\\.|[^"\\\n])*"?|'(?:\\.|[^'\\\n])*'?)
  | (?P<tag>\[Target_Function\])
  | (?P<ident>[A-Za-z_$][A-Za-z0-9_$]*)
  | (?P<number>0[xX][0-9a-fA-F_]+|\d[\d_]*(?:\.\d+)?(?:[eE][+-]?\d+)?)
  | (?P<newline>\n)
  | (?P<ws>[ \t\r\f\v]+)
  | (?P<punct>.)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    start: int
    end: int


def lex(text: str) -> list[Token]:
    return [Token(m.lastgroup, m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)]


def strip_noise(source: str) -> str:
    """Drop ``//`` and ``/* */`` comments, trailing blanks and empty lines.

    String literals are left untouched.  Newlines inside block comments
    are kept so the surviving code keeps its line layout.
    """
    out = []
    for tok in lex(source):
        if tok.kind == "lcomment":
            continue
        if tok.kind == "bcomment":
            out.append("\n" * tok.text.count("\n"))
            continue
        out.append(tok.text)
    lines = [line.rstrip() for line in "".join(out).split("\n")]
    kept = [line for line in lines if line.strip()]
    result = "\n".join(kept)
    if kept and source.endswith("\n"):
        result += "\n"
    return result


# --------------------------------------------------------------------------
# vocabulary preserved by normalization

SOLIDITY_KEYWORDS = frozenset("""
abstract anonymous as assembly break calldata catch constant constructor continue contract
delete do else emit enum error event external fallback false for function global hex if
immutable import indexed interface internal is library mapping memory modifier new override
payable pragma private public pure receive return returns revert storage struct super this
throw true try type unchecked unicode using view virtual while let leave switch case default
wei gwei ether seconds minutes hours days weeks years solidity
address bool string bytes byte var
""".split())

SOLIDITY_BUILTINS = frozenset("""
msg block tx abi require assert keccak256 sha256 sha3 ripemd160 ecrecover addmod mulmod
selfdestruct suicide gasleft blockhash blobhash now _
""".split())

# Members of built-in objects, preserved only immediately after a dot.
BUILTIN_MEMBERS = frozenset("""
sender value data sig gas timestamp number coinbase difficulty gaslimit origin gasprice chainid
basefee prevrandao blobbasefee encode encodePacked encodeWithSelector encodeWithSignature encodeCall
decode balance transfer send call delegatecall staticcall length push pop selector code codehash
min max interfaceId creationCode runtimeCode name wrap unwrap concat
""".split())

_TYPE_RE = re.compile(r"^(?:u?int(?:\d{1,3})?|bytes(?:\d{1,2})?|u?fixed(?:\d+x\d+)?)$")


def is_reserved(word: str) -> bool:
    return word in SOLIDITY_KEYWORDS or word in SOLIDITY_BUILTINS or bool(_TYPE_RE.match(word))


# --------------------------------------------------------------------------
# parsing


class DeclKind(str, Enum):
    FUNCTION = "Function"
    MODIFIER = "Modifier"
    GLOBAL = "Global"


@dataclass(frozen=True)
class DeclSpan:
    kind: DeclKind
    name: str
    byte_range: tuple[int, int]
    tokens: frozenset[str]
    owner: str = ""

    @property
    def start(self) -> int:
        return self.byte_range[0]

    @property
    def end(self) -> int:
        return self.byte_range[1]


@dataclass(frozen=True)
class ContractSource:
    contract_id: str
    raw_text: str
    functions: tuple[DeclSpan, ...]
    modifiers: tuple[DeclSpan, ...]
    globals: tuple[DeclSpan, ...]

    def text_of(self, span: DeclSpan) -> str:
        return self.raw_text[span.start:span.end]

    def spans(self) -> list[DeclSpan]:
        return sorted(self.functions + self.modifiers + self.globals, key=lambda s: s.start)


_CONTAINER_KW = {"contract", "library", "interface"}
_FUNCTION_KW = {"function", "constructor", "fallback", "receive"}
_SKIP_KW = {"struct", "enum", "event", "error", "using", "pragma", "import", "type"}
_OPEN = {"(": ")", "[": "]", "{": "}"}


def _check_braces(toks: list[Token]) -> None:
    depth = 0
    for t in toks:
        if t.kind != "punct":
            continue
        if t.text == "{":
            depth += 1
        elif t.text == "}":
            depth -= 1
            if depth < 0:
                raise UnbalancedBraces(f"unmatched '}}' at offset {t.start}")
    if depth != 0:
        raise UnbalancedBraces(f"{depth} unclosed '{{'")


def _match(toks: list[Token], i: int) -> int:
    """Index of the bracket closing the one at ``toks[i]``."""
    opener = toks[i].text
    closer = _OPEN[opener]
    depth = 0
    for j in range(i, len(toks)):
        t = toks[j]
        if t.kind != "punct":
            continue
        if t.text == opener:
            depth += 1
        elif t.text == closer:
            depth -= 1
            if depth == 0:
                return j
    raise UnbalancedBraces(f"unclosed {opener!r} at offset {toks[i].start}")


def _statement_end(toks: list[Token], i: int) -> int:
    """Index of the ``;`` ending the statement at ``i`` (nesting-aware)."""
    j = i
    while j < len(toks):
        t = toks[j]
        if t.kind == "punct":
            if t.text in _OPEN:
                j = _match(toks, j) + 1
                continue
            if t.text == ";" or t.text == "}":
                return j
        j += 1
    return len(toks) - 1


def _decl_end(toks: list[Token], i: int) -> int:
    """End index of a function/modifier: its closing brace or terminating ``;``."""
    j = i
    while j < len(toks):
        t = toks[j]
        if t.kind == "punct":
            if t.text in ("(", "["):
                j = _match(toks, j) + 1
                continue
            if t.text == "{":
                return _match(toks, j)
            if t.text == ";":
                return j
        j += 1
    return len(toks) - 1


def _idents(toks: Iterable[Token]) -> frozenset[str]:
    return frozenset(t.text for t in toks if t.kind == "ident")


def _global_name(stmt: list[Token]) -> str | None:
    last = None
    depth = 0
    for t in stmt:
        if t.kind == "punct":
            if t.text in _OPEN:
                depth += 1
            elif t.text in _OPEN.values():
                depth -= 1
            elif depth == 0 and t.text in ("=", ";"):
                break
        elif t.kind == "ident" and depth == 0:
            last = t.text
    if last is None or is_reserved(last):
        return None
    return last


class _SpanCollector:
    def __init__(self):
        self.functions: list[DeclSpan] = []
        self.modifiers: list[DeclSpan] = []
        self.globals: list[DeclSpan] = []

    def member(self, toks: list[Token], i: int, owner: str) -> int:
        """Record the member starting at ``toks[i]``; return the next index."""
        t = toks[i]
        word = t.text if t.kind == "ident" else None
        if word in _FUNCTION_KW or word == "modifier":
            end = _decl_end(toks, i)
            if word in ("function", "modifier"):
                nxt = toks[i + 1] if i + 1 < len(toks) else None
                name = nxt.text if nxt is not None and nxt.kind == "ident" else "fallback"
            else:
                name = word
            span = DeclSpan(
                kind=DeclKind.MODIFIER if word == "modifier" else DeclKind.FUNCTION,
                name=name,
                byte_range=(t.start, toks[end].end),
                tokens=_idents(toks[i:end + 1]),
                owner=owner,
            )
            (self.modifiers if word == "modifier" else self.functions).append(span)
            return end + 1
        if word in _SKIP_KW:
            j = i + 1
            while j < len(toks):
                tj = toks[j]
                if tj.kind == "punct" and tj.text == "{":
                    return _match(toks, j) + 1
                if tj.kind == "punct" and tj.text == ";":
                    return j + 1
                j += 1
            return j
        if t.kind == "punct" and t.text in ("}", ";"):
            return i + 1
        end = _statement_end(toks, i)
        stmt = toks[i:end + 1]
        name = _global_name(stmt)
        if name is not None:
            self.globals.append(
                DeclSpan(DeclKind.GLOBAL, name, (t.start, toks[end].end), _idents(stmt), owner)
            )
        return end + 1


def parse_contract(contract_id: str, source: str) -> ContractSource:
    """Locate every function, modifier and state-variable declaration.

    Comments and blank lines are stripped first; ``raw_text`` holds the
    stripped text and all spans index into it.
    """
    text = strip_noise(source)
    toks = [t for t in lex(text) if t.kind in ("ident", "number", "string", "punct", "tag")]
    _check_braces(toks)
    spans = _SpanCollector()
    i = 0
    while i < len(toks):
        t = toks[i]
        word = t.text if t.kind == "ident" else None
        if word in _CONTAINER_KW or (word == "abstract" and i + 1 < len(toks) and toks[i + 1].text == "contract"):
            if word == "abstract":
                i += 1
            name = toks[i + 1].text if i + 1 < len(toks) and toks[i + 1].kind == "ident" else ""
            j = i + 1
            while j < len(toks) and not (toks[j].kind == "punct" and toks[j].text in ("{", ";")):
                j += 1
            if j >= len(toks) or toks[j].text == ";":
                i = j + 1
                continue
            close = _match(toks, j)
            k = j + 1
            while k < close:
                k = spans.member(toks, k, name)
            i = close + 1
            continue
        if word in ("pragma", "import"):
            i = _statement_end(toks, i) + 1
            continue
        i = spans.member(toks, i, "")
    if not (spans.functions or spans.modifiers or spans.globals):
        raise NoDeclarationsFound(f"{contract_id}: no declarations found")
    return ContractSource(
        contract_id=contract_id,
        raw_text=text,
        functions=tuple(spans.functions),
        modifiers=tuple(spans.modifiers),
        globals=tuple(spans.globals),
    )


# --------------------------------------------------------------------------
# slicing


@dataclass(frozen=True)
class ContractSlice:
    contract_id: str
    slice_id: str
    target_function: str
    dep_modifiers: tuple[str, ...]
    dep_globals: tuple[str, ...]
    raw_slice: str
    normalized_slice: str = ""
    id_map: dict[str, str] = field(default_factory=dict, compare=True, hash=False)

    def to_dict(self) -> dict:
        return {
            "contract_id": self.contract_id,
            "slice_id": self.slice_id,
            "target_function": self.target_function,
            "dep_modifiers": list(self.dep_modifiers),
            "dep_globals": list(self.dep_globals),
            "raw_slice": self.raw_slice,
            "normalized_slice": self.normalized_slice,
            "id_map": dict(self.id_map),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ContractSlice":
        return cls(
            contract_id=obj["contract_id"],
            slice_id=obj["slice_id"],
            target_function=obj["target_function"],
            dep_modifiers=tuple(obj["dep_modifiers"]),
            dep_globals=tuple(obj["dep_globals"]),
            raw_slice=obj["raw_slice"],
            normalized_slice=obj["normalized_slice"],
            id_map=dict(obj["id_map"]),
        )


def _select_function(contract: ContractSource, f: str | DeclSpan, ordinal: int) -> DeclSpan:
    if isinstance(f, DeclSpan):
        if f not in contract.functions:
            raise UnknownFunction(f"{f.name} is not a function of {contract.contract_id}")
        return f
    matches = [s for s in contract.functions if s.name == f]
    if ordinal >= len(matches):
        raise UnknownFunction(f"{contract.contract_id} has no function {f!r} (ordinal {ordinal})")
    return matches[ordinal]


def slice_function(contract: ContractSource, f: str | DeclSpan, ordinal: int = 0) -> ContractSlice:
    """Build the dependency slice of function ``f`` (not yet normalized).

    ``ordinal`` picks among same-named functions (overloads, or the same
    name in several blocks of one file).
    """
    target = _select_function(contract, f, ordinal)
    scope = {target.owner, ""}
    mods = [m for m in contract.modifiers if m.owner in scope and m.name in target.tokens]
    used = set(target.tokens)
    for m in mods:
        used |= m.tokens
    globs = [g for g in contract.globals if g.owner in scope and g.name in used]
    parts = [contract.text_of(g) for g in globs]
    parts += [contract.text_of(m) for m in mods]
    parts.append(TARGET_TAG + "\n" + contract.text_of(target))
    ordinal = [s for s in contract.functions if s.name == target.name].index(target)
    return ContractSlice(
        contract_id=contract.contract_id,
        slice_id=f"{contract.contract_id}#{target.name}{ordinal}",
        target_function=target.name,
        dep_modifiers=tuple(m.name for m in mods),
        dep_globals=tuple(g.name for g in globs),
        raw_slice="\n".join(parts),
    )


# --------------------------------------------------------------------------
# normalization


def _next_significant(toks: list[Token], i: int) -> Token | None:
    for j in range(i + 1, len(toks)):
        if toks[j].kind not in ("ws", "newline"):
            return toks[j]
    return None


def _prev_significant(toks: list[Token], i: int) -> Token | None:
    for j in range(i - 1, -1, -1):
        if toks[j].kind not in ("ws", "newline"):
            return toks[j]
    return None


def _preserved(toks: list[Token], i: int) -> bool:
    word = toks[i].text
    if is_reserved(word):
        return True
    prev = _prev_significant(toks, i)
    return prev is not None and prev.text == "." and word in BUILTIN_MEMBERS


def normalize_text(text: str, modifier_names: Iterable[str] = ()) -> tuple[str, dict[str, str]]:
    """Replace user identifiers by ``VARn`` / ``FUNn`` / ``MODn`` placeholders.

    Numbering is per role, in first-occurrence order.  Returns the
    normalized text and the ``{original: placeholder}`` map.
    """
    toks = lex(text)
    mods = set(modifier_names)
    funs: set[str] = set()
    for i, t in enumerate(toks):
        if t.kind != "ident":
            continue
        prev = _prev_significant(toks, i)
        if prev is not None and prev.kind == "ident" and prev.text == "modifier":
            mods.add(t.text)
        elif prev is not None and prev.kind == "ident" and prev.text == "function":
            funs.add(t.text)
        else:
            nxt = _next_significant(toks, i)
            if nxt is not None and nxt.text == "(" and not _preserved(toks, i):
                funs.add(t.text)

    id_map: dict[str, str] = {}
    counters = {"VAR": 0, "FUN": 0, "MOD": 0}
    out = []
    for i, t in enumerate(toks):
        if t.kind != "ident" or _preserved(toks, i):
            out.append(t.text)
            continue
        placeholder = id_map.get(t.text)
        if placeholder is None:
            role = "MOD" if t.text in mods else "FUN" if t.text in funs else "VAR"
            counters[role] += 1
            placeholder = f"{role}{counters[role]}"
            id_map[t.text] = placeholder
        out.append(placeholder)
    return "".join(out), id_map


def denormalize(normalized: str, id_map: dict[str, str]) -> str:
    inverse = {v: k for k, v in id_map.items()}
    return "".join(
        inverse.get(t.text, t.text) if t.kind == "ident" else t.text for t in lex(normalized)
    )


def normalize(s: ContractSlice) -> ContractSlice:
    text, id_map = normalize_text(s.raw_slice, s.dep_modifiers)
    return replace(s, normalized_slice=text, id_map=id_map)


def slice_all(contract: ContractSource, diagnostics: list[str] | None = None) -> list[ContractSlice]:
    """One normalized slice per function, in source order.

    Per-function failures are appended to ``diagnostics`` (when given) and
    the remaining functions are still sliced.
    """
    out = []
    seen: dict[str, int] = {}
    for span in contract.functions:
        ordinal = seen.get(span.name, 0)
        seen[span.name] = ordinal + 1
        try:
            out.append(normalize(slice_function(contract, span.name, ordinal)))
        except Exception as exc:  # noqa: BLE001 - collected, not swallowed
            if diagnostics is None:
                raise
            diagnostics.append(f"{contract.contract_id}:{span.name}: {exc}")
    return out


def write_slices(slices: Iterable[ContractSlice], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in slices:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")


def read_slices(path) -> list[ContractSlice]:
    with open(path, encoding="utf-8") as fh:
        return [ContractSlice.from_dict(json.loads(line)) for line in fh if line.strip()]
