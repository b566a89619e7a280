import pytest
from hypothesis import given, settings, strategies as st

from helpers import FIXTURES, GOLDENS
from lqaudit.errors import NoDeclarationsFound, UnbalancedBraces, UnknownFunction
from lqaudit.slicer import (
    ContractSlice, DeclKind, denormalize, lex, normalize, normalize_text, parse_contract, read_slices,
    slice_all, slice_function, strip_noise, write_slices,
)

FIXTURE_FILES = sorted(FIXTURES.glob("*.sol"))


def _load(stem: str):
    return parse_contract(stem, (FIXTURES / f"{stem}.sol").read_text(encoding="utf-8"))


def _idents(text: str) -> list[str]:
    return [t.text for t in lex(text) if t.kind == "ident"]


# strip_noise


def test_strip_line_comment_and_blank_line():
    assert strip_noise("a; // c\n\nb;") == "a;\nb;"


def test_strip_block_comment_keeps_leading_space():
    assert strip_noise("/* x */ a;") == " a;"


def test_comment_markers_inside_strings_survive():
    src = 'emit Log("// not a comment");'
    assert strip_noise(src) == src
    src2 = "string s = '/* still text */';"
    assert strip_noise(src2) == src2


def test_multiline_block_comment_removed():
    assert strip_noise("a;\n/* one\ntwo */\nb;\n") == "a;\nb;\n"


# parse_contract


def test_ten_line_contract_spans():
    src = """contract C {
    uint256 total;
    modifier gate() {
        require(total > 0);
        _;
    }
    function add(uint256 x) public { total += x; }
    function read() public view returns (uint256) {
        return total;
    }
}"""
    c = parse_contract("C", src)
    kinds = [(s.kind, s.name) for s in c.spans()]
    assert kinds == [
        (DeclKind.GLOBAL, "total"), (DeclKind.MODIFIER, "gate"),
        (DeclKind.FUNCTION, "add"), (DeclKind.FUNCTION, "read"),
    ]
    spans = sorted(c.spans(), key=lambda s: s.start)
    for a, b in zip(spans, spans[1:]):
        assert a.start < a.end <= b.start
    for s in c.functions + c.modifiers:
        assert s.tokens


def test_empty_source_has_no_declarations():
    with pytest.raises(NoDeclarationsFound):
        parse_contract("E", "")


def test_unclosed_brace():
    with pytest.raises(UnbalancedBraces):
        parse_contract("U", "contract U { function f() public { ")


def test_unknown_function():
    with pytest.raises(UnknownFunction):
        slice_function(_load("01_vault"), "nope")


# slice_function: hand-annotated dependencies

EXPECTED = {
    ("01_vault", "withdraw"): (("onlyOwner",), ("owner", "balances")),
    ("01_vault", "deposit"): ((), ("balances", "totalDeposits")),
    ("02_pool_modifiers", "swap"): (("nonReentrant",), ("reserve0", "reserve1", "locked", "FEE_BPS")),
    ("02_pool_modifiers", "skim"): (("nonReentrant", "onlyGuardian"), ("reserve0", "locked", "guardian")),
    ("03_comments_strings", "braces"): ((), ()),
    ("03_comments_strings", "setGreeting"): ((), ("greeting", "counter")),
    ("04_multi_contract", "mint"): ((), ("MAX_SUPPLY", "balanceOf", "totalSupply")),
    ("04_multi_contract", "borrow"): ((), ("oracle", "debt", "totalSupply")),
    ("06_library", "add"): ((), ()),
    ("08_modifier_globals", "relay"): (("whenNotPaused", "afterCooldown"),
                                       ("paused", "processed", "cooldown", "lastRelease")),
    ("08_modifier_globals", "pause"): ((), ("paused", "epoch")),
    ("11_gauge", "claim"): ((), ("positions", "accRewardPerShare", "mode")),
    ("12_compact_style", "f"): (("m",), ("a", "b")),
}


@pytest.mark.parametrize("stem,fn", sorted(EXPECTED))
def test_dependencies_match_hand_annotation(stem, fn):
    s = slice_function(_load(stem), fn)
    assert (s.dep_modifiers, s.dep_globals) == EXPECTED[(stem, fn)]
    for name in s.dep_modifiers + s.dep_globals:
        assert name in _idents(s.raw_slice)


def test_withdraw_slice_layout():
    s = slice_function(_load("01_vault"), "withdraw")
    assert s.raw_slice.index("address public owner") < s.raw_slice.index("modifier onlyOwner")
    assert s.raw_slice.index("modifier onlyOwner") < s.raw_slice.index("[Target_Function]")
    assert s.raw_slice.split("[Target_Function]\n", 1)[1].startswith("function withdraw")
    assert "totalDeposits" not in s.raw_slice


def test_globals_of_other_contract_are_out_of_scope():
    s = slice_function(_load("04_multi_contract"), "borrow")
    assert "balanceOf" not in s.dep_globals
    assert "uint256 totalSupply;" in s.raw_slice
    assert s.raw_slice.count("totalSupply;") == 1


def test_commented_code_is_not_a_dependency():
    c = _load("03_comments_strings")
    assert "hidden" not in [f.name for f in c.functions]
    s = slice_function(c, "braces")
    assert s.dep_globals == ()


def test_overloads_get_distinct_ordinals():
    slices = slice_all(_load("05_overloads"))
    assert [s.slice_id for s in slices] == ["05_overloads#stake0", "05_overloads#stake1", "05_overloads#reward0"]
    assert "beneficiary" in slices[1].raw_slice and "beneficiary" not in slices[0].raw_slice


def test_unrelated_global_does_not_change_slice():
    src = (FIXTURES / "01_vault.sol").read_text(encoding="utf-8")
    extra = src.replace("uint256 public totalDeposits;", "uint256 public totalDeposits;\n    uint256 public unrelated = 7;")
    a = slice_function(parse_contract("v", src), "withdraw")
    b = slice_function(parse_contract("v", extra), "withdraw")
    assert a.raw_slice == b.raw_slice and a.normalized_slice == b.normalized_slice


# normalize


def test_normalize_examples():
    text, m = normalize_text("uint256 balance;")
    assert text == "uint256 VAR1;" and m == {"balance": "VAR1"}
    text, _ = normalize_text("require(x > 0)")
    assert text == "require(VAR1 > 0)"
    text, _ = normalize_text("[Target_Function]\nfunction f() public {}")
    assert text == "[Target_Function]\nfunction FUN1() public {}"


def test_builtin_members_and_literals_preserved():
    text, _ = normalize_text('require(msg.sender == owner, "owner only"); x = block.timestamp + 1 hours;')
    assert text == 'require(msg.sender == VAR1, "owner only"); VAR2 = block.timestamp + 1 hours;'


def test_modifier_placeholders():
    s = normalize(slice_function(_load("01_vault"), "withdraw"))
    assert s.id_map["onlyOwner"] == "MOD1"
    assert s.id_map["withdraw"] == "FUN1"
    assert s.normalized_slice.count("[Target_Function]") == 1


@pytest.mark.parametrize("path", FIXTURE_FILES, ids=lambda p: p.stem)
def test_round_trip_restores_identifiers(path):
    for s in slice_all(parse_contract(path.stem, path.read_text(encoding="utf-8"))):
        assert denormalize(s.normalized_slice, s.id_map) == s.raw_slice
        assert len(set(s.id_map.values())) == len(s.id_map)


@pytest.mark.parametrize("path", FIXTURE_FILES, ids=lambda p: p.stem)
def test_normalize_idempotent(path):
    for s in slice_all(parse_contract(path.stem, path.read_text(encoding="utf-8"))):
        again = normalize(s)
        assert again == s


# goldens and determinism


def test_at_least_ten_fixtures():
    assert len(FIXTURE_FILES) >= 10


@pytest.mark.parametrize("path", FIXTURE_FILES, ids=lambda p: p.stem)
def test_slices_match_goldens(path, tmp_path):
    out = tmp_path / "s.jsonl"
    write_slices(slice_all(parse_contract(path.stem, path.read_text(encoding="utf-8"))), out)
    assert out.read_bytes() == (GOLDENS / f"{path.stem}.jsonl").read_bytes()


def test_jsonl_round_trip(tmp_path):
    slices = slice_all(_load("02_pool_modifiers"))
    p = tmp_path / "x.jsonl"
    write_slices(slices, p)
    assert read_slices(p) == slices
    first = p.read_text(encoding="utf-8").splitlines()[0]
    assert first.startswith('{"contract_id": ')
    keys = list(ContractSlice.from_dict(__import__("json").loads(first)).to_dict())
    assert keys == ["contract_id", "slice_id", "target_function", "dep_modifiers", "dep_globals",
                    "raw_slice", "normalized_slice", "id_map"]


def test_diagnostics_collect_partial_results(monkeypatch):
    import lqaudit.slicer as sl

    real = sl.slice_function

    def flaky(contract, f, ordinal=0):
        if f == "deposit":
            raise ValueError("boom")
        return real(contract, f, ordinal)

    monkeypatch.setattr(sl, "slice_function", flaky)
    diags: list[str] = []
    out = sl.slice_all(_load("01_vault"), diags)
    assert [s.target_function for s in out] == ["constructor", "withdraw"]
    assert len(diags) == 1 and "deposit" in diags[0]


_ident = st.sampled_from(["alpha", "beta", "gamma", "delta", "amount", "owner", "total"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(_ident, _ident, st.integers(0, 999)), min_size=1, max_size=6))
def test_round_trip_property(stmts):
    body = "\n".join(f"        {a} = {b} + {n};" for a, b, n in stmts)
    src = f"contract P {{\n    uint256 alpha;\n    uint256 beta;\n    function run() public {{\n{body}\n    }}\n}}\n"
    for s in slice_all(parse_contract("P", src)):
        assert denormalize(s.normalized_slice, s.id_map) == s.raw_slice
        assert normalize(s) == s
        assert set(s.dep_globals) == {g for g in ("alpha", "beta") if g in _idents(body)}
