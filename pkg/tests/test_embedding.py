import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lqaudit.embedding import (
    EmbeddedSequence, EmbeddingProviderSpec, FileBackedProvider, HashingProvider, embed, embed_corpus,
    fnv1a64, hashing_embed_token, read_embeddings, tokenize, write_embeddings,
)
from lqaudit.errors import EmptyInput, FormatError, MissingEmbedding
from lqaudit.taxonomy import FlawDescriptor, FlawGroup, SemanticCorpus, default_corpus

M64 = (1 << 64) - 1


def ref_fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & M64
    return h


def ref_splitmix64(state: int, n: int) -> list[int]:
    out = []
    for i in range(1, n + 1):
        z = (state + 0x9E3779B97F4A7C15 * i) & M64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
        out.append(z ^ (z >> 31))
    return out


def ref_token_vector(token: str, D: int, seed: int) -> list[float]:
    raw = ref_splitmix64(ref_fnv1a64(struct.pack("<q", seed) + token.encode("utf-8")), D)
    v = [2.0 * ((x >> 11) / float(1 << 53)) - 1.0 for x in raw]
    n = math.sqrt(math.fsum(a * a for a in v))
    return [a / n for a in v]


def small(dim=16, max_len=8, seed=0):
    return HashingProvider(EmbeddingProviderSpec(dim=dim, max_len=max_len, seed=seed))


def test_fnv_reference_vectors():
    # published FNV-1a 64 test vectors
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_frozen_token_vector():
    v = hashing_embed_token("require", 16, 0)
    assert v[:4].tolist() == [0.00633949545336741, -0.3854997577549216, -0.2900739727434841,
                              -0.04841127394724608]


@settings(max_examples=50, deadline=None)
@given(st.text(min_size=1, max_size=12), st.integers(8, 64), st.integers(-2**31, 2**31))
def test_token_vector_matches_independent_oracle(token, D, seed):
    assert hashing_embed_token(token, D, seed).tolist() == ref_token_vector(token, D, seed)


def test_token_vector_unit_norm_and_deterministic():
    for tok in ["require", "x", "VAR1", "[Target_Function]", "é"]:
        v = hashing_embed_token(tok, 1024, 3)
        assert abs(np.linalg.norm(v) - 1.0) < 1e-6
        assert np.array_equal(v, hashing_embed_token(tok, 1024, 3))
    with pytest.raises(ValueError):
        hashing_embed_token("x", 4, 0)


def test_random_tokens_are_nearly_orthogonal():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        a, b = rng.integers(0, 10**9, size=2)
        if a == b:
            continue
        c = float(hashing_embed_token(f"t{a}", 16, 0) @ hashing_embed_token(f"t{b}", 16, 0))
        worst = max(worst, abs(c))
    assert worst < 0.9
    assert abs(hashing_embed_token("x", 16, 0) @ hashing_embed_token("y", 16, 0)) < 0.9


def test_default_shape():
    e = embed(EmbeddingProviderSpec(), "function f ( ) { }")
    assert e.values.shape == (512, 1024) and e.values.dtype == np.float32
    assert e.token_count == 6 and int(e.mask.sum()) == 6


def test_truncation_at_512():
    text = " ".join(f"tok{i}" for i in range(600))
    p = HashingProvider(EmbeddingProviderSpec(dim=16))
    e = p.embed(text)
    assert e.token_count == 512 and e.mask.all()
    longer = p.embed(text + " extra more tokens")
    assert np.array_equal(e.values, longer.values)


def test_padding_rows_zero():
    e = small().embed("a b c")
    assert e.token_count == 3
    assert not e.values[3:].any() and not e.mask[3:].any()


def test_same_token_same_row_before_positions():
    p = HashingProvider(EmbeddingProviderSpec(dim=16, max_len=8, positional_scale=0.0))
    e = p.embed("x y x")
    assert np.array_equal(e.values[0], e.values[2])
    with_pos = small().embed("x y x")
    assert not np.array_equal(with_pos.values[0], with_pos.values[2])


def test_empty_input():
    with pytest.raises(EmptyInput):
        small().embed("   \n  ")


def test_tokenizer_keeps_identifiers_and_tag_whole():
    assert tokenize("[Target_Function]\nfunction FUN1(uint256 VAR1) {x+=1.5;}") == [
        "[Target_Function]", "function", "FUN1", "(", "uint256", "VAR1", ")", "{", "x", "+", "=", "1.5", ";", "}",
    ]


def test_embed_corpus_alignment_and_determinism():
    p = small()
    c1 = embed_corpus(p, default_corpus())
    c2 = embed_corpus(small(), default_corpus())
    assert len(c1.embeddings) == 5
    assert all(a == b for a, b in zip(c1.embeddings, c2.embeddings))


def test_embed_corpus_empty_description_tagged():
    bad = SemanticCorpus((FlawDescriptor("LIF", FlawGroup.ENDOGENOUS, "x", "   "),))
    with pytest.raises(EmptyInput) as info:
        embed_corpus(small(), bad)
    assert info.value.code == "LIF"


def test_file_round_trip(tmp_path):
    p = small()
    seqs = {"a#f0": p.embed("alpha beta"), "b#g0": p.embed("gamma delta epsilon é"), "LIF": p.embed("one")}
    path = tmp_path / "e.lqlm"
    write_embeddings(path, seqs)
    back = read_embeddings(path)
    assert list(back) == list(seqs)
    for k in seqs:
        assert back[k] == seqs[k]
    raw = path.read_bytes()
    assert raw[:4] == b"LQLM" and struct.unpack("<II", raw[4:12]) == (1, 3)


def test_file_errors(tmp_path):
    path = tmp_path / "e.lqlm"
    write_embeddings(path, {"k": small().embed("x y")})
    raw = path.read_bytes()
    for blob in (raw[:-3], b"XXXX" + raw[4:], raw[:4] + struct.pack("<I", 2) + raw[8:], raw + b"\0"):
        bad = tmp_path / "bad.lqlm"
        bad.write_bytes(blob)
        with pytest.raises(FormatError):
            read_embeddings(bad)


def test_file_backed_provider(tmp_path):
    seq = small().embed("x y")
    path = tmp_path / "e.lqlm"
    write_embeddings(path, {"C#f0": seq})
    fp = FileBackedProvider.from_file(path)
    assert fp.embed("whatever text", key="C#f0") == seq
    with pytest.raises(MissingEmbedding):
        fp.embed("whatever text", key="C#g0")
    with pytest.raises(MissingEmbedding):
        fp.embed("unkeyed text")


def test_sequence_equality_is_dtype_sensitive():
    v = np.zeros((2, 4), np.float32)
    m = np.array([True, False])
    assert EmbeddedSequence(v, m, 1) == EmbeddedSequence(v.copy(), m.copy(), 1)
    assert EmbeddedSequence(v, m, 1) != EmbeddedSequence(v.astype(np.float64), m, 1)
