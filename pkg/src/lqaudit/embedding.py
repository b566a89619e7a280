"""Token-level ``L x D`` embeddings behind a small provider abstraction.

Two providers exist:

``HashingProvider``
    deterministic desk-scale stand-in.  Each token gets a unit vector drawn
    from a SplitMix64 stream seeded with the FNV-1a 64 hash of
    ``(seed, token)``; a scaled sinusoidal position vector is added on top.
``FileBackedProvider``
    looks up precomputed encoder outputs stored in an ``LQLM`` file, keyed
    by slice id (or descriptor code).
"""

from __future__ import annotations

import hashlib
import math
import re
import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import EmptyInput, FormatError, MissingEmbedding

DEFAULT_L = 512
DEFAULT_D = 1024

MAGIC = b"LQLM"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1
_GAMMA = np.uint64(0x9E3779B97F4A7C15)

_WORD_RE = re.compile(r"\[Target_Function\]|[A-Za-z_$][A-Za-z0-9_$]*|\d+(?:\.\d+)?|[^\sA-Za-z0-9_$]")


@dataclass(frozen=True, eq=False)
class EmbeddedSequence:
    values: np.ndarray  # (L, D) float32
    mask: np.ndarray  # (L,) bool
    token_count: int

    def __post_init__(self):
        if self.values.ndim != 2 or self.mask.shape != (self.values.shape[0],):
            raise FormatError(f"inconsistent shapes {self.values.shape} / {self.mask.shape}")

    @property
    def L(self) -> int:
        return self.values.shape[0]

    @property
    def D(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, EmbeddedSequence):
            return NotImplemented
        return (
            self.token_count == other.token_count
            and self.values.dtype == other.values.dtype
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.mask, other.mask)
        )

    def valid(self) -> np.ndarray:
        return self.values[self.mask]


def tokenize(text: str) -> list[str]:
    """Whitespace/punctuation split keeping identifiers, numbers and tags whole."""
    return _WORD_RE.findall(text)


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def _splitmix64(state: int, n: int) -> np.ndarray:
    """First ``n`` outputs of SplitMix64 started at ``state``."""
    with np.errstate(over="ignore"):
        z = np.uint64(state) + _GAMMA * np.arange(1, n + 1, dtype=np.uint64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


@lru_cache(maxsize=65536)
def _token_vector(token: str, D: int, seed: int) -> np.ndarray:
    key = struct.pack("<q", seed) + token.encode("utf-8")
    raw = _splitmix64(fnv1a64(key), D)
    # top 53 bits -> [0, 1) -> [-1, 1)
    u = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
    v = 2.0 * u - 1.0
    v /= math.sqrt(math.fsum(v * v))  # order-independent sum keeps the result bit-exact
    v.setflags(write=False)
    return v


def hashing_embed_token(token: str, D: int, seed: int = 0) -> np.ndarray:
    """Unit-norm pseudo-random vector for ``token`` (float64, length ``D``)."""
    if D < 8:
        raise ValueError("D must be >= 8")
    return _token_vector(token, D, seed).copy()


@lru_cache(maxsize=8)
def _positions(L: int, D: int) -> np.ndarray:
    # scalar libm calls: numpy's vectorized sin/cos may differ in the last ulp across CPUs
    rates = [10000.0 ** (2.0 * i / D) for i in range(D // 2)]
    pe = np.zeros((L, D))
    for t in range(L):
        angles = [t / r for r in rates]
        pe[t, 0:2 * (D // 2):2] = [math.sin(a) for a in angles]
        pe[t, 1:2 * (D // 2):2] = [math.cos(a) for a in angles]
    pe.setflags(write=False)
    return pe


def sinusoidal_positions(L: int, D: int) -> np.ndarray:
    return _positions(L, D).copy()


@dataclass(frozen=True)
class EmbeddingProviderSpec:
    kind: str = "hashing"  # "hashing" | "file"
    seed: int = 0
    dim: int = DEFAULT_D
    max_len: int = DEFAULT_L
    positional_scale: float = 0.1
    path: str | None = None

    @classmethod
    def from_dict(cls, obj: Mapping) -> "EmbeddingProviderSpec":
        known = {k: obj[k] for k in ("kind", "seed", "dim", "max_len", "positional_scale", "path") if k in obj}
        return cls(**known)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "seed": self.seed, "dim": self.dim, "max_len": self.max_len,
            "positional_scale": self.positional_scale, "path": self.path,
        }


class HashingProvider:
    def __init__(self, spec: EmbeddingProviderSpec):
        if spec.dim < 8:
            raise ValueError("hashing provider needs dim >= 8")
        self.spec = spec
        self._positions = sinusoidal_positions(spec.max_len, spec.dim) * spec.positional_scale

    @property
    def L(self) -> int:
        return self.spec.max_len

    @property
    def D(self) -> int:
        return self.spec.dim

    def embed(self, text: str, key: str | None = None) -> EmbeddedSequence:
        tokens = tokenize(text)
        if not tokens:
            raise EmptyInput("text has no tokens")
        n = min(len(tokens), self.L)
        values = np.zeros((self.L, self.D), dtype=np.float64)
        for t, tok in enumerate(tokens[:n]):
            values[t] = _token_vector(tok, self.D, self.spec.seed)
        values[:n] += self._positions[:n]
        mask = np.zeros(self.L, dtype=bool)
        mask[:n] = True
        return EmbeddedSequence(values.astype(np.float32), mask, n)


class FileBackedProvider:
    """Serves precomputed sequences; the lookup key defaults to sha256(text)."""

    def __init__(self, store: Mapping[str, EmbeddedSequence], spec: EmbeddingProviderSpec | None = None):
        self.store = dict(store)
        self.spec = spec or EmbeddingProviderSpec(kind="file")

    @classmethod
    def from_file(cls, path, spec: EmbeddingProviderSpec | None = None) -> "FileBackedProvider":
        return cls(read_embeddings(path), spec)

    def embed(self, text: str, key: str | None = None) -> EmbeddedSequence:
        if not text.split():
            raise EmptyInput("text has no tokens")
        lookup = key if key is not None else hashlib.sha256(text.encode("utf-8")).hexdigest()
        try:
            return self.store[lookup]
        except KeyError:
            raise MissingEmbedding(f"no stored embedding for key {lookup!r}") from None


def make_provider(spec: EmbeddingProviderSpec):
    if spec.kind == "hashing":
        return HashingProvider(spec)
    if spec.kind == "file":
        if not spec.path:
            raise ValueError("file-backed provider needs a path")
        return FileBackedProvider.from_file(spec.path, spec)
    raise ValueError(f"unknown provider kind {spec.kind!r}")


def embed(provider, text: str, key: str | None = None) -> EmbeddedSequence:
    if isinstance(provider, EmbeddingProviderSpec):
        provider = make_provider(provider)
    return provider.embed(text, key)


def embed_corpus(provider, corpus):
    """Attach one embedding per descriptor, keyed by the descriptor code."""
    if isinstance(provider, EmbeddingProviderSpec):
        provider = make_provider(provider)
    out = []
    for d in corpus.descriptors:
        try:
            out.append(provider.embed(d.description, key=d.code))
        except EmptyInput as exc:
            raise EmptyInput(str(exc), code=d.code) from exc
        except MissingEmbedding as exc:
            raise MissingEmbedding(f"[{d.code}] {exc}") from exc
    return corpus.with_embeddings(out)


# --------------------------------------------------------------------------
# LQLM container


def write_embeddings(path, sequences: Mapping[str, EmbeddedSequence] | Iterable[tuple[str, EmbeddedSequence]]) -> None:
    items = list(sequences.items()) if isinstance(sequences, Mapping) else list(sequences)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(items))]
    for key, seq in items:
        kb = key.encode("utf-8")
        chunks.append(struct.pack("<H", len(kb)) + kb)
        chunks.append(struct.pack("<III", seq.L, seq.D, seq.token_count))
        chunks.append(np.ascontiguousarray(seq.values, dtype="<f4").tobytes())
        chunks.append(seq.mask.astype(np.uint8).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_embeddings(path) -> dict[str, EmbeddedSequence]:
    data = Path(path).read_bytes()
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"{path}: truncated at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise FormatError(f"{path}: bad magic")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    out: dict[str, EmbeddedSequence] = {}
    for _ in range(count):
        (klen,) = struct.unpack("<H", take(2))
        key = bytes(take(klen)).decode("utf-8")
        L, D, token_count = struct.unpack("<III", take(12))
        values = np.frombuffer(take(4 * L * D), dtype="<f4").reshape(L, D).astype(np.float32)
        mask_bytes = np.frombuffer(take(L), dtype=np.uint8)
        if np.any(mask_bytes > 1):
            raise FormatError(f"{path}: mask byte outside 0/1 for {key!r}")
        mask = mask_bytes.astype(bool)
        if token_count > L or not (mask[:token_count].all() and not mask[token_count:].any()):
            raise FormatError(f"{path}: mask inconsistent with token_count for {key!r}")
        out[key] = EmbeddedSequence(values, mask, token_count)
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out
