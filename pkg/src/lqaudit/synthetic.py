"""Synthetic embedding datasets with a known flaw signal.

A positive sample for flaw ``k`` contains a few rows that are noisy copies
of query ``k``'s token rows; everything else is isotropic noise.  Used by
the test-suite and for desk-scale demonstrations of training.
"""

from __future__ import annotations

import numpy as np

from .embedding import EmbeddedSequence
from .taxonomy import SemanticCorpus


def random_sequence(rng: np.random.Generator, L: int, D: int, n_tokens: int) -> EmbeddedSequence:
    values = np.zeros((L, D), dtype=np.float32)
    rows = rng.standard_normal((n_tokens, D))
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    values[:n_tokens] = rows
    mask = np.zeros(L, dtype=bool)
    mask[:n_tokens] = True
    return EmbeddedSequence(values, mask, n_tokens)


def synthetic_corpus(corpus: SemanticCorpus, L: int, D: int, seed: int = 0, n_tokens: int | None = None) -> SemanticCorpus:
    """Attach random query embeddings (one per descriptor) to ``corpus``."""
    rng = np.random.default_rng([seed, 1])
    n = n_tokens or max(2, L // 2)
    return corpus.with_embeddings([random_sequence(rng, L, D, n) for _ in corpus.descriptors])


def synthetic_dataset(corpus: SemanticCorpus, n: int, L: int, seed: int = 0, pos_rate: float = 0.2,
                      signal_rows: int = 3, noise: float = 0.3, safe_fraction: float = 0.0):
    """``n`` (embedding, labels) pairs whose positives echo the matching query.

    ``safe_fraction`` of the samples are forced to carry no flaw at all.
    """
    if corpus.embeddings is None:
        raise ValueError("corpus needs embeddings")
    rng = np.random.default_rng([seed, 2])
    D = corpus.embeddings[0].D
    K = corpus.K
    out = []
    for i in range(n):
        n_tok = int(rng.integers(max(signal_rows + 1, L // 2), L + 1))
        seq = random_sequence(rng, L, D, n_tok)
        values = seq.values.astype(np.float64)
        labels = (rng.random(K) < pos_rate).astype(int)
        if rng.random() < safe_fraction:
            labels[:] = 0
        for k in np.flatnonzero(labels):
            q = corpus.embeddings[k].valid().astype(np.float64)
            pos = rng.choice(n_tok, size=signal_rows, replace=False)
            src = rng.choice(len(q), size=signal_rows, replace=True)
            rows = q[src] + noise * rng.standard_normal((signal_rows, D)) / np.sqrt(D)
            values[pos] = rows / np.linalg.norm(rows, axis=1, keepdims=True)
        out.append((EmbeddedSequence(values.astype(np.float32), seq.mask.copy(), n_tok), labels.tolist()))
    return out
