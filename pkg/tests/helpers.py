"""Shared oracles and builders for the test-suite."""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

import numpy as np

from lqaudit.dcn import DcnConfig, DcnModel, batch_loss_and_grads
from lqaudit.embedding import EmbeddedSequence
from lqaudit.manifest import AuditInformedManifest, FilterConfig, partition
from lqaudit.slicer import parse_contract, slice_all
from lqaudit.taxonomy import default_corpus

HERE = Path(__file__).parent
FIXTURES = HERE / "fixtures" / "contracts"
GOLDENS = HERE / "goldens"

TINY = DcnConfig(D=8, d_h=4, N=1, heads=1, dropout_rate=0.0)


def rand_seq(rng, L, D, n_valid=None, scale=1.0) -> EmbeddedSequence:
    n_valid = L if n_valid is None else n_valid
    values = np.zeros((L, D), dtype=np.float32)
    values[:n_valid] = (scale * rng.standard_normal((n_valid, D))).astype(np.float32)
    mask = np.zeros(L, dtype=bool)
    mask[:n_valid] = True
    return EmbeddedSequence(values, mask, n_valid)


# --------------------------------------------------------------------------
# straight-line reference network (explicit loops, no shared code with the package)


def ref_layer_norm_row(x, gamma, beta, eps):
    mu = sum(x) / len(x)
    var = sum((v - mu) ** 2 for v in x) / len(x)
    return [gamma[i] * (x[i] - mu) / math.sqrt(var + eps) + beta[i] for i in range(len(x))]


def ref_matvec(W, x):
    return [sum(W[i][j] * x[j] for j in range(len(x))) for i in range(len(W))]


def ref_forward(model: DcnModel, code: EmbeddedSequence, query: EmbeddedSequence) -> float:
    cfg = model.config
    P = {k: v.tolist() for k, v in model.params.items()}
    eps = cfg.layer_norm_eps

    def proj(seq, s):
        rows = [seq.values[t].astype(np.float64).tolist() for t in range(seq.L) if seq.mask[t]]
        out = []
        for x in rows:
            z = [a + b for a, b in zip(ref_matvec(P[f"W_{s}"], x), P[f"b_{s}"])]
            out.append(ref_layer_norm_row(z, P[f"ln_{s}.gamma"], P[f"ln_{s}.beta"], eps))
        return out

    Hc = proj(code, "c")
    Hq = proj(query, "q")
    dk = cfg.d_h // cfg.heads
    for l in range(cfg.N):
        p = lambda name: P[f"layers.{l}.{name}"]  # noqa: E731
        Q = [ref_matvec(p("W_Q"), h) for h in Hc]
        K = [ref_matvec(p("W_K"), h) for h in Hq]
        V = [ref_matvec(p("W_V"), h) for h in Hq]
        new = []
        for i in range(len(Hc)):
            concat = []
            for hd in range(cfg.heads):
                sl = slice(hd * dk, (hd + 1) * dk)
                s = [sum(a * b for a, b in zip(Q[i][sl], K[j][sl])) / math.sqrt(dk) for j in range(len(Hq))]
                m = max(s)
                e = [math.exp(v - m) for v in s]
                tot = sum(e)
                w = [v / tot for v in e]
                concat += [sum(w[j] * V[j][sl][c] for j in range(len(Hq))) for c in range(dk)]
            att = ref_matvec(p("W_O"), concat)
            h1 = ref_layer_norm_row([a + b for a, b in zip(Hc[i], att)], p("ln1.gamma"), p("ln1.beta"), eps)
            f1 = [max(0.0, a + b) for a, b in zip(ref_matvec(p("ffn.W1"), h1), p("ffn.b1"))]
            f2 = [a + b for a, b in zip(ref_matvec(p("ffn.W2"), f1), p("ffn.b2"))]
            new.append(ref_layer_norm_row([a + b for a, b in zip(h1, f2)], p("ln2.gamma"), p("ln2.beta"), eps))
        Hc = new
    d_h = cfg.d_h
    v = [max(h[c] for h in Hc) for c in range(d_h)] + [sum(h[c] for h in Hc) / len(Hc) for c in range(d_h)]
    hid = [max(0.0, a + b) for a, b in zip(ref_matvec(P["mlp.W1"], v), P["mlp.b1"])]
    z = sum(a * b for a, b in zip(P["mlp.W2"][0], hid)) + P["mlp.b2"][0]
    return 1.0 / (1.0 + math.exp(-z))


# --------------------------------------------------------------------------
# finite differences


def finite_difference_grads(model: DcnModel, batch, queries, step=1e-4, rngs=None) -> dict[str, np.ndarray]:
    out = {}
    for name, W in model.params.items():
        g = np.zeros_like(W)
        flat = W.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            lp, _, _ = batch_loss_and_grads(model, batch, queries, rngs)
            flat[i] = orig - step
            lm, _, _ = batch_loss_and_grads(model, batch, queries, rngs)
            flat[i] = orig
            gflat[i] = (lp - lm) / (2 * step)
        out[name] = g
    return out


def tensor_rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


# --------------------------------------------------------------------------
# three-slice audit scenario

SCENARIO_SOURCE = """pragma solidity ^0.8.0;

contract Pool {
    uint256 reserve;
    address oracle;
    modifier onlyOracle() {
        require(msg.sender == oracle);
        _;
    }
    function sync(uint256 r) external onlyOracle {
        reserve = r;
    }
    function drain(address to) external {
        payable(to).transfer(reserve);
    }
    function quote(uint256 amountIn) external view returns (uint256) {
        return amountIn * reserve / 1e18;
    }
}
"""

# slice -> scores; sync: true Absolute LIF, drain: false Absolute BPF, quote: Fuzzy-only hidden LVD
SCENARIO_SCORES = {
    "Pool#sync0": {"LIF": 0.91, "BPF": 0.0004, "GAR": 0.0002, "LVD": 0.0003, "TLS": 0.0001},
    "Pool#drain0": {"LIF": 0.0002, "BPF": 0.62, "GAR": 0.0005, "LVD": 0.0001, "TLS": 0.0003},
    "Pool#quote0": {"LIF": 0.0003, "BPF": 0.0002, "GAR": 0.0004, "LVD": 0.024, "TLS": 0.0001},
}


def scenario():
    """(slices, manifest, corpus) for the scripted audit scenario."""
    corpus = default_corpus()
    slices = slice_all(parse_contract("Pool", SCENARIO_SOURCE))
    entries = [partition([SCENARIO_SCORES[s.slice_id][c] for c in corpus.codes], FilterConfig(), corpus.codes,
                         slice_id=s.slice_id) for s in slices]
    manifest = AuditInformedManifest(entries, corpus.fingerprint(), "scenario-model", FilterConfig())
    return slices, manifest, corpus


def scenario_responder(verification_passes: bool = True):
    """Scripted auditor: confirms sync/LIF, rejects drain/BPF, mines LVD on quote."""

    def respond(request) -> str:
        u = request.user_text
        sid = re.search(r"slice_id: (\S+)", u).group(1)
        if u.startswith("PHASE 2-1 | INITIAL"):
            if sid == "Pool#sync0":
                return json.dumps({"verdict": "valid", "reason": "reserve set by a single oracle call",
                                   "suggestion": "bound the reserve update against balances"})
            return json.dumps({"verdict": "false_positive", "reason": "transfer uses the tracked reserve",
                               "suggestion": ""})
        if u.startswith("PHASE 2-2"):
            if sid == "Pool#quote0":
                return json.dumps({"findings": [{"flaw_code": "LVD", "reason": "quote reads a spot reserve",
                                                 "suggestion": "use a time-weighted price"}]})
            return json.dumps({"findings": []})
        if u.startswith("PHASE 2-1 | FEEDBACK"):
            if verification_passes:
                return json.dumps({"verdict": "valid", "reason": "spot reserve is manipulable in one block",
                                   "suggestion": "use a time-weighted price"})
            return json.dumps({"verdict": "false_positive", "reason": "cannot confirm", "suggestion": ""})
        raise AssertionError(f"unexpected prompt: {u[:40]}")

    return respond
