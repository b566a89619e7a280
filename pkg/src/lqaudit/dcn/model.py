"""Dynamic Co-Attention Network: forward pass and exact gradients.

Pipeline for one (slice, flaw description) pair::

    H_C = LN(C W_c^T + b_c)          H_Q = LN(Q W_q^T + b_q)
    repeat N times:
        H_C = LN(H_C + Drop(MHA(H_C, H_Q, H_Q)))
        H_C = LN(H_C + Drop(FFN(H_C)))
    v = [max_t H_C ; mean_t H_C]
    p = sigmoid(MLP(v))

Row-vector convention throughout (``x @ W.T + b``).  All arithmetic is
float64.  Padded rows are removed before the network runs; every row of
``H_C`` is processed independently of the others, so this is identical to
masking them.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..embedding import EmbeddedSequence
from ..errors import (
    AllKeysMasked,
    ConfigMismatch,
    DomainError,
    EmptySequence,
    MissingCorpusEmbeddings,
    ShapeMismatch,
)

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class DcnConfig:
    D: int = 1024
    d_h: int = 256
    N: int = 2
    heads: int = 4
    ffn_dim: int | None = None
    dropout_rate: float = 0.1
    mlp_hidden: int | None = None
    alpha: float = 6.0
    layer_norm_eps: float = 1e-5

    def __post_init__(self):
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.d_h)
        if self.mlp_hidden is None:
            object.__setattr__(self, "mlp_hidden", self.d_h)
        if self.d_h % self.heads:
            raise ValueError(f"d_h={self.d_h} not divisible by heads={self.heads}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.N < 1 or self.D < 1:
            raise ValueError("N and D must be positive")

    @classmethod
    def from_dict(cls, obj: Mapping) -> "DcnConfig":
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: obj[k] for k in names if k in obj})

    def to_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(cfg: DcnConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for s in ("c", "q"):
        shapes[f"W_{s}"] = (cfg.d_h, cfg.D)
        shapes[f"b_{s}"] = (cfg.d_h,)
        shapes[f"ln_{s}.gamma"] = (cfg.d_h,)
        shapes[f"ln_{s}.beta"] = (cfg.d_h,)
    for l in range(cfg.N):
        p = f"layers.{l}."
        for name in ("W_Q", "W_K", "W_V", "W_O"):
            shapes[p + name] = (cfg.d_h, cfg.d_h)
        shapes[p + "ln1.gamma"] = (cfg.d_h,)
        shapes[p + "ln1.beta"] = (cfg.d_h,)
        shapes[p + "ffn.W1"] = (cfg.ffn_dim, cfg.d_h)
        shapes[p + "ffn.b1"] = (cfg.ffn_dim,)
        shapes[p + "ffn.W2"] = (cfg.d_h, cfg.ffn_dim)
        shapes[p + "ffn.b2"] = (cfg.d_h,)
        shapes[p + "ln2.gamma"] = (cfg.d_h,)
        shapes[p + "ln2.beta"] = (cfg.d_h,)
    shapes["mlp.W1"] = (cfg.mlp_hidden, 2 * cfg.d_h)
    shapes["mlp.b1"] = (cfg.mlp_hidden,)
    shapes["mlp.W2"] = (1, cfg.mlp_hidden)
    shapes["mlp.b2"] = (1,)
    return shapes


def init_params(cfg: DcnConfig, seed: int = 0) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, unit LayerNorm gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            params[name] = np.ones(shape)
        elif leaf == "beta" or leaf.startswith("b"):
            params[name] = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


@dataclass
class DcnModel:
    config: DcnConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def initialize(cls, config: DcnConfig, seed: int = 0) -> "DcnModel":
        return cls(config, init_params(config, seed))

    def __post_init__(self):
        if not self.params:
            self.params = init_params(self.config)
        expected = parameter_shapes(self.config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ConfigMismatch(f"parameter set mismatch (missing {missing}, extra {extra})")
        for name, shape in expected.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ConfigMismatch(f"{name}: shape {arr.shape}, expected {shape}")
            self.params[name] = arr
        # keep the canonical order
        self.params = {name: self.params[name] for name in expected}

    def copy(self) -> "DcnModel":
        return DcnModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def layer(self, l: int) -> dict[str, np.ndarray]:
        prefix = f"layers.{l}."
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def mlp(self) -> dict[str, np.ndarray]:
        return {k[4:]: v for k, v in self.params.items() if k.startswith("mlp.")}

    def fingerprint(self) -> str:
        from .checkpoint import checkpoint_bytes

        return hashlib.sha256(checkpoint_bytes(self)).hexdigest()

    def forward(self, slice_emb: EmbeddedSequence, query_emb: EmbeddedSequence, train_mode: bool = False,
                rng: np.random.Generator | None = None) -> float:
        return forward(self, slice_emb, query_emb, train_mode=train_mode, rng=rng)


# --------------------------------------------------------------------------
# primitive ops


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> np.ndarray:
    """LayerNorm over the last axis (population variance)."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def _ln_fwd(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return gamma * xhat + beta, (xhat, inv, gamma)


def _ln_bwd(dy, cache):
    xhat, inv, gamma = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def _compact(seq: EmbeddedSequence | np.ndarray, mask=None) -> np.ndarray:
    if isinstance(seq, EmbeddedSequence):
        return seq.values[seq.mask].astype(np.float64)
    values = np.asarray(seq, dtype=np.float64)
    if mask is None:
        return values
    return values[np.asarray(mask, dtype=bool)]


def project(seq: EmbeddedSequence, W, b, ln_params, eps: float = 1e-5) -> np.ndarray:
    """``LN(x W^T + b)`` on every valid row; padded rows are zero."""
    if seq.D != W.shape[1]:
        raise ShapeMismatch(f"sequence has D={seq.D}, projection expects {W.shape[1]}")
    gamma, beta = ln_params
    out = np.zeros((seq.L, W.shape[0]))
    valid = _compact(seq)
    if len(valid):
        out[seq.mask] = layer_norm(valid @ W.T + b, gamma, beta, eps)
    return out


def _softmax(S):
    S = S - S.max(axis=-1, keepdims=True)
    E = np.exp(S)
    return E / E.sum(axis=-1, keepdims=True)


def _mha_fwd(Hc, Hq, p: Mapping[str, np.ndarray], heads: int, key_mask=None):
    n, dh = Hc.shape
    m = Hq.shape[0]
    dk = dh // heads
    Qm = Hc @ p["W_Q"].T
    Km = Hq @ p["W_K"].T
    Vm = Hq @ p["W_V"].T
    Qh = Qm.reshape(n, heads, dk).transpose(1, 0, 2)
    Kh = Km.reshape(m, heads, dk).transpose(1, 0, 2)
    Vh = Vm.reshape(m, heads, dk).transpose(1, 0, 2)
    scale = 1.0 / np.sqrt(dk)
    S = (Qh @ Kh.transpose(0, 2, 1)) * scale
    if key_mask is not None:
        S = np.where(np.asarray(key_mask, dtype=bool)[None, None, :], S, -np.inf)
    A = _softmax(S)
    Oh = A @ Vh
    O = Oh.transpose(1, 0, 2).reshape(n, dh)
    out = O @ p["W_O"].T
    return out, (Hc, Hq, Qh, Kh, Vh, A, O, scale, heads)


def _mha_bwd(dout, p, cache):
    Hc, Hq, Qh, Kh, Vh, A, O, scale, heads = cache
    n, dh = Hc.shape
    m = Hq.shape[0]
    dk = dh // heads
    g = {"W_O": dout.T @ O}
    dO = dout @ p["W_O"]
    dOh = dO.reshape(n, heads, dk).transpose(1, 0, 2)
    dA = dOh @ Vh.transpose(0, 2, 1)
    dVh = A.transpose(0, 2, 1) @ dOh
    dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) * scale
    dQh = dS @ Kh
    dKh = dS.transpose(0, 2, 1) @ Qh
    dQm = dQh.transpose(1, 0, 2).reshape(n, dh)
    dKm = dKh.transpose(1, 0, 2).reshape(m, dh)
    dVm = dVh.transpose(1, 0, 2).reshape(m, dh)
    g["W_Q"] = dQm.T @ Hc
    g["W_K"] = dKm.T @ Hq
    g["W_V"] = dVm.T @ Hq
    dHc = dQm @ p["W_Q"]
    dHq = dKm @ p["W_K"] + dVm @ p["W_V"]
    return dHc, dHq, g


def multi_head_attention(Hq, Hkv, mask_kv, W_Q, W_K, W_V, W_O, heads: int = 1,
                         return_weights: bool = False):
    """Scaled dot-product attention of ``Hq`` rows over the unmasked ``Hkv`` rows.

    Per head ``softmax(Q_h K_h^T / sqrt(d_h / heads)) V_h``; heads are
    concatenated and mapped through ``W_O``.
    """
    Hq = np.asarray(Hq, dtype=np.float64)
    Hkv = np.asarray(Hkv, dtype=np.float64)
    if Hq.shape[1] % heads:
        raise ShapeMismatch(f"d_h={Hq.shape[1]} not divisible by heads={heads}")
    mask_kv = np.ones(len(Hkv), dtype=bool) if mask_kv is None else np.asarray(mask_kv, dtype=bool)
    if not mask_kv.any():
        raise AllKeysMasked("every key position is masked")
    p = {"W_Q": W_Q, "W_K": W_K, "W_V": W_V, "W_O": W_O}
    out, cache = _mha_fwd(Hq, Hkv, p, heads, mask_kv)
    if return_weights:
        return out, cache[5]
    return out


def _dropout_mask(rng: np.random.Generator | None, shape, rate: float):
    if rng is None or rate == 0:
        return None
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def _block_fwd(Hc, Hq, p, cfg: DcnConfig, masks=(None, None)):
    eps = cfg.layer_norm_eps
    att, att_cache = _mha_fwd(Hc, Hq, p, cfg.heads)
    d1 = att if masks[0] is None else att * masks[0]
    H1, ln1 = _ln_fwd(Hc + d1, p["ln1.gamma"], p["ln1.beta"], eps)
    pre = H1 @ p["ffn.W1"].T + p["ffn.b1"]
    F1 = np.maximum(pre, 0.0)
    F2 = F1 @ p["ffn.W2"].T + p["ffn.b2"]
    d2 = F2 if masks[1] is None else F2 * masks[1]
    H2, ln2 = _ln_fwd(H1 + d2, p["ln2.gamma"], p["ln2.beta"], eps)
    return H2, (att_cache, ln1, H1, pre, F1, ln2, masks)


def _block_bwd(dH2, p, cache):
    att_cache, ln1, H1, pre, F1, ln2, masks = cache
    g = {}
    dR2, g["ln2.gamma"], g["ln2.beta"] = _ln_bwd(dH2, ln2)
    dF2 = dR2 if masks[1] is None else dR2 * masks[1]
    g["ffn.W2"] = dF2.T @ F1
    g["ffn.b2"] = dF2.sum(axis=0)
    dpre = (dF2 @ p["ffn.W2"]) * (pre > 0)
    g["ffn.W1"] = dpre.T @ H1
    g["ffn.b1"] = dpre.sum(axis=0)
    dH1 = dR2 + dpre @ p["ffn.W1"]
    dR1, g["ln1.gamma"], g["ln1.beta"] = _ln_bwd(dH1, ln1)
    datt = dR1 if masks[0] is None else dR1 * masks[0]
    dHc_att, dHq, g_att = _mha_bwd(datt, p, att_cache)
    g.update(g_att)
    return dR1 + dHc_att, dHq, g


def co_attention_block(H_C, H_Q, layer_params: Mapping[str, np.ndarray], mask_c=None, mask_q=None,
                       train_mode: bool = False, dropout_rate: float = 0.0,
                       rng: np.random.Generator | None = None, heads: int = 1,
                       eps: float = 1e-5) -> np.ndarray:
    """One residual co-attention layer with the slice stream as the query.

    Dropout is applied only when ``train_mode`` is true.  Rows of ``H_C``
    outside ``mask_c`` come back as zeros.
    """
    H_C = np.asarray(H_C, dtype=np.float64)
    mask_c = np.ones(len(H_C), dtype=bool) if mask_c is None else np.asarray(mask_c, dtype=bool)
    mask_q = np.ones(len(H_Q), dtype=bool) if mask_q is None else np.asarray(mask_q, dtype=bool)
    if not mask_q.any():
        raise AllKeysMasked("every key position is masked")
    Hc = H_C[mask_c]
    Hq = np.asarray(H_Q, dtype=np.float64)[mask_q]
    d_h = Hc.shape[1]
    cfg = _BlockCfg(heads, eps)
    masks = (None, None)
    if train_mode:
        masks = (_dropout_mask(rng, Hc.shape, dropout_rate), _dropout_mask(rng, Hc.shape, dropout_rate))
    out_valid, _ = _block_fwd(Hc, Hq, layer_params, cfg, masks)
    out = np.zeros((len(H_C), d_h))
    out[mask_c] = out_valid
    return out


@dataclass(frozen=True)
class _BlockCfg:
    heads: int
    layer_norm_eps: float


def pool_dual(H, mask=None) -> np.ndarray:
    """Concatenate per-channel max and mean over the valid rows."""
    valid = _compact(H, mask)
    if len(valid) == 0:
        raise EmptySequence("no valid rows to pool")
    return np.concatenate([valid.max(axis=0), valid.mean(axis=0)])


def _mlp_fwd(v, p):
    pre = p["W1"] @ v + p["b1"]
    h = np.maximum(pre, 0.0)
    z = float((p["W2"] @ h + p["b2"])[0])
    return z, (v, pre, h)


def _mlp_bwd(dz, p, cache):
    v, pre, h = cache
    g = {"W2": dz * h[None, :], "b2": np.array([dz])}
    dpre = dz * p["W2"][0] * (pre > 0)
    g["W1"] = np.outer(dpre, v)
    g["b1"] = dpre
    dv = p["W1"].T @ dpre
    return dv, g


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def classify(v, mlp_params: Mapping[str, np.ndarray]) -> float:
    """``sigmoid(W2 relu(W1 v + b1) + b2)``."""
    z, _ = _mlp_fwd(np.asarray(v, dtype=np.float64), mlp_params)
    return float(sigmoid(z))


# --------------------------------------------------------------------------
# full network


def _project_fwd(X, params, stream: str, eps: float):
    Z = X @ params[f"W_{stream}"].T + params[f"b_{stream}"]
    H, ln = _ln_fwd(Z, params[f"ln_{stream}.gamma"], params[f"ln_{stream}.beta"], eps)
    return H, (X, ln)


def _project_bwd(dH, stream: str, cache, grads):
    X, ln = cache
    dZ, dgamma, dbeta = _ln_bwd(dH, ln)
    grads[f"W_{stream}"] += dZ.T @ X
    grads[f"b_{stream}"] += dZ.sum(axis=0)
    grads[f"ln_{stream}.gamma"] += dgamma
    grads[f"ln_{stream}.beta"] += dbeta


def _check_inputs(model: DcnModel, slice_emb: EmbeddedSequence, query_emb: EmbeddedSequence):
    D = model.config.D
    if slice_emb.D != D or query_emb.D != D:
        raise ShapeMismatch(f"embedding dims ({slice_emb.D}, {query_emb.D}) != model D={D}")
    if not slice_emb.mask.any():
        raise EmptySequence("slice embedding has no valid tokens")
    if not query_emb.mask.any():
        raise AllKeysMasked("query embedding has no valid tokens")


def _pair_fwd(model: DcnModel, Hc0, Hq, dropout_masks=None):
    """Co-attention layers, pooling and classifier on projected inputs."""
    cfg = model.config
    Hc = Hc0
    caches = []
    for l in range(cfg.N):
        masks = dropout_masks[l] if dropout_masks is not None else (None, None)
        Hc, c = _block_fwd(Hc, Hq, model.layer(l), cfg, masks)
        caches.append(c)
    v = np.concatenate([Hc.max(axis=0), Hc.mean(axis=0)])
    argmax = Hc.argmax(axis=0)
    z, mlp_cache = _mlp_fwd(v, model.mlp())
    return z, (caches, argmax, Hc.shape[0], mlp_cache)


def _pair_bwd(model: DcnModel, dz: float, cache, grads):
    """Accumulate parameter grads; return (dHc0, dHq)."""
    cfg = model.config
    caches, argmax, n, mlp_cache = cache
    dv, g = _mlp_bwd(dz, model.mlp(), mlp_cache)
    for k, v in g.items():
        grads["mlp." + k] += v
    d_h = cfg.d_h
    dH = np.broadcast_to(dv[d_h:] / n, (n, d_h)).copy()
    dH[argmax, np.arange(d_h)] += dv[:d_h]
    dHq = None
    for l in reversed(range(cfg.N)):
        dH, dHq_l, g = _block_bwd(dH, model.layer(l), caches[l])
        prefix = f"layers.{l}."
        for k, v in g.items():
            grads[prefix + k] += v
        dHq = dHq_l if dHq is None else dHq + dHq_l
    return dH, dHq


def _dropout_for(cfg: DcnConfig, n: int, rng: np.random.Generator | None):
    if rng is None or cfg.dropout_rate == 0:
        return None
    return [
        (_dropout_mask(rng, (n, cfg.d_h), cfg.dropout_rate), _dropout_mask(rng, (n, cfg.d_h), cfg.dropout_rate))
        for _ in range(cfg.N)
    ]


def forward_logit(model: DcnModel, slice_emb: EmbeddedSequence, query_emb: EmbeddedSequence,
                  train_mode: bool = False, rng: np.random.Generator | None = None) -> float:
    _check_inputs(model, slice_emb, query_emb)
    eps = model.config.layer_norm_eps
    Hc0, _ = _project_fwd(_compact(slice_emb), model.params, "c", eps)
    Hq, _ = _project_fwd(_compact(query_emb), model.params, "q", eps)
    masks = _dropout_for(model.config, len(Hc0), rng) if train_mode else None
    z, _ = _pair_fwd(model, Hc0, Hq, masks)
    return z


def forward(model: DcnModel, slice_emb: EmbeddedSequence, query_emb: EmbeddedSequence,
            train_mode: bool = False, rng: np.random.Generator | None = None) -> float:
    """Independent confidence that ``slice_emb`` exhibits the flaw behind ``query_emb``."""
    return float(sigmoid(forward_logit(model, slice_emb, query_emb, train_mode, rng)))


@dataclass(frozen=True)
class ScoredSlice:
    slice_id: str
    scores: tuple[float, ...]

    def as_dict(self, codes: Sequence[str]) -> dict[str, float]:
        return dict(zip(codes, self.scores))


def score_slice(model: DcnModel, slice_emb: EmbeddedSequence, corpus, slice_id: str = "") -> ScoredSlice:
    if corpus.embeddings is None:
        raise MissingCorpusEmbeddings("corpus has not been embedded")
    eps = model.config.layer_norm_eps
    _check_inputs(model, slice_emb, corpus.embeddings[0])
    Hc0, _ = _project_fwd(_compact(slice_emb), model.params, "c", eps)
    scores = []
    for q in corpus.embeddings:
        _check_inputs(model, slice_emb, q)
        Hq, _ = _project_fwd(_compact(q), model.params, "q", eps)
        z, _ = _pair_fwd(model, Hc0, Hq)
        scores.append(float(sigmoid(z)))
    return ScoredSlice(slice_id, tuple(scores))


# --------------------------------------------------------------------------
# loss and gradients


def weighted_bce(p, y, alpha: float) -> float:
    """Positive-weighted binary cross-entropy averaged over the K flaws (natural log)."""
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if p.shape != y.shape:
        raise ShapeMismatch(f"p {p.shape} vs y {y.shape}")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise DomainError("probabilities must lie in [0, 1]")
    pc = np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP)
    terms = alpha * y * np.log(pc) + (1 - y) * np.log(1 - pc)
    return float(-terms.mean())


def weighted_bce_grad_logit(p: float, y: float, alpha: float) -> float:
    """d loss_k / d logit_k for a single term (before the 1/K, 1/|B| factors)."""
    if p < PROB_CLAMP or p > 1 - PROB_CLAMP:
        # clamped region: the loss is flat in p
        return 0.0
    return -alpha * y * (1.0 - p) + (1.0 - y) * p


def batch_loss_and_grads(model: DcnModel, batch: Sequence[tuple[EmbeddedSequence, Sequence[float]]],
                         queries: Sequence[EmbeddedSequence], rngs=None, alpha: float | None = None):
    """Batch loss (mean over samples of the per-sample K-average) and its gradient.

    ``rngs`` is an optional callable ``(sample_index, k) -> Generator`` that
    supplies dropout randomness; without it the network runs in inference
    mode.  Returns ``(loss, grads, probs)`` with ``probs`` shaped ``(B, K)``.
    """
    cfg = model.config
    alpha = cfg.alpha if alpha is None else alpha
    K = len(queries)
    B = len(batch)
    eps = cfg.layer_norm_eps
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    q_proj = []
    for q in queries:
        if not q.mask.any():
            raise AllKeysMasked("query embedding has no valid tokens")
        q_proj.append(_project_fwd(_compact(q), model.params, "q", eps))
    dHq_total = [np.zeros_like(h) for h, _ in q_proj]
    loss = 0.0
    probs = np.zeros((B, K))
    coef = 1.0 / (K * B)
    for i, (emb, labels) in enumerate(batch):
        _check_inputs(model, emb, queries[0])
        Hc0, c_cache = _project_fwd(_compact(emb), model.params, "c", eps)
        dHc0 = np.zeros_like(Hc0)
        for k in range(K):
            masks = _dropout_for(cfg, len(Hc0), rngs(i, k)) if rngs is not None else None
            z, cache = _pair_fwd(model, Hc0, q_proj[k][0], masks)
            p = float(sigmoid(z))
            probs[i, k] = p
            y = float(labels[k])
            pc = min(max(p, PROB_CLAMP), 1 - PROB_CLAMP)
            loss += -coef * (alpha * y * np.log(pc) + (1 - y) * np.log(1 - pc))
            dz = coef * weighted_bce_grad_logit(p, y, alpha)
            dH, dHq = _pair_bwd(model, dz, cache, grads)
            dHc0 += dH
            dHq_total[k] += dHq
        _project_bwd(dHc0, "c", c_cache, grads)
    for k, (_, cache) in enumerate(q_proj):
        _project_bwd(dHq_total[k], "q", cache, grads)
    return loss, grads, probs


def backward(model: DcnModel, batch, corpus, rngs=None):
    """Exact gradient of the batch loss for every named tensor."""
    if corpus.embeddings is None:
        raise MissingCorpusEmbeddings("corpus has not been embedded")
    _, grads, _ = batch_loss_and_grads(model, batch, corpus.embeddings, rngs)
    return grads
