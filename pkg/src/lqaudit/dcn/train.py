"""Cost-sensitive mini-batch training with Adam, LR step decay and early stopping."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from ..embedding import EmbeddedSequence
from ..errors import EmptyDataset, MissingCorpusEmbeddings, NonFiniteLoss, ShapeMismatch
from .model import DcnConfig, DcnModel, batch_loss_and_grads, score_slice, weighted_bce

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    lr_decay: float = 0.5
    lr_patience: int = 5
    val_fraction: float = 0.2
    threshold: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TrainHyper":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    grad_norm: float
    precision: float
    recall: float
    f1: float
    macro_f1: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: DcnModel
    history: list[EpochMetrics] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def last_epoch(self) -> int:
        return self.history[-1].epoch if self.history else -1


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _prf(pred: np.ndarray, truth: np.ndarray) -> tuple[float, float, float]:
    tp = float(np.sum(pred & truth))
    fp = float(np.sum(pred & ~truth))
    fn = float(np.sum(~pred & truth))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def evaluate(model: DcnModel, data: Sequence[tuple[EmbeddedSequence, Sequence[int]]], corpus,
             threshold: float = 0.5, alpha: float | None = None) -> dict:
    """Inference-mode loss and micro/macro detection metrics over ``data``."""
    alpha = model.config.alpha if alpha is None else alpha
    probs = np.array([score_slice(model, emb, corpus).scores for emb, _ in data])
    truth = np.array([[bool(v) for v in y] for _, y in data])
    loss = float(np.mean([weighted_bce(p, t, alpha) for p, t in zip(probs, truth)]))
    pred = probs >= threshold
    precision, recall, f1 = _prf(pred, truth)
    per_class = [_prf(pred[:, k], truth[:, k])[2] for k in range(truth.shape[1])]
    return {
        "loss": loss, "precision": precision, "recall": recall, "f1": f1,
        "macro_f1": float(np.mean(per_class)), "probs": probs,
    }


def _dropout_streams(seed: int, epoch: int, batch: int) -> Callable[[int, int], np.random.Generator]:
    def make(sample: int, k: int) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, epoch, batch, sample, k])))

    return make


def split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.random.default_rng([seed, 0x5EED]).permutation(n)
    n_val = int(round(fraction * n)) if n >= 2 and fraction > 0 else 0
    n_val = min(max(n_val, 1 if fraction > 0 and n >= 2 else 0), n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(dataset: Sequence[tuple[EmbeddedSequence, Sequence[int]]], corpus, config: DcnConfig,
          hyper: TrainHyper = TrainHyper(), validation=None, init_model: DcnModel | None = None,
          start_epoch: int = 0, on_epoch: Callable[[EpochMetrics], None] | None = None) -> TrainResult:
    """Fit the shared network over all (slice, flaw) pairs.

    Returns the parameters of the epoch with the best validation F1 (ties
    broken by lower validation loss).  When
    ``validation`` is omitted a ``val_fraction`` split of ``dataset`` is
    held out; with no held-out data at all the training set is used for
    model selection.
    """
    if not dataset:
        raise EmptyDataset("training set is empty")
    if corpus.embeddings is None:
        raise MissingCorpusEmbeddings("corpus has not been embedded")
    K = corpus.K
    for i, (_, y) in enumerate(dataset):
        if len(y) != K:
            raise ShapeMismatch(f"sample {i}: {len(y)} labels for K={K}")
    data = list(dataset)
    if validation is None:
        tr_idx, va_idx = split_validation(len(data), hyper.val_fraction, hyper.seed)
        validation = [data[i] for i in va_idx]
        data = [data[i] for i in tr_idx]
    select_on = validation if validation else data

    model = init_model.copy() if init_model is not None else DcnModel.initialize(config, hyper.seed)
    opt = Adam(model.params, hyper.beta1, hyper.beta2, hyper.adam_eps)
    lr = hyper.lr
    result = TrainResult(model=model.copy())
    best_f1, best_loss = -math.inf, math.inf
    stale = lr_stale = 0
    queries = corpus.embeddings
    use_dropout = config.dropout_rate > 0

    for epoch in range(start_epoch, start_epoch + hyper.max_epochs):
        order = np.random.default_rng([hyper.seed, epoch]).permutation(len(data))
        losses, norms = [], []
        for b, start in enumerate(range(0, len(order), hyper.batch_size)):
            batch = [data[i] for i in order[start:start + hyper.batch_size]]
            rngs = _dropout_streams(hyper.seed, epoch, b) if use_dropout else None
            loss, grads, _ = batch_loss_and_grads(model, batch, queries, rngs)
            gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if not (math.isfinite(loss) and math.isfinite(gnorm)):
                raise NonFiniteLoss(
                    f"non-finite loss at epoch {epoch}, batch {b}",
                    {"epoch": epoch, "batch": b, "loss": loss, "grad_norm": gnorm, "lr": lr},
                )
            opt.step(model.params, grads, lr)
            losses.append(loss)
            norms.append(gnorm)
        ev = evaluate(model, select_on, corpus, hyper.threshold)
        m = EpochMetrics(
            epoch=epoch, lr=lr, train_loss=float(np.mean(losses)), val_loss=ev["loss"],
            grad_norm=float(np.mean(norms)), precision=ev["precision"], recall=ev["recall"],
            f1=ev["f1"], macro_f1=ev["macro_f1"],
        )
        result.history.append(m)
        log.info("epoch %d loss=%.4f val_loss=%.4f f1=%.4f lr=%.2e", epoch, m.train_loss, m.val_loss, m.f1, lr)
        if on_epoch is not None:
            on_epoch(m)
        improved = m.f1 > best_f1
        if improved or (m.f1 == best_f1 and m.val_loss < best_loss):
            # equal F1 is common on small validation sets; keep the better-calibrated epoch
            best_f1, best_loss = m.f1, m.val_loss
            result.model = model.copy()
            result.best_epoch = epoch
        if improved:
            stale = lr_stale = 0
        else:
            stale += 1
            lr_stale += 1
        if lr_stale >= hyper.lr_patience:
            lr *= hyper.lr_decay
            lr_stale = 0
        if stale >= hyper.patience:
            result.stopped_early = True
            break
    return result
