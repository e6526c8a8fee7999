"""Loss, optimizers, learning-rate schedule, training loop and cross-validation."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .data import WindowSet
from .errors import DataError, NumericError
from .evaluation import auc
from .model import KTModel
from .tensor import Tensor

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-12


def bce_loss(r_hat: Tensor, r) -> Tensor:
    """Mean binary cross-entropy; probabilities are clamped to [1e-12, 1 - 1e-12]."""
    r = np.asarray(r, dtype=np.float64)
    if r_hat.shape != r.shape:
        raise ValueError(f"bce_loss: predictions {list(r_hat.shape)} vs labels {list(r.shape)}")
    p = T.clip(r_hat, PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = T.log(p) * r + T.log(1.0 - p) * (1.0 - r)
    return -ll.mean()


def lr_schedule(n: int, r_init: float) -> float:
    """Constant for the first 10 epochs, then exponential decay by e^-0.1 per epoch."""
    if n < 0:
        raise ValueError(f"epoch index must be >= 0, got {n}")
    if n < 10:
        return r_init
    return r_init * math.exp(0.1 * (10 - n))


class Optimizer:
    def __init__(self, params: Mapping[str, Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(p.data) for n, p in self.params.items()}
        self.n_steps = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def _grads(self) -> dict[str, np.ndarray]:
        missing = [n for n, p in self.params.items() if p.grad is None]
        if missing:
            raise RuntimeError(f"missing gradient for parameters: {missing}")
        return {n: p.grad for n, p in self.params.items()}

    def step(self, lr: float) -> None:
        raise NotImplementedError


class Adam(Optimizer):
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, beta1, beta2, eps)
        self.v = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, lr: float) -> None:
        grads = self._grads()
        self.n_steps += 1
        b1, b2, t = self.beta1, self.beta2, self.n_steps
        for n, p in self.params.items():
            g = grads[n]
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


class AdaMax(Optimizer):
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(params, beta1, beta2, eps)
        self.u = {n: np.zeros_like(p.data) for n, p in self.params.items()}

    def step(self, lr: float) -> None:
        grads = self._grads()
        self.n_steps += 1
        b1, b2, t = self.beta1, self.beta2, self.n_steps
        for n, p in self.params.items():
            g = grads[n]
            m, u = self.m[n], self.u[n]
            m *= b1
            m += (1 - b1) * g
            np.maximum(b2 * u, np.abs(g), out=u)
            p.data -= (lr / (1 - b1 ** t)) * m / (u + self.eps)


def make_optimizer(params, config: TrainConfig) -> Optimizer:
    cls = {"adam": Adam, "adamax": AdaMax}[config.optimizer]
    return cls(params, config.beta1, config.beta2, config.eps)


@dataclass
class EpochLog:
    epoch: int
    lr: float
    train_loss: float
    val_auc: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.lr!r}\t{self.train_loss!r}\t{self.val_auc!r}"


@dataclass
class TrainResult:
    history: list[EpochLog]
    best_epoch: int
    best_val_auc: float
    best_state: dict[str, np.ndarray] = field(repr=False)

    def log_text(self, header: Sequence[str] = ()) -> str:
        lines = [f"# {h}" for h in header]
        lines.append("epoch\tlr\ttrain_loss\tval_auc")
        lines.extend(e.line() for e in self.history)
        return "\n".join(lines) + "\n"


def _rngs(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    shuffle_seq, dropout_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(shuffle_seq), np.random.default_rng(dropout_seq)


def train(model: KTModel, train_set: WindowSet, val_set: WindowSet, config: TrainConfig,
          on_epoch: Callable[[EpochLog], bool | None] | None = None) -> TrainResult:
    """Minibatch training; restores and returns the best-validation-AUC parameters.

    ``on_epoch`` receives each epoch's log entry; returning True stops training early.
    """
    config.validate()
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataError("train: empty train or validation split")
    if len(np.unique(val_set.labels)) < 2:
        raise DataError("train: validation labels contain a single class; AUC undefined")
    shuffle_rng, dropout_rng = _rngs(config.seed)
    opt = make_optimizer(model.parameters(), config)
    history: list[EpochLog] = []
    best_auc, best_epoch, best_state = -math.inf, -1, None
    labels = train_set.labels.astype(np.float64)
    n = len(train_set)

    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config.r_init) if config.schedule_enabled else config.r_init
        order = shuffle_rng.permutation(n)
        total, seen = 0.0, 0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            if len(idx) < 2:
                # batchnorm needs two examples; a lone trailing example is skipped
                continue
            opt.zero_grad()
            r_hat = model.forward(train_set.skills[idx], train_set.responses[idx], training=True, rng=dropout_rng)
            loss = bce_loss(r_hat, labels[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(f"train: non-finite loss {value} at epoch {epoch}, batch {b} (lr={lr!r})")
            T.backward(loss)
            opt.step(lr)
            total += value * len(idx)
            seen += len(idx)
        val_auc = auc(model.predict(val_set.skills, val_set.responses), val_set.labels)
        entry = EpochLog(epoch, lr, total / max(seen, 1), val_auc)
        history.append(entry)
        log.info("epoch %d lr=%.3g loss=%.5f val_auc=%.5f", epoch, lr, entry.train_loss, val_auc)
        if val_auc > best_auc:
            best_auc, best_epoch = val_auc, epoch
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
        if on_epoch is not None and on_epoch(entry):
            break

    model.load_state_dict(best_state)
    return TrainResult(history, best_epoch, best_auc, best_state)


@dataclass
class CVResult:
    fold_aucs: list[float]
    results: list[TrainResult] = field(repr=False)

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.fold_aucs))


def cross_validate(model_factory: Callable[[], KTModel], folds: Sequence[tuple[WindowSet, WindowSet]],
                   config: TrainConfig, expected_folds: int = 5) -> CVResult:
    """Train one fresh model per (train, validation) pair and report validation AUCs."""
    if len(folds) < 2:
        raise DataError(f"cross_validate: need at least 2 folds, got {len(folds)}")
    if len(folds) != expected_folds:
        raise DataError(f"cross_validate: expected {expected_folds} folds, got {len(folds)}")
    aucs, results = [], []
    for k, (tr, va) in enumerate(folds):
        log.info("fold %d: %d train / %d validation windows", k, len(tr), len(va))
        res = train(model_factory(), tr, va, config)
        aucs.append(res.best_val_auc)
        results.append(res)
    return CVResult(aucs, results)
