"""Central-difference gradient checks for every layer and both full models."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import layers as L
from . import tensor as T
from .config import ModelConfig
from .model import KTModel
from .optim import bce_loss

LAYER_TOL = 1e-5
MODEL_TOL = 1e-4


@dataclass
class CheckRow:
    name: str
    max_error: float
    tol: float
    worst: str
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol


def _masked_max(res: T.GradCheckResult, skip_first_row: bool = False) -> float:
    errors = res.errors.copy()
    for idx in res.kinks:
        errors[idx] = 0.0
    if skip_first_row:
        errors = errors[1:]
    return float(errors.max()) if errors.size else 0.0


def _params_row(name: str, tol: float, loss_fn=None, params=None, x=None, input_fn=None,
                pad_rows: tuple[str, ...] = ()) -> CheckRow:
    start = time.perf_counter()
    worst_err, worst = 0.0, "-"
    if loss_fn is not None:
        for pname, res in T.param_grad_check(loss_fn, params).items():
            err = _masked_max(res, pname in pad_rows)
            if err >= worst_err:
                worst_err, worst = err, pname
    if input_fn is not None:
        err = T.grad_check(input_fn, x)
        if err >= worst_err:
            worst_err, worst = err, "input"
    return CheckRow(name, worst_err, tol, worst, time.perf_counter() - start)


def _weights(shape, rng) -> np.ndarray:
    return rng.uniform(-2.0, 2.0, size=shape)


def check_embedding(rng) -> CheckRow:
    emb = L.Embedding(6, 5, rng)
    emb.weight.data[1:] = _weights((6, 5), rng)
    ids = rng.integers(1, 7, size=(2, 4))
    proj = T.Tensor(_weights((2, 4, 5), rng))
    return _params_row("embedding", LAYER_TOL, lambda: (emb(ids) * proj).sum(), emb.parameters())


def check_spatial_dropout(rng) -> CheckRow:
    x = _weights((2, 4, 3), rng)
    proj = T.Tensor(_weights((2, 4, 3), rng))
    fn = lambda v: (L.spatial_dropout1d(v, 0.0, True, rng) * proj).sum()
    return _params_row("spatial_dropout(rate=0)", LAYER_TOL, x=x, input_fn=fn)


def check_gaussian_dropout(rng) -> CheckRow:
    x = _weights((3, 4), rng)
    proj = T.Tensor(_weights((3, 4), rng))
    fn = lambda v: (L.gaussian_dropout(v, 0.0, True, rng) * proj).sum()
    return _params_row("gaussian_dropout(rate=0)", LAYER_TOL, x=x, input_fn=fn)


def check_conv1d(rng) -> CheckRow:
    conv = L.Conv1D(4, 3, 3, rng)
    conv.bias.data[:] = _weights(3, rng)
    x = _weights((2, 7, 4), rng)
    proj = T.Tensor(_weights((2, 7, 3), rng))
    return _params_row("conv1d", LAYER_TOL, lambda: (conv(T.Tensor(x)) * proj).sum(), conv.parameters(),
                       x, lambda v: (conv(v) * proj).sum())


def check_batchnorm(rng) -> CheckRow:
    bn = L.BatchNorm1D(3)
    bn.gamma.data[:] = _weights(3, rng)
    bn.beta.data[:] = _weights(3, rng)
    x = _weights((2, 5, 3), rng)
    proj = T.Tensor(_weights((2, 5, 3), rng))
    fn = lambda v: (bn(v, training=True, update_stats=False) * proj).sum()
    return _params_row("batchnorm", LAYER_TOL, lambda: fn(T.Tensor(x)), bn.parameters(), x, fn)


def check_dense(rng) -> CheckRow:
    layer = L.Dense(6, 3, rng, "sigmoid")
    layer.bias.data[:] = _weights(3, rng)
    x = _weights((4, 6), rng)
    proj = T.Tensor(_weights((4, 3), rng))
    fn = lambda v: (layer(v) * proj).sum()
    return _params_row("dense", LAYER_TOL, lambda: fn(T.Tensor(x)), layer.parameters(), x, fn)


def check_gru_cell(rng) -> CheckRow:
    cell = L.GRUCell(3, 4, rng)
    cell.b.data[:] = _weights(12, rng)
    xs = _weights((3, 2, 3), rng)

    def fn(h0):
        h = h0
        for x in xs:
            h = cell(T.Tensor(x), h)
        return h.sum()

    h0 = _weights((2, 4), rng)
    return _params_row("gru_cell(3 steps)", LAYER_TOL, lambda: fn(T.Tensor(h0)), cell.parameters(), h0, fn)


def check_bigru(rng) -> CheckRow:
    layer = L.BiGRU(3, 2, rng)
    x = _weights((1, 4, 3), rng)
    proj = T.Tensor(_weights((1, 4, 4), rng))

    def fn(v):
        seq, last = layer(v)
        return (seq * proj).sum() + last.sum()

    return _params_row("bigru", LAYER_TOL, lambda: fn(T.Tensor(x)), layer.parameters(), x, fn)


def _toy_model(variant: str, seed: int) -> tuple[KTModel, np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    dense = (4, 3) if variant == "bigru" else (6, 4, 2)
    cfg = ModelConfig.for_variant(variant, window=4, embed_dim=5, skill_vocab_size=6, conv_filters=4,
                                  gru_units=3, dense_units=dense, spatial_dropout_rate=0.0,
                                  gaussian_dropout_rate=0.0, seed=seed)
    model = KTModel(cfg)
    for name, p in model.named_parameters():
        if name.endswith("bias") or name.endswith(".b") or name.endswith("beta"):
            p.data[...] = rng.uniform(-0.5, 0.5, size=p.shape)
    skills = np.array([[0, 2, 5, 3], [1, 4, 4, 6], [0, 0, 3, 1]])
    responses = np.array([[0, 0, 2, 1], [0, 1, 2, 2], [0, 0, 0, 1]])
    labels = np.array([1.0, 0.0, 1.0])
    return model, skills, responses, labels


def check_model(variant: str, seed: int = 0) -> CheckRow:
    model, skills, responses, labels = _toy_model(variant, seed)

    def loss():
        return bce_loss(model.forward(skills, responses, training=True, update_stats=False), labels)

    pads = ("skill_emb.weight", "resp_emb.weight")
    return _params_row(f"model[{variant}] L=4 d=5 H=3", MODEL_TOL, loss, model.parameters(), pad_rows=pads)


SUITE: dict[str, Callable[[np.random.Generator], CheckRow]] = {
    "embedding": check_embedding,
    "spatial_dropout": check_spatial_dropout,
    "gaussian_dropout": check_gaussian_dropout,
    "conv1d": check_conv1d,
    "batchnorm": check_batchnorm,
    "dense": check_dense,
    "gru_cell": check_gru_cell,
    "bigru": check_bigru,
    "model_bigru": lambda rng: check_model("bigru"),
    "model_tdnn": lambda rng: check_model("tdnn"),
}


def run_suite(seed: int = 0) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    return [check(rng) for check in SUITE.values()]


def format_table(rows: list[CheckRow]) -> str:
    lines = [f"{'check':<30} {'max_rel_err':>12} {'tol':>8}  {'worst':<22} result"]
    for r in rows:
        lines.append(f"{r.name:<30} {r.max_error:12.3e} {r.tol:8.0e}  {r.worst:<22} {'PASS' if r.passed else 'FAIL'}")
    return "\n".join(lines)
