"""Layer zoo for the encoding and tracing sub-networks.

Conventions:

* sequences are ``[batch, time, channels]``;
* conv kernels are stored as ``[K, C_in, F]`` so that the im2col matrix
  (shifted copies concatenated along channels) multiplies a reshaped
  ``[K * C_in, F]`` kernel;
* GRU gate blocks are packed ``[update | reset | candidate]`` along the last
  axis of ``W`` (``[C, 3H]``), ``U`` (``[H, 3H]``) and ``b`` (``[3H]``), with

      z  = sigmoid(x W_z + h U_z + b_z)
      r  = sigmoid(x W_r + h U_r + b_r)
      h~ = tanh(x W_h + (r * h) U_h + b_h)
      h' = (1 - z) * h + z * h~
"""

from __future__ import annotations

import logging
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor, _make as _make_op

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
EMBED_INIT_SCALE = 0.05


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")


class Layer:
    """Minimal parameter container; subclasses register Tensors in ``_params``."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Layer] = {}

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {n: p.data for n, p in self.named_parameters()}
        state.update(self.named_buffers())
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"state is missing entries: {missing}")
        for name, arr in own.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ShapeError(f"load_state_dict: {name} expects {list(arr.shape)}, got {list(src.shape)}")
            arr[...] = src


# ---------------------------------------------------------------- embedding

class Embedding(Layer):
    """Lookup table with row 0 reserved for padding (zero, never updated)."""

    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator,
                 weights: np.ndarray | None = None):
        super().__init__()
        if dim not in (100, 300):
            log.warning("embedding dim %d differs from the reference 100/300", dim)
        rows = vocab_size + 1
        if weights is None:
            weights = rng.uniform(-EMBED_INIT_SCALE, EMBED_INIT_SCALE, size=(rows, dim))
        weights = np.array(weights, dtype=np.float64)
        if weights.shape != (rows, dim):
            raise ShapeError(f"embedding weights must be {[rows, dim]}, got {list(weights.shape)}")
        weights[0] = 0.0
        self.rows, self.dim = rows, dim
        self.weight = Tensor(weights, requires_grad=True)
        self._params["weight"] = self.weight

    def __call__(self, ids) -> Tensor:
        return embedding_forward(self.weight, ids)


def embedding_forward(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = ids[(ids < 0) | (ids >= table.shape[0])][0]
        raise IndexError(f"embedding id {bad} out of range for {table.shape[0]} rows")
    return T.take_rows(table, ids, ignore_index=0)


# ---------------------------------------------------------------- dropout

def spatial_dropout1d(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Drop whole channels of a ``[B, T, C]`` input; one mask per (example, channel)."""
    _check_rate(rate)
    if not training or rate == 0.0:
        return x
    b, _, c = x.shape
    keep = rng.random((b, 1, c)) >= rate
    return x * (keep / (1.0 - rate))


def gaussian_dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Multiplicative N(1, rate / (1 - rate)) noise during training."""
    _check_rate(rate)
    if not training or rate == 0.0:
        return x
    sigma = np.sqrt(rate / (1.0 - rate))
    return x * rng.normal(1.0, sigma, size=x.shape)


# ---------------------------------------------------------------- convolution

class Conv1D(Layer):
    def __init__(self, in_channels: int, filters: int, kernel: int, rng: np.random.Generator):
        super().__init__()
        if kernel % 2 == 0:
            raise ValueError(f"conv1d kernel must be odd for same padding, got {kernel}")
        self.kernel = kernel
        w = glorot_uniform(rng, (kernel, in_channels, filters), kernel * in_channels, kernel * filters)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(filters), requires_grad=True)
        self._params.update(weight=self.weight, bias=self.bias)

    def __call__(self, x: Tensor) -> Tensor:
        return conv1d(x, self.weight, self.bias)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Stride-1, zero-padded 'same' convolution over the time axis."""
    x = T.as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"conv1d: expected [B, T, C] input, got {list(x.shape)}")
    k, c_in, f = weight.shape
    if k % 2 == 0:
        raise ValueError(f"conv1d kernel must be odd for same padding, got {k}")
    b, t, c = x.shape
    if t == 0:
        raise ShapeError("conv1d: empty time axis")
    if c != c_in:
        raise ShapeError(f"conv1d: incompatible shapes {list(x.shape)} and {list(weight.shape)}")
    half = k // 2
    if half:
        pad = Tensor(np.zeros((b, half, c)))
        xp = T.concat([pad, x, pad], axis=1)
    else:
        xp = x
    cols = T.concat([xp[:, i:i + t, :] for i in range(k)], axis=2) if k > 1 else xp
    return cols @ weight.reshape(k * c_in, f) + bias


# ---------------------------------------------------------------- batchnorm

class BatchNorm1D(Layer):
    """Per-channel normalization over every axis but the last."""

    def __init__(self, channels: int, momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self._params.update(gamma=self.gamma, beta=self.beta)
        self._buffers["running_mean"] = np.zeros(channels)
        self._buffers["running_var"] = np.ones(channels)

    @property
    def running_mean(self) -> np.ndarray:
        return self._buffers["running_mean"]

    @property
    def running_var(self) -> np.ndarray:
        return self._buffers["running_var"]

    def __call__(self, x: Tensor, training: bool, update_stats: bool = True) -> Tensor:
        axes = tuple(range(x.ndim - 1))
        if training:
            n = int(np.prod([x.shape[a] for a in axes]))
            if n < 2:
                raise ValueError("batchnorm: training needs at least 2 values per channel")
            mu = x.mean(axis=axes)
            centered = x - mu
            var = (centered * centered).mean(axis=axes)
            xhat = centered / T.sqrt(var + self.eps)
            if update_stats:
                m = self.momentum
                self.running_mean[...] = m * self.running_mean + (1.0 - m) * mu.data
                self.running_var[...] = m * self.running_var + (1.0 - m) * var.data
        else:
            xhat = (x - self.running_mean.copy()) / np.sqrt(self.running_var + self.eps)
        return xhat * self.gamma + self.beta


# ---------------------------------------------------------------- dense

ACTIVATIONS = {"relu": T.relu, "sigmoid": T.sigmoid, "none": None, None: None}


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, activation: str | None = None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.activation = activation
        self.weight = Tensor(glorot_uniform(rng, (n_in, n_out), n_in, n_out), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True)
        self._params.update(weight=self.weight, bias=self.bias)

    def __call__(self, x: Tensor) -> Tensor:
        return dense(x, self.weight, self.bias, self.activation)


def dense(x: Tensor, weight: Tensor, bias: Tensor, activation: str | None = None) -> Tensor:
    out = T.matmul(x, weight) + bias
    fn = ACTIVATIONS[activation]
    return out if fn is None else fn(out)


# ---------------------------------------------------------------- GRU

class GRUCell(Layer):
    def __init__(self, input_size: int, units: int, rng: np.random.Generator):
        super().__init__()
        h = units
        self.units = h
        self.W = Tensor(np.concatenate([glorot_uniform(rng, (input_size, h), input_size, h)
                                        for _ in range(3)], axis=1), requires_grad=True)
        self.U = Tensor(np.concatenate([orthogonal(rng, h) for _ in range(3)], axis=1), requires_grad=True)
        self.b = Tensor(np.zeros(3 * h), requires_grad=True)
        self._params.update(W=self.W, U=self.U, b=self.b)

    def __call__(self, x_t: Tensor, h_prev: Tensor) -> Tensor:
        return gru_cell(x_t, h_prev, self.W, self.U, self.b)


def _gru_step(gx: Tensor, h: Tensor, U: Tensor) -> Tensor:
    """One step given the precomputed input projection ``gx = x W + b``."""
    n = U.shape[0]
    if h.shape[-1] != n:
        raise ShapeError(f"gru_cell: incompatible shapes {list(h.shape)} and {list(U.shape)}")
    gh = h @ U[:, :2 * n]
    z = T.sigmoid(gx[:, :n] + gh[:, :n])
    r = T.sigmoid(gx[:, n:2 * n] + gh[:, n:])
    cand = T.tanh(gx[:, 2 * n:] + (r * h) @ U[:, 2 * n:])
    return h + z * (cand - h)


def gru_cell(x_t: Tensor, h_prev: Tensor, W: Tensor, U: Tensor, b: Tensor) -> Tensor:
    x_t, h_prev = T.as_tensor(x_t), T.as_tensor(h_prev)
    if x_t.ndim != 2 or x_t.shape[1] != W.shape[0]:
        raise ShapeError(f"gru_cell: incompatible shapes {list(x_t.shape)} and {list(W.shape)}")
    return _gru_step(x_t @ W + b, h_prev, U)


def gru_sequence_reference(x: Tensor, cell: GRUCell, reverse: bool = False) -> list[Tensor]:
    """Composed-op GRU over ``[B, T, C]``; states indexed by input position.

    Slow but built only from primitive ops; :func:`gru_scan` is checked against it.
    """
    b, t, c = x.shape
    if t == 0:
        raise ShapeError("gru: empty sequence")
    if c != cell.W.shape[0]:
        raise ShapeError(f"gru: incompatible shapes {list(x.shape)} and {list(cell.W.shape)}")
    proj = x @ cell.W + cell.b
    h = Tensor(np.zeros((b, cell.units)))
    states: list[Tensor | None] = [None] * t
    steps = range(t - 1, -1, -1) if reverse else range(t)
    for i in steps:
        h = _gru_step(proj[:, i, :], h, cell.U)
        states[i] = h
    return states


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_scan(proj: Tensor, U: Tensor, reverse: bool = False) -> Tensor:
    """Fused GRU recurrence from zero state.

    ``proj`` is the input projection ``x W + b`` of shape ``[B, T, 3H]``.
    Returns the states ``[B, T, H]`` indexed by input position; backward is
    hand-written backpropagation through time.
    """
    proj, U = T.as_tensor(proj), T.as_tensor(U)
    b, t, h3 = proj.shape
    n = U.shape[0]
    if t == 0:
        raise ShapeError("gru: empty sequence")
    if h3 != 3 * n or U.shape != (n, 3 * n):
        raise ShapeError(f"gru_scan: incompatible shapes {list(proj.shape)} and {list(U.shape)}")
    # time-major copies keep per-step slices contiguous
    gx = np.ascontiguousarray(proj.data.transpose(1, 0, 2))
    u = U.data
    u_zr, u_c = u[:, :2 * n], u[:, 2 * n:]
    u_zr_t, u_c_t = np.ascontiguousarray(u_zr.T), np.ascontiguousarray(u_c.T)
    order = list(range(t - 1, -1, -1)) if reverse else list(range(t))
    states = np.empty((t, b, n))
    prev = np.empty((t, b, n))
    z_all = np.empty((t, b, n))
    r_all = np.empty((t, b, n))
    c_all = np.empty((t, b, n))
    h = np.zeros((b, n))
    for i in order:
        g = gx[i]
        gh = h @ u_zr
        zr = _sigmoid(g[:, :2 * n] + gh)
        z, r = zr[:, :n], zr[:, n:]
        c = np.tanh(g[:, 2 * n:] + (r * h) @ u_c)
        prev[i], z_all[i], r_all[i], c_all[i] = h, z, r, c
        h = h + z * (c - h)
        states[i] = h

    def backward(grad_states):
        grad_tm = grad_states.transpose(1, 0, 2)
        d_gx = np.empty((t, b, 3 * n))
        d_u = np.zeros_like(u)
        dh = np.zeros((b, n))
        for i in reversed(order):
            dh = dh + grad_tm[i]
            hp, z, r, c = prev[i], z_all[i], r_all[i], c_all[i]
            da_c = dh * z * (1.0 - c * c)
            d_rh = da_c @ u_c_t
            d_u[:, 2 * n:] += (r * hp).T @ da_c
            da_zr = d_gx[i, :, :2 * n]
            da_zr[:, :n] = dh * (c - hp) * z * (1.0 - z)
            da_zr[:, n:] = d_rh * hp * r * (1.0 - r)
            d_gx[i, :, 2 * n:] = da_c
            d_u[:, :2 * n] += hp.T @ da_zr
            dh = dh * (1.0 - z) + d_rh * r + da_zr @ u_zr_t
        return d_gx.transpose(1, 0, 2), d_u

    states = states.transpose(1, 0, 2)
    return _make_op(states, (proj, U), backward, "gru_scan")


def gru_sequence(x: Tensor, cell: GRUCell, reverse: bool = False) -> Tensor:
    """Run ``cell`` over ``[B, T, C]``; returns ``[B, T, H]`` states indexed by input position."""
    x = T.as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"gru: expected [B, T, C] input, got {list(x.shape)}")
    if x.shape[1] == 0:
        raise ShapeError("gru: empty sequence")
    if x.shape[2] != cell.W.shape[0]:
        raise ShapeError(f"gru: incompatible shapes {list(x.shape)} and {list(cell.W.shape)}")
    return gru_scan(x @ cell.W + cell.b, cell.U, reverse)


class BiGRU(Layer):
    def __init__(self, input_size: int, units: int, rng: np.random.Generator):
        super().__init__()
        self.units = units
        self.fwd = GRUCell(input_size, units, rng)
        self.bwd = GRUCell(input_size, units, rng)
        self._children.update(fwd=self.fwd, bwd=self.bwd)

    def __call__(self, x: Tensor, return_sequences: bool = True):
        return bigru(x, self.fwd, self.bwd, return_sequences)


def bigru(x: Tensor, fwd: GRUCell, bwd: GRUCell, return_sequences: bool = True):
    """Bidirectional GRU.

    Returns ``(seq, last)`` where ``seq`` is ``[B, T, 2H]`` (or ``None`` when
    ``return_sequences`` is false) and ``last`` concatenates the forward state
    after the final step with the backward state after the first step.
    """
    x = T.as_tensor(x)
    if x.ndim != 3:
        raise ShapeError(f"bigru: expected [B, T, C] input, got {list(x.shape)}")
    if fwd.units != bwd.units:
        raise ShapeError("bigru: directions must share the unit count")
    hf = gru_sequence(x, fwd)
    hb = gru_sequence(x, bwd, reverse=True)
    last = T.concat([hf[:, -1, :], hb[:, 0, :]], axis=1)
    seq = T.concat([hf, hb], axis=2) if return_sequences else None
    return seq, last
