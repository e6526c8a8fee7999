"""Encoding + tracing networks: ``r_hat = classify(trace(encode(window)))``.

Both variants share the encoding sub-network. Each input branch (skills,
responses) runs embedding -> spatial dropout -> conv1d -> batchnorm -> relu
and the two branches are concatenated along channels.

* BiGRU: bidirectional GRU, knowledge state = [h_fwd(last), h_bwd(first)],
  head dense(50, relu) -> dense(25, relu) -> dense(1, sigmoid).
* TDNN: flatten time x channels, Gaussian dropout, head
  dense(20) -> dense(15) -> dense(10) -> dense(5) (relu) -> dense(1, sigmoid).
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .config import BIGRU, TDNN, ModelConfig
from .errors import ShapeError
from .layers import (
    BatchNorm1D,
    BiGRU,
    Conv1D,
    Dense,
    Embedding,
    Layer,
    gaussian_dropout,
    spatial_dropout1d,
)
from .tensor import Tensor


class KTModel(Layer):
    def __init__(self, config: ModelConfig, skill_weights: np.ndarray | None = None):
        super().__init__()
        self.config = config.validate()
        rng = np.random.default_rng(config.seed)
        d = config.embed_dim
        f = config.conv_filters
        self.skill_emb = Embedding(config.skill_vocab_size, d, rng, weights=skill_weights)
        self.resp_emb = Embedding(config.response_vocab_size - 1, config.response_dim, rng)
        self.skill_conv = Conv1D(d, f, config.conv_kernel, rng)
        self.resp_conv = Conv1D(config.response_dim, f, config.conv_kernel, rng)
        self.skill_bn = BatchNorm1D(f)
        self.resp_bn = BatchNorm1D(f)
        self._children.update(skill_emb=self.skill_emb, resp_emb=self.resp_emb,
                              skill_conv=self.skill_conv, resp_conv=self.resp_conv,
                              skill_bn=self.skill_bn, resp_bn=self.resp_bn)
        if config.variant == BIGRU:
            self.rnn = BiGRU(2 * f, config.gru_units, rng)
            self._children["rnn"] = self.rnn
        widths = [config.state_dim, *config.dense_units]
        self.head = [Dense(a, b, rng, "relu") for a, b in zip(widths, widths[1:])]
        self.head.append(Dense(widths[-1], 1, rng, "sigmoid"))
        for i, layer in enumerate(self.head):
            self._children[f"dense{i}"] = layer

    @property
    def variant(self) -> str:
        return self.config.variant

    def _check_inputs(self, skills: np.ndarray, responses: np.ndarray) -> None:
        if skills.ndim != 2 or skills.shape != responses.shape:
            raise ShapeError(f"encode: skills {list(skills.shape)} and responses {list(responses.shape)} must both be [B, L]")
        if skills.shape[1] != self.config.window:
            raise ShapeError(f"encode: window length {skills.shape[1]} != configured {self.config.window}")

    def _branch(self, ids, emb: Embedding, conv: Conv1D, bn: BatchNorm1D, training, rng, update_stats) -> Tensor:
        x = emb(ids)
        x = spatial_dropout1d(x, self.config.spatial_dropout_rate, training, rng)
        x = conv(x)
        x = bn(x, training, update_stats)
        return T.relu(x)

    def encode(self, skills, responses, training: bool = False, rng=None, update_stats: bool = True):
        skills = np.asarray(skills, dtype=np.int64)
        responses = np.asarray(responses, dtype=np.int64)
        self._check_inputs(skills, responses)
        s = self._branch(skills, self.skill_emb, self.skill_conv, self.skill_bn, training, rng, update_stats)
        r = self._branch(responses, self.resp_emb, self.resp_conv, self.resp_bn, training, rng, update_stats)
        return s, r

    def trace(self, skill_feat: Tensor, resp_feat: Tensor, training: bool = False, rng=None) -> Tensor:
        if skill_feat.shape[:2] != resp_feat.shape[:2]:
            raise ShapeError(f"trace: misaligned branches {list(skill_feat.shape)} and {list(resp_feat.shape)}")
        x = T.concat([skill_feat, resp_feat], axis=2)
        if self.variant == BIGRU:
            _, v = self.rnn(x, return_sequences=False)
            return v
        b = x.shape[0]
        v = x.reshape(b, x.shape[1] * x.shape[2])
        return gaussian_dropout(v, self.config.gaussian_dropout_rate, training, rng)

    def classify(self, v: Tensor) -> Tensor:
        for layer in self.head:
            v = layer(v)
        return v.reshape(v.shape[0])

    def forward(self, skills, responses, training: bool = False, rng=None, update_stats: bool = True) -> Tensor:
        if training and rng is None and (self.config.spatial_dropout_rate > 0 or
                                         (self.variant == TDNN and self.config.gaussian_dropout_rate > 0)):
            raise ValueError("training with dropout needs an rng")
        s, r = self.encode(skills, responses, training, rng, update_stats)
        return self.classify(self.trace(s, r, training, rng))

    __call__ = forward

    def predict(self, skills, responses, batch_size: int = 512) -> np.ndarray:
        """Inference-mode probabilities (dropout off, batchnorm running stats)."""
        skills = np.asarray(skills, dtype=np.int64)
        responses = np.asarray(responses, dtype=np.int64)
        out = []
        for i in range(0, len(skills), batch_size):
            out.append(self.forward(skills[i:i + batch_size], responses[i:i + batch_size]).data)
        return np.concatenate(out) if out else np.zeros(0)
