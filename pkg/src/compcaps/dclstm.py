"""Dual-channel two-layer LSTM over per-frame pitch (M) and energy (N) series.

The final hidden state of each channel's second layer is concatenated and
fed to a softmax head.  Besides classification this module ranks capsule
instantiation parameters for elimination (:func:`elimination_list`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, ParameterError
from .tensor import Tensor

GATES = ("input", "forget", "output", "candidate")


@dataclass
class LstmLayerParams:
    """Gate weights packed as [input | forget | output | candidate] blocks."""

    w_x: Tensor  # input_dim x 4*hidden
    w_h: Tensor  # hidden x 4*hidden
    b: Tensor    # 4*hidden

    @property
    def input_dim(self) -> int:
        return self.w_x.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[0]

    @classmethod
    def init(cls, rng: np.random.Generator, input_dim: int, hidden_dim: int) -> "LstmLayerParams":
        w_x = T.glorot_uniform(rng, (input_dim, 4 * hidden_dim), input_dim, hidden_dim)
        w_h = T.glorot_uniform(rng, (hidden_dim, 4 * hidden_dim), hidden_dim, hidden_dim)
        b = np.zeros(4 * hidden_dim)
        b[hidden_dim:2 * hidden_dim] = 1.0
        return cls(w_x, w_h, Tensor(b, requires_grad=True))

    @classmethod
    def zeros(cls, input_dim: int, hidden_dim: int) -> "LstmLayerParams":
        return cls(T.zeros((input_dim, 4 * hidden_dim), True), T.zeros((hidden_dim, 4 * hidden_dim), True),
                   T.zeros(4 * hidden_dim, True))

    def parameters(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.b]


def lstm_step(params: LstmLayerParams, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One LSTM step on a batch: ``x_t`` (B, in), states (B, hidden)."""
    h = params.hidden_dim
    if x_t.ndim != 2 or x_t.shape[1] != params.input_dim:
        raise DimensionError(f"lstm_step: input {x_t.shape} does not match input_dim {params.input_dim}")
    if h_prev.shape != (x_t.shape[0], h) or c_prev.shape != h_prev.shape:
        raise DimensionError("lstm_step: state shape mismatch")
    z = T.matmul(x_t, params.w_x) + T.matmul(h_prev, params.w_h)
    z = z + T.broadcast_to(params.b, z.shape)
    i = T.sigmoid(z[:, :h])
    f = T.sigmoid(z[:, h:2 * h])
    o = T.sigmoid(z[:, 2 * h:3 * h])
    g = T.tanh(z[:, 3 * h:])
    c_t = f * c_prev + i * g
    h_t = o * T.tanh(c_t)
    return h_t, c_t


def forward_channel(layer1: LstmLayerParams, layer2: LstmLayerParams, series) -> Tensor:
    """Run both layers over ``series`` (B, steps, in) and return the last layer-2 state."""
    x = series.data if isinstance(series, Tensor) else np.asarray(series, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] == 0:
        raise ContractError("forward_channel needs a non-empty (batch, steps, dims) series")
    batch, steps, _ = x.shape
    h1 = c1 = T.zeros((batch, layer1.hidden_dim))
    h2 = c2 = T.zeros((batch, layer2.hidden_dim))
    src = series if isinstance(series, Tensor) and series.ndim == 3 else None
    for t in range(steps):
        x_t = src[:, t, :] if src is not None else Tensor(x[:, t, :])
        h1, c1 = lstm_step(layer1, x_t, h1, c1)
        h2, c2 = lstm_step(layer2, h1, h2, c2)
    return h2


def fuse_and_classify(o_m: Tensor, o_n: Tensor, head_w: Tensor, head_b: Tensor | None = None) -> Tensor:
    """Softmax class probabilities from the concatenated channel outputs."""
    return T.softmax(fuse_logits(o_m, o_n, head_w, head_b), axis=-1)


def fuse_logits(o_m: Tensor, o_n: Tensor, head_w: Tensor, head_b: Tensor | None = None) -> Tensor:
    if o_m.shape != o_n.shape:
        raise DimensionError("fuse: channel outputs must have equal hidden size")
    squeeze = o_m.ndim == 1
    if squeeze:
        o_m, o_n = o_m.reshape(1, -1), o_n.reshape(1, -1)
    fused = T.concat([o_m, o_n], axis=1)
    logits = T.linear(fused, head_w, head_b)
    return logits.reshape(-1) if squeeze else logits


@dataclass
class DcLstmConfig:
    hidden_dim: int = 64
    num_classes: int = 6
    pitch_dim: int = 1
    energy_dim: int = 1

    def __post_init__(self):
        if self.hidden_dim < 1 or self.num_classes < 2:
            raise ParameterError("hidden_dim >= 1 and num_classes >= 2 required")


class DcLstm:
    """Pitch channel M and energy channel N, each two LSTM layers deep."""

    def __init__(self, cfg: DcLstmConfig, rng: np.random.Generator):
        self.cfg = cfg
        h = cfg.hidden_dim
        self.m1 = LstmLayerParams.init(rng, cfg.pitch_dim, h)
        self.m2 = LstmLayerParams.init(rng, h, h)
        self.n1 = LstmLayerParams.init(rng, cfg.energy_dim, h)
        self.n2 = LstmLayerParams.init(rng, h, h)
        self.head_w = T.glorot_uniform(rng, (2 * h, cfg.num_classes), 2 * h, cfg.num_classes)
        self.head_b = T.zeros(cfg.num_classes, requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {}
        for name in ("m1", "m2", "n1", "n2"):
            layer = getattr(self, name)
            out.update({f"{name}/w_x": layer.w_x, f"{name}/w_h": layer.w_h, f"{name}/b": layer.b})
        out["head/w"] = self.head_w
        out["head/b"] = self.head_b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def fused(self, pitch, energy) -> tuple[Tensor, Tensor]:
        return forward_channel(self.m1, self.m2, pitch), forward_channel(self.n1, self.n2, energy)

    def logits(self, pitch, energy) -> Tensor:
        o_m, o_n = self.fused(pitch, energy)
        return fuse_logits(o_m, o_n, self.head_w, self.head_b)

    def probabilities(self, pitch, energy) -> np.ndarray:
        return T.softmax(self.logits(pitch, energy), axis=-1).data


def elimination_list(variance_profile, rate: float) -> tuple[int, ...]:
    """Indices of the ``floor(rate * n)`` lowest-variance instantiation parameters.

    Ties go to the lower index.  The result is sorted ascending.
    """
    v = np.asarray(variance_profile, dtype=float).ravel()
    if v.size < 1:
        raise ParameterError("variance profile must be non-empty")
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"compression rate must lie in [0, 1), got {rate}")
    count = eliminated_count(rate, v.size)
    order = np.argsort(v, kind="stable")
    return tuple(sorted(int(i) for i in order[:count]))


def eliminated_count(rate: float, n: int) -> int:
    # the epsilon absorbs products such as 0.29 * 100 = 28.999999999999996
    return int(np.floor(rate * n + 1e-9))
