"""Capsule network with routing-by-agreement over a 2-D feature map.

Layout: conv1 (relu) -> conv2 -> primary capsules (squash) -> optional
instantiation-parameter mask -> prediction vectors ``W_ij u_i`` -> dynamic
routing -> class capsules, scored by their Euclidean length.  A three-layer
decoder reconstructs the pooled input feature vector from the class
capsules with all but one row masked out.

With ``head="cnn-ablation"`` the capsule stages are replaced by a flattened
conv2 activation (relu) and a linear softmax classifier.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DimensionError, ParameterError
from .tensor import Tensor

HEADS = ("capsule", "cnn-ablation")


@dataclass
class CapsNetConfig:
    input_frames: int = 96
    input_dims: int = 120
    conv1_channels: int = 8
    conv1_kernel: int = 9
    conv1_stride: int = 1
    conv2_channels: int = 8
    conv2_kernel: int = 9
    conv2_stride: int = 2
    capsule_dim: int = 8
    num_classes: int = 6
    class_capsule_dim: int = 16
    routing_iters: int = 3
    first_stage_width: int = 1024
    decoder_widths: tuple[int, int] = (512, 1024)
    m_plus: float = 0.9
    m_minus: float = 0.1
    lam: float = 0.5
    w_rec: float = 0.0005
    head: str = "capsule"
    reconstruct: str = "pooled"

    def __post_init__(self):
        self.decoder_widths = tuple(int(w) for w in self.decoder_widths)
        positive = [self.input_frames, self.input_dims, self.conv1_channels, self.conv1_kernel,
                    self.conv1_stride, self.conv2_channels, self.conv2_kernel, self.conv2_stride,
                    self.capsule_dim, self.class_capsule_dim, self.first_stage_width, *self.decoder_widths]
        if min(positive) < 1:
            raise ParameterError("capsule network sizes must be positive")
        if self.routing_iters < 1:
            raise ParameterError("routing_iters must be >= 1")
        if self.num_classes < 2:
            raise ParameterError("num_classes must be >= 2")
        if self.conv2_channels % self.capsule_dim:
            raise ParameterError("conv2_channels must be a multiple of capsule_dim")
        if self.head not in HEADS:
            raise ParameterError(f"head must be one of {HEADS}")
        if self.reconstruct != "pooled":
            raise ParameterError("only pooled-feature reconstruction is implemented")
        if not 0 < self.m_minus < self.m_plus < 1:
            raise ParameterError("margins must satisfy 0 < m_minus < m_plus < 1")
        if min(self.conv1_map) < 1 or min(self.conv2_map) < 1:
            raise ParameterError("input map is too small for the convolution kernels")

    @property
    def conv1_map(self) -> tuple[int, int]:
        k, s = self.conv1_kernel, self.conv1_stride
        return (self.input_frames - k) // s + 1, (self.input_dims - k) // s + 1

    @property
    def conv2_map(self) -> tuple[int, int]:
        h, w = self.conv1_map
        k, s = self.conv2_kernel, self.conv2_stride
        return (h - k) // s + 1, (w - k) // s + 1

    @property
    def conv2_width(self) -> int:
        """Flattened conv2 activation size, the realised first-stage width."""
        h, w = self.conv2_map
        return h * w * self.conv2_channels

    @property
    def num_primary(self) -> int:
        h, w = self.conv2_map
        return h * w * (self.conv2_channels // self.capsule_dim)

    def check_first_stage(self) -> bool:
        """Warn when the realised first-stage width is more than 2x off the nominal one."""
        ratio = self.conv2_width / self.first_stage_width
        if ratio > 2 or ratio < 0.5:
            warnings.warn(f"flattened conv2 width {self.conv2_width} deviates from the nominal "
                          f"first-stage width {self.first_stage_width} by {ratio:.1f}x",
                          stacklevel=2)
            return False
        return True


@dataclass
class RoutingState:
    logits: np.ndarray     # b_ij, (..., children, parents)
    couplings: np.ndarray  # c_ij, softmax of b over parents
    trace: list[dict[str, np.ndarray]] = field(default_factory=list)


def squash(s: Tensor, axis: int = -1) -> Tensor:
    """(|s|^2 / (1 + |s|^2)) * s / |s| along ``axis``; the zero vector maps to zero."""
    s = T.as_tensor(s)
    q = (s.data * s.data).sum(axis=axis, keepdims=True)
    r = np.sqrt(q)
    scale = r / (1.0 + q)
    out = s.data * scale

    def _backward(g):
        dot = (s.data * g).sum(axis=axis, keepdims=True)
        safe = np.where(r > 0, r, 1.0)
        coef = np.where(r > 0, (1.0 - q) / (safe * (1.0 + q) ** 2), 0.0)
        return (scale * g + coef * dot * s.data,)

    return Tensor._result(out, (s,), "squash", _backward)


def predict_parents(u: Tensor, W: Tensor) -> Tensor:
    """Prediction vectors u_hat[..., i, j, :] = W[i, j] @ u[..., i, :].

    ``u`` is (children, n) or (batch, children, n); ``W`` is
    (children, parents, d, n).
    """
    u, W = T.as_tensor(u), T.as_tensor(W)
    if W.ndim != 4 or u.shape[-2:] != (W.shape[0], W.shape[3]):
        raise DimensionError(f"predict_parents: capsules {u.shape} incompatible with W {W.shape}")
    kids, parents, d, n = W.shape
    single = u.ndim == 2
    cols = u.reshape(1, kids, n) if single else u
    bsz = cols.shape[0]
    # per child: (parents*d, n) @ (n, batch)
    prod = T.bmm(W.reshape(kids, parents * d, n), cols.transpose(1, 2, 0))
    out = prod.reshape(kids, parents, d, bsz).transpose(3, 0, 1, 2)
    return out.reshape(kids, parents, d) if single else out


def route(u_hat: Tensor, iters: int = 3, record: bool = False) -> tuple[Tensor, RoutingState]:
    """Routing by agreement.

    ``u_hat`` is (children, parents, d) or (batch, children, parents, d).
    Logits start at zero; the agreement update is skipped after the final
    iteration.  Gradients flow through the whole unrolled loop.
    """
    if iters < 1:
        raise ParameterError("routing needs at least one iteration")
    u_hat = T.as_tensor(u_hat)
    batched = u_hat.ndim == 4
    if not batched:
        u_hat = u_hat.reshape((1,) + u_hat.shape)
    bsz, children, parents, _ = u_hat.shape
    b: Tensor = T.zeros((bsz, children, parents))
    trace: list[dict[str, np.ndarray]] = []
    for it in range(iters):
        c = T.softmax(b, axis=2)
        s = T.einsum("bij,bijd->bjd", c, u_hat)
        v = squash(s)
        if record:
            trace.append({"b": b.data.copy(), "c": c.data.copy(), "s": s.data.copy(), "v": v.data.copy()})
        if it < iters - 1:
            b = b + T.einsum("bijd,bjd->bij", u_hat, v)
    if not batched:
        v = v.reshape(v.shape[1:])
        state = RoutingState(b.data[0], c.data[0], [{k: a[0] for k, a in t.items()} for t in trace])
    else:
        state = RoutingState(b.data, c.data, trace)
    return v, state


def classify(v) -> tuple[int | np.ndarray, np.ndarray]:
    """Class = argmax of capsule lengths (lowest index on ties)."""
    data = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=float)
    scores = np.sqrt((data * data).sum(axis=-1))
    idx = np.argmax(scores, axis=-1)
    return (int(idx) if np.ndim(idx) == 0 else idx), scores


def margin_loss(v: Tensor, true_class, m_plus: float = 0.9, m_minus: float = 0.1,
                lam: float = 0.5) -> Tensor:
    """Sum over classes of T max(0, m+ - |v|)^2 + lam (1 - T) max(0, |v| - m-)^2.

    For a batch (B, K, d) the per-sample losses are averaged.
    """
    if not 0 < m_minus < m_plus < 1:
        raise ParameterError("margins must satisfy 0 < m_minus < m_plus < 1")
    v = T.as_tensor(v)
    lengths = T.norm(v, axis=-1)
    onehot = np.zeros(lengths.shape)
    labels = np.atleast_1d(np.asarray(true_class, dtype=int))
    if lengths.ndim == 1:
        onehot[labels[0]] = 1.0
    else:
        onehot[np.arange(len(labels)), labels] = 1.0
    present = T.square(T.relu(m_plus - lengths)) * Tensor(onehot)
    absent = T.square(T.relu(lengths - m_minus)) * Tensor(lam * (1.0 - onehot))
    total = (present + absent).sum()
    return total if lengths.ndim == 1 else total * (1.0 / lengths.shape[0])


def mask_rows(v: Tensor, keep) -> Tensor:
    """Zero every class-capsule row except ``keep`` (one index per sample)."""
    keep = np.atleast_1d(np.asarray(keep, dtype=int))
    m = np.zeros(v.shape)
    if v.ndim == 2:
        m[keep[0]] = 1.0
    else:
        m[np.arange(v.shape[0]), keep] = 1.0
    return v * Tensor(m)


@dataclass
class DecoderParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    w3: Tensor
    b3: Tensor

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, widths: tuple[int, int], out_dim: int) -> "DecoderParams":
        a, b = widths
        return cls(T.glorot_uniform(rng, (in_dim, a), in_dim, a), T.zeros(a, True),
                   T.glorot_uniform(rng, (a, b), a, b), T.zeros(b, True),
                   T.glorot_uniform(rng, (b, out_dim), b, out_dim), T.zeros(out_dim, True))

    def parameters(self) -> list[Tensor]:
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


def decode(v_masked: Tensor, params: DecoderParams) -> Tensor:
    """Two relu layers and a linear output; returns (batch, target_dim) or (target_dim,)."""
    v_masked = T.as_tensor(v_masked)
    single = v_masked.ndim == 2
    flat = v_masked.reshape(1, -1) if single else v_masked.reshape(v_masked.shape[0], -1)
    h = T.relu(T.linear(flat, params.w1, params.b1))
    h = T.relu(T.linear(h, params.w2, params.b2))
    out = T.linear(h, params.w3, params.b3)
    return out.reshape(-1) if single else out


def reconstruction_loss(recon: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=float)
    if recon.shape != target.shape:
        raise DimensionError(f"reconstruction {recon.shape} vs target {target.shape}")
    return T.square(recon - Tensor(target)).mean()


class CapsNet:
    """Parameters plus the forward pass for either head."""

    def __init__(self, cfg: CapsNetConfig, rng: np.random.Generator):
        self.cfg = cfg
        c = cfg
        k1, k2 = c.conv1_kernel, c.conv2_kernel
        self.conv1_w = T.glorot_uniform(rng, (c.conv1_channels, 1, k1, k1), k1 * k1,
                                        c.conv1_channels * k1 * k1)
        self.conv1_b = T.zeros(c.conv1_channels, True)
        self.conv2_w = T.glorot_uniform(rng, (c.conv2_channels, c.conv1_channels, k2, k2),
                                        c.conv1_channels * k2 * k2, c.conv2_channels * k2 * k2)
        self.conv2_b = T.zeros(c.conv2_channels, True)
        if c.head == "capsule":
            n, d, kids = c.capsule_dim, c.class_capsule_dim, c.num_primary
            # fan-in counts every child feeding a parent so s_j starts unsaturated
            self.W = T.glorot_uniform(rng, (kids, c.num_classes, d, n), kids * n, d)
            self.decoder = DecoderParams.init(rng, c.num_classes * d, c.decoder_widths, c.input_dims)
        else:
            width = c.conv2_width
            self.fc_w = T.glorot_uniform(rng, (width, c.num_classes), width, c.num_classes)
            self.fc_b = T.zeros(c.num_classes, True)

    def named_parameters(self) -> dict[str, Tensor]:
        out = {"conv1/w": self.conv1_w, "conv1/b": self.conv1_b,
               "conv2/w": self.conv2_w, "conv2/b": self.conv2_b}
        if self.cfg.head == "capsule":
            out["caps/W"] = self.W
            for name, p in zip(("w1", "b1", "w2", "b2", "w3", "b3"), self.decoder.parameters()):
                out[f"decoder/{name}"] = p
        else:
            out["fc/w"] = self.fc_w
            out["fc/b"] = self.fc_b
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    # -- stages ----------------------------------------------------------------

    @staticmethod
    def _conv(x: Tensor, w: Tensor, b: Tensor, stride: int) -> Tensor:
        y = T.conv2d(x, w, stride)
        bias = T.broadcast_to(b.reshape(1, -1, 1, 1), y.shape)
        return y + bias

    def conv_features(self, x) -> Tensor:
        """(B, frames, dims) input map -> conv2 pre-activation (B, C2, H2, W2)."""
        x = T.as_tensor(x)
        if x.ndim == 3:
            x = x.reshape(x.shape[0], 1, x.shape[1], x.shape[2])
        h = T.relu(self._conv(x, self.conv1_w, self.conv1_b, self.cfg.conv1_stride))
        return self._conv(h, self.conv2_w, self.conv2_b, self.cfg.conv2_stride)

    def primary_capsules(self, x) -> Tensor:
        """Squashed primary capsules (B, num_primary, capsule_dim)."""
        y = self.conv_features(x)
        bsz, ch, hh, ww = y.shape
        n = self.cfg.capsule_dim
        u = y.reshape(bsz, ch // n, n, hh, ww).transpose(0, 1, 3, 4, 2)
        return squash(u.reshape(bsz, (ch // n) * hh * ww, n))

    def forward_from_primary(self, u: Tensor, mask=None) -> tuple[Tensor, RoutingState]:
        if mask is not None:
            from .compress import apply_mask
            u = apply_mask(u, mask)
        u_hat = predict_parents(u, self.W)
        return route(u_hat, self.cfg.routing_iters)

    def class_capsules(self, x, mask=None) -> Tensor:
        return self.forward_from_primary(self.primary_capsules(x), mask)[0]

    def cnn_logits(self, x) -> Tensor:
        y = T.relu(self.conv_features(x))
        flat = y.reshape(y.shape[0], -1)
        return T.linear(flat, self.fc_w, self.fc_b)

    def scores(self, x, mask=None) -> np.ndarray:
        """Per-class scores: capsule lengths, or softmax probabilities for the ablation."""
        if self.cfg.head == "capsule":
            return classify(self.class_capsules(x, mask))[1]
        return T.softmax(self.cnn_logits(x), axis=-1).data

    def loss(self, x, labels, target=None, mask=None) -> tuple[Tensor, np.ndarray]:
        """Training loss and per-sample scores for one batch."""
        c = self.cfg
        if c.head == "cnn-ablation":
            logits = self.cnn_logits(x)
            return T.cross_entropy(logits, labels), T.softmax(logits, axis=-1).data
        v = self.class_capsules(x, mask)
        loss = margin_loss(v, labels, c.m_plus, c.m_minus, c.lam)
        if target is not None and c.w_rec > 0:
            recon = decode(mask_rows(v, labels), self.decoder)
            loss = loss + reconstruction_loss(recon, target) * c.w_rec
        return loss, classify(v)[1]
