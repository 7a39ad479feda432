"""Instantiation-parameter compression for capsule layers.

A mask ``D`` over the capsule dimension is 1 everywhere except at the
eliminated coordinates.  Multiplying every capsule by ``D`` closes those
coordinates entirely, which is equivalent to zeroing the matching columns of
every transformation matrix ``W_ij`` downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .dclstm import eliminated_count
from .errors import DimensionError, ParameterError
from .tensor import Tensor


@dataclass(frozen=True)
class CompressionMask:
    D: np.ndarray
    rate: float
    eliminated: tuple[int, ...]

    def __post_init__(self):
        n = self.D.size
        zeros = tuple(int(i) for i in np.flatnonzero(self.D == 0))
        if zeros != tuple(sorted(self.eliminated)):
            raise ParameterError("mask zeros do not match the eliminated index set")
        if not 0.0 <= self.rate < 1.0:
            raise ParameterError("compression rate must lie in [0, 1)")
        if len(zeros) != eliminated_count(self.rate, n):
            raise ParameterError(f"{len(zeros)} eliminated coordinates is inconsistent with "
                                 f"rate {self.rate} over {n} parameters")

    @property
    def n(self) -> int:
        return self.D.size

    @property
    def kept(self) -> int:
        return self.n - len(self.eliminated)


@dataclass(frozen=True)
class VarianceProfile:
    variances: np.ndarray
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ParameterError("a variance profile needs at least two samples")
        if np.any(self.variances < 0):
            raise ParameterError("variances must be non-negative")


def build_mask(elim, n: int, rate: float | None = None) -> CompressionMask:
    """0/1 mask of length ``n`` with zeros at ``elim``.

    ``rate`` defaults to ``len(elim) / n``; eliminating every coordinate is
    rejected because the rate must stay below 1.
    """
    elim = tuple(sorted({int(i) for i in elim}))
    if any(i < 0 or i >= n for i in elim):
        raise IndexError(f"eliminated index out of range for capsule dimension {n}")
    if len(elim) >= n:
        raise ParameterError("cannot eliminate every instantiation parameter")
    D = np.ones(n)
    D[list(elim)] = 0.0
    return CompressionMask(D, len(elim) / n if rate is None else float(rate), elim)


def apply_mask(u, mask: CompressionMask):
    """Multiply each capsule (last axis) by ``D``; accepts Tensors or arrays."""
    if u.shape[-1] != mask.n:
        raise DimensionError(f"capsule dimension {u.shape[-1]} does not match mask length {mask.n}")
    if isinstance(u, Tensor):
        return u * Tensor(np.broadcast_to(mask.D, u.shape))
    return np.asarray(u) * mask.D


def variance_profile(activations: np.ndarray, weights=None) -> VarianceProfile:
    """Per-coordinate variance of capsule activations (samples, capsules, n).

    Samples may be weighted; every capsule of a sample shares its weight.
    """
    a = np.asarray(activations, dtype=float)
    if a.ndim == 2:
        a = a[:, None, :]
    s = a.shape[0]
    w = np.ones(s) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (s,) or np.any(w < 0) or w.sum() <= 0:
        raise ParameterError("weights must be non-negative, one per sample, not all zero")
    flat = a.reshape(s, -1, a.shape[-1])
    ww = np.repeat(w, flat.shape[1])
    rows = flat.reshape(-1, a.shape[-1])
    mean = np.average(rows, axis=0, weights=ww)
    var = np.average((rows - mean) ** 2, axis=0, weights=ww)
    return VarianceProfile(var, s)


def compression_report(cfg, mask: CompressionMask) -> dict:
    """Transformation-matrix parameter counts before/after eliminating coordinates.

    Each eliminated input coordinate removes one column from every
    ``W_ij`` (children x parents x d x n), i.e. ``children*parents*d``
    multiply-accumulates.
    """
    if mask.n != cfg.capsule_dim:
        raise DimensionError("mask length must equal the primary capsule dimension")
    per_column = cfg.num_primary * cfg.num_classes * cfg.class_capsule_dim
    before = per_column * cfg.capsule_dim
    after = per_column * mask.kept
    return {"params_before": before, "params_after": after, "ratio": after / before}


def zero_weight_columns(W: Tensor, mask: CompressionMask) -> Tensor:
    """``W`` with the columns of eliminated coordinates set to zero."""
    return Tensor(W.data * mask.D) if isinstance(W, Tensor) else T.as_tensor(np.asarray(W) * mask.D)
