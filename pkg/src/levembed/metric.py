"""Embedding spaces, rescaling factors, approximate distances and losses.

A space's rescaling factor makes the expected distance between two
independent N(0, 1)^n embeddings equal ``n``. The chi-squared loss is the
negative base-2 log density of chi2(d) evaluated at the predicted distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .special import ln_gamma
from .tensor import Tensor

SPACES = ("l1", "l2", "sqeuclid")
LOSSES = ("mse", "mae", "rechi2")
LOG2E = 1.0 / math.log(2.0)


@dataclass(frozen=True)
class EmbeddingSpace:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in SPACES:
            raise ValueError(f"unknown embedding space {self.kind!r}; choose one of {', '.join(SPACES)}")
        if self.n < 1:
            raise ValueError(f"embedding dimension must be >= 1, got {self.n}")


@dataclass(frozen=True)
class LossKind:
    kind: str
    epsilon_dhat: float = 1e-6

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}; choose one of {', '.join(LOSSES)}")
        if not self.epsilon_dhat > 0:
            raise ValueError("epsilon_dhat must be positive")


def rescale_factor(space: EmbeddingSpace) -> float:
    if space.kind == "sqeuclid":
        return math.sqrt(2.0) / 2.0
    if space.kind == "l1":
        return math.sqrt(math.pi) / 2.0
    n = space.n
    return n * math.exp(ln_gamma(n / 2) - ln_gamma((n + 1) / 2)) / 2.0


def rescaled_embed(space: EmbeddingSpace, raw):
    """Multiply every element by the space's rescaling factor (Tensor or array)."""
    r = rescale_factor(space)
    return T.mul(raw, r) if isinstance(raw, Tensor) else np.asarray(raw) * r


def distance(space: EmbeddingSpace, u, v):
    """Row-wise distance between ``u`` and ``v`` of shape (..., n).

    Tensors in, Tensor out (differentiable); arrays in, array out.
    """
    if isinstance(u, Tensor) or isinstance(v, Tensor):
        u, v = T._lift(u), T._lift(v)
        if u.shape[-1:] != v.shape[-1:] or u.shape != v.shape:
            raise T.ShapeError(f"distance: dimension mismatch {u.shape} vs {v.shape}")
        diff = u - v
        if space.kind == "l1":
            return T.abs_(diff).sum(axis=-1)
        sq = T.square(diff).sum(axis=-1)
        return T.sqrt(sq) if space.kind == "l2" else sq
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"distance: dimension mismatch {u.shape} vs {v.shape}")
    diff = u - v
    if space.kind == "l1":
        return np.abs(diff).sum(axis=-1)
    sq = (diff * diff).sum(axis=-1)
    return np.sqrt(sq) if space.kind == "l2" else sq


def rechi2_value(dhat: float, d: float, eps: float = 1e-6) -> float:
    """Scalar chi-squared loss in bits, with ``dhat`` clamped to ``eps``."""
    if d <= 0:
        raise ValueError(f"rechi2 needs d >= 1, got {d}")
    dhat = max(float(dhat), eps)
    return d / 2 + ln_gamma(d / 2) * LOG2E - (d / 2 - 1) * math.log2(dhat) + dhat / 2 * LOG2E


def rechi2_nat(dhat: float, d: float, eps: float = 1e-6) -> float:
    """Same quantity in nats: -ln of the chi2(d) density at ``dhat``."""
    if d <= 0:
        raise ValueError(f"rechi2 needs d >= 1, got {d}")
    dhat = max(float(dhat), eps)
    return d / 2 * math.log(2.0) + ln_gamma(d / 2) - (d / 2 - 1) * math.log(dhat) + dhat / 2


def loss(kind: LossKind, d_hat, d) -> Tensor:
    """Per-pair loss; ``d_hat`` is a Tensor (or array) and ``d`` the true distances."""
    d_hat = T._lift(d_hat)
    d = np.asarray(d, dtype=np.float64)
    if kind.kind == "mse":
        return T.square(d_hat - d)
    if kind.kind == "mae":
        return T.abs_(d_hat - d)
    if np.any(d <= 0):
        raise ValueError("rechi2 needs every d >= 1")
    half = d / 2
    const = half + ln_gamma(half) * LOG2E
    clamped = T.clamp_min(d_hat, kind.epsilon_dhat)
    return const - (half - 1) * LOG2E * T.log(clamped) + clamped * (0.5 * LOG2E)
