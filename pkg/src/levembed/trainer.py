"""Siamese training: both sequences of a pair go through one shared network."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import metric as M
from . import tensor as T
from .channel import Dataset
from .nets import EmbeddingNet
from .seq import one_hot_batch
from .special import make_rng

log = logging.getLogger(__name__)

STREAM_SHUFFLE = 21
OPTIMIZERS = ("adam", "sgd")


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass(frozen=True)
class TrainConfig:
    space: M.EmbeddingSpace
    loss: M.LossKind
    epochs: int = 10
    batch_size: int = 128
    optimizer: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; choose one of {', '.join(OPTIMIZERS)}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")

    @property
    def adam(self) -> AdamHyper:
        return AdamHyper(self.lr, self.beta1, self.beta2, self.adam_eps)


@dataclass
class EpochReport:
    epoch: int
    loss: float
    seconds: float
    ae: float | None = None
    ae_h: float | None = None
    oa: float | None = None


def adam_step(params: dict, grads: dict, state: AdamState, hyper: AdamHyper) -> tuple[dict, AdamState]:
    """Bias-corrected Adam update. Inputs are left untouched; new arrays are returned."""
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise T.ShapeError(f"adam_step: grad shape {g.shape} != param shape {p.shape} for {k}")
        m = hyper.beta1 * state.m.get(k, 0.0) + (1 - hyper.beta1) * g
        v = hyper.beta2 * state.v.get(k, 0.0) + (1 - hyper.beta2) * g * g
        new_p[k] = p - hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(t, new_m, new_v)


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    return {k: p - lr * grads[k] for k, p in params.items()}


def pair_distances(model: EmbeddingNet, s_batch, t_batch, space: M.EmbeddingSpace, train: bool = True) -> T.Tensor:
    """Approximate distances d_hat for a batch of pairs.

    Both sides are stacked into one forward pass through the single parameter
    set, rescaled once, then split and compared.
    """
    s_batch = np.asarray(s_batch, dtype=np.float64)
    t_batch = np.asarray(t_batch, dtype=np.float64)
    if s_batch.shape != t_batch.shape:
        raise T.ShapeError(f"pair_distances: s batch {s_batch.shape} vs t batch {t_batch.shape}")
    b = s_batch.shape[0]
    raw = model.forward(np.concatenate([s_batch, t_batch]), train=train)
    u = M.rescaled_embed(space, raw)
    return M.distance(space, u[:b], u[b:])


def batch_loss(model: EmbeddingNet, s_batch, t_batch, d, cfg: TrainConfig) -> T.Tensor:
    d_hat = pair_distances(model, s_batch, t_batch, cfg.space, train=True)
    return M.loss(cfg.loss, d_hat, d).mean()


def _check_compatible(model: EmbeddingNet, dataset: Dataset, cfg: TrainConfig) -> None:
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    if model.spec.input_len != dataset.padded_len:
        raise ValueError(
            f"model input_len {model.spec.input_len} != dataset padded_len {dataset.padded_len}"
        )
    if model.spec.embed_dim != cfg.space.n:
        raise ValueError(f"model embed_dim {model.spec.embed_dim} != space dimension {cfg.space.n}")


def train(model: EmbeddingNet, dataset: Dataset, cfg: TrainConfig, validation: Dataset | None = None,
          k: float | None = None, on_epoch=None) -> tuple[EmbeddingNet, list[EpochReport]]:
    """Optimise ``model`` in place on ``dataset``; returns it with one report per epoch.

    If ``validation`` is given, AE, AE_h and OA at threshold ``k`` (default
    n/2) are computed after every epoch. ``on_epoch`` is called with each
    report as soon as it is ready.
    """
    from .evaluation import evaluate_model

    _check_compatible(model, dataset, cfg)
    if cfg.loss.kind == "rechi2" and cfg.space.kind != "sqeuclid":
        log.warning("the rechi2 loss assumes squared Euclidean distances; with %s it is applied as is",
                    cfg.space.kind)
    samples = dataset.samples
    L = dataset.padded_len
    names = list(model.params)
    adam_state = AdamState()
    reports = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = np.arange(len(samples))
        if cfg.shuffle:
            order = make_rng(cfg.seed, STREAM_SHUFFLE, epoch).permutation(len(samples))
        total, count = 0.0, 0
        for bi, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [samples[i] for i in order[start:start + cfg.batch_size]]
            s = one_hot_batch([p.s for p in batch], L)
            t = one_hot_batch([p.t for p in batch], L)
            d = np.array([p.d for p in batch], dtype=np.float64)
            model.zero_grad()
            loss = batch_loss(model, s, t, d, cfg)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {bi}")
            loss.backward()
            params = {n: model.params[n].data for n in names}
            grads = {n: (model.params[n].grad if model.params[n].grad is not None
                         else np.zeros_like(params[n])) for n in names}
            if cfg.optimizer == "adam":
                params, adam_state = adam_step(params, grads, adam_state, cfg.adam)
            else:
                params = sgd_step(params, grads, cfg.lr)
            for n in names:
                model.params[n].data = params[n]
            total += value * len(batch)
            count += len(batch)
        report = EpochReport(epoch, total / count, time.perf_counter() - t0)
        if validation is not None and len(validation):
            m = evaluate_model(model, validation, cfg.space, k)
            report.ae, report.ae_h, report.oa = m.ae, m.ae_h, m.oa_at_k
        log.info("epoch %d loss %.6g (%.1fs)", epoch, report.loss, report.seconds)
        reports.append(report)
        if on_epoch is not None:
            on_epoch(report)
    model.zero_grad()
    return model, reports


def embed_batch(model: EmbeddingNet, seqs, space: M.EmbeddingSpace, batch_size: int = 256) -> np.ndarray:
    """Rescaled eval-mode embeddings, one row per sequence."""
    seqs = list(seqs)
    out = np.empty((len(seqs), model.spec.embed_dim))
    with T.no_grad():
        for start in range(0, len(seqs), batch_size):
            x = one_hot_batch(seqs[start:start + batch_size], model.spec.input_len)
            raw = model.forward(x, train=False)
            out[start:start + len(x)] = M.rescaled_embed(space, raw.data)
    return out
