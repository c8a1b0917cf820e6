"""Expected embedding distances as a function of the degree of freedom.

A difference vector with d degrees of freedom is x = yP, where y holds d
leading i.i.d. N(0, 1) entries followed by zeros and P is orthogonal. The
sweep measures the mean l1, l2 and squared-l2 norms of x for every d.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import metric as M
from .special import ln_gamma, make_rng, sample_normal

ORTHOS = ("haar", "signedperm", "identity")
KINDS = ("l1", "l2", "sqeuclid")
STREAM_SWEEP = 31
STREAM_PAIRS = 32


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian matrix with diag(R) > 0."""
    if n < 1:
        raise ValueError("n must be >= 1")
    q, r = np.linalg.qr(sample_normal(rng, (n, n)))
    return q * np.sign(np.diag(r))


def signed_permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    p = np.zeros((n, n))
    p[np.arange(n), rng.permutation(n)] = rng.choice((-1.0, 1.0), size=n)
    return p


def dof_sample(n: int, d: int, P: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if not 1 <= d <= n:
        raise ValueError(f"degree of freedom must satisfy 1 <= d <= n={n}, got {d}")
    if P.shape != (n, n):
        raise ValueError(f"P must be {n}x{n}, got {P.shape}")
    y = np.zeros(n)
    y[:d] = sample_normal(rng, d)
    return y @ P


def chi_mean_analytic(d: float) -> float:
    """Mean of the chi distribution with d degrees of freedom."""
    if d < 1:
        raise ValueError("d must be >= 1")
    return math.sqrt(2.0) * math.exp(ln_gamma((d + 1) / 2) - ln_gamma(d / 2))


def _draw(ortho: str, n: int, d: int, trials: int, rng: np.random.Generator, explicit: bool) -> np.ndarray:
    """``trials`` rows of x = yP, a fresh P per row."""
    y = sample_normal(rng, (trials, d))
    if ortho == "identity":
        x = np.zeros((trials, n))
        x[:, :d] = y
        return x
    if ortho == "signedperm":
        # only the first d rows of P are touched: +-e_{pi(i)}
        cols = np.argsort(rng.random((trials, n)), axis=1)[:, :d]
        signs = rng.choice((-1.0, 1.0), size=(trials, d))
        x = np.zeros((trials, n))
        np.put_along_axis(x, cols, y * signs, axis=1)
        return x
    if explicit:
        # first d rows of a Haar P = transposed thin-QR factor of an n x d Gaussian
        q, r = np.linalg.qr(sample_normal(rng, (trials, n, d)))
        q = q * np.sign(np.diagonal(r, axis1=1, axis2=2))[:, None, :]
        return np.einsum("td,tnd->tn", y, q)
    # yP for Haar P is |y| times a uniform unit vector; same law, no QR
    g = sample_normal(rng, (trials, n))
    return g * (np.linalg.norm(y, axis=1) / np.linalg.norm(g, axis=1))[:, None]


def norms(x: np.ndarray) -> dict[str, np.ndarray]:
    sq = np.einsum("ij,ij->i", x, x)
    return {"l1": np.abs(x).sum(axis=1), "l2": np.sqrt(sq), "sqeuclid": sq}


@dataclass(frozen=True)
class SimConfig:
    n: int = 80
    d_values: tuple[int, ...] = tuple(range(1, 81))
    trials: int = 20000
    ortho: str = "haar"
    rescale_at_80: bool = False
    seed: int = 0
    explicit_qr: bool = False

    def __post_init__(self):
        if self.ortho not in ORTHOS:
            raise ValueError(f"unknown orthogonal family {self.ortho!r}; choose one of {', '.join(ORTHOS)}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.d_values:
            raise ValueError("d_values is empty")
        bad = [d for d in self.d_values if not 1 <= d <= self.n]
        if bad:
            raise ValueError(f"d values outside [1, {self.n}]: {bad}")
        if self.rescale_at_80 and self.n not in self.d_values:
            raise ValueError(f"rescaling needs the d={self.n} cell in d_values")


@dataclass
class SweepResult:
    config: SimConfig
    d_values: np.ndarray
    mean: dict[str, np.ndarray]
    stderr: dict[str, np.ndarray]
    var: dict[str, np.ndarray]
    scale: dict[str, float] = field(default_factory=dict)


def sweep_expected_distance(cfg: SimConfig) -> SweepResult:
    """Mean and standard error of each distance of x = yP from 0, for every d.

    Each d uses its own random stream, so cells are independent of order.
    With ``rescale_at_80`` every kind is multiplied by n / mean(d = n).
    """
    ds = np.array(cfg.d_values)
    mean = {k: np.empty(ds.size) for k in KINDS}
    se = {k: np.empty(ds.size) for k in KINDS}
    var = {k: np.empty(ds.size) for k in KINDS}
    code = ORTHOS.index(cfg.ortho)
    chunk = 2000 if cfg.explicit_qr else cfg.trials
    for j, d in enumerate(ds):
        rng = make_rng(cfg.seed, STREAM_SWEEP, code, int(d))
        parts = {k: [] for k in KINDS}
        for start in range(0, cfg.trials, chunk):
            x = _draw(cfg.ortho, cfg.n, int(d), min(chunk, cfg.trials - start), rng, cfg.explicit_qr)
            for k, v in norms(x).items():
                parts[k].append(v)
        for k in KINDS:
            v = np.concatenate(parts[k])
            mean[k][j] = v.mean()
            var[k][j] = v.var(ddof=1) if v.size > 1 else 0.0
            se[k][j] = math.sqrt(var[k][j] / v.size)
    scale = {}
    if cfg.rescale_at_80:
        at = int(np.flatnonzero(ds == cfg.n)[0])
        for k in KINDS:
            scale[k] = cfg.n / mean[k][at]
            mean[k] *= scale[k]
            se[k] *= scale[k]
            var[k] *= scale[k] ** 2
    return SweepResult(cfg, ds, mean, se, var, scale)


def write_sweep_csv(res: SweepResult, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", "dist_kind", "mean", "stderr", "trials", "ortho", "rescaled"])
        for j, d in enumerate(res.d_values):
            for k in KINDS:
                w.writerow([int(d), k, repr(float(res.mean[k][j])), repr(float(res.stderr[k][j])),
                            res.config.trials, res.config.ortho, int(res.config.rescale_at_80)])


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - resid @ resid / np.sum((y - y.mean()) ** 2)
    return float(slope), float(intercept), float(r2)


def independent_pair_distances(space: M.EmbeddingSpace, trials: int, rng: np.random.Generator) -> np.ndarray:
    """Distances between pairs of rescaled independent N(0, 1)^n vectors."""
    u = M.rescaled_embed(space, sample_normal(rng, (trials, space.n)))
    v = M.rescaled_embed(space, sample_normal(rng, (trials, space.n)))
    return M.distance(space, u, v)


def independent_pair_check(space: M.EmbeddingSpace, n: int, trials: int, rng: np.random.Generator) -> float:
    if space.n != n:
        space = M.EmbeddingSpace(space.kind, n)
    return float(independent_pair_distances(space, trials, rng).mean())
