"""Special functions and seeded random streams.

``ln_gamma`` and ``probit`` delegate to ``math.lgamma`` / ``scipy.special``;
the test-suite checks both against independent oracles. Gaussian draws use
the Marsaglia polar transform on uniforms from a counter-based Philox stream.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special as _sp


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *stream)``.

    Distinct stream ids give independent streams, so work split across
    samples or cells does not depend on scheduling order.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def ln_gamma(x):
    """Natural log of the Gamma function for ``x > 0`` (scalar or array)."""
    if np.ndim(x) == 0:
        x = float(x)
        if not x > 0:
            raise ValueError(f"ln_gamma domain error: x={x} must be > 0")
        return math.lgamma(x)
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(arr > 0):
        raise ValueError("ln_gamma domain error: all entries must be > 0")
    return _sp.gammaln(arr)


def probit(p):
    """Inverse standard normal CDF on the open interval (0, 1)."""
    arr = np.asarray(p, dtype=np.float64)
    if not np.all((arr > 0) & (arr < 1)):
        raise ValueError(f"probit domain error: p must lie in (0, 1), got {p}")
    out = _sp.ndtri(arr)
    return float(out) if np.ndim(p) == 0 else out


def sample_normal(rng: np.random.Generator, size=None):
    """Standard normal draws via the polar transform of uniform pairs."""
    n = 1 if size is None else int(np.prod(size))
    out = np.empty(n)
    filled = 0
    while filled < n:
        need = n - filled
        # acceptance rate is pi/4 and each accepted pair yields two values
        m = need // 2 + need // 4 + 8
        u = rng.uniform(-1.0, 1.0, size=(m, 2))
        s = u[:, 0] ** 2 + u[:, 1] ** 2
        ok = (s > 0.0) & (s < 1.0)
        u, s = u[ok], s[ok]
        z = (u * np.sqrt(-2.0 * np.log(s) / s)[:, None]).ravel()
        take = min(z.size, need)
        out[filled:filled + take] = z[:take]
        filled += take
    if size is None:
        return float(out[0])
    return out.reshape(size)
