"""Exact Polya-Gamma sampling for integer shape parameters.

PG(b, c) with integer b is drawn as the sum of b independent PG(1, c)
variables, and PG(1, c) = J*(1, |c|/2) / 4 where J* is sampled by the
alternating-series accept/reject method with truncation point 0.64.
The sampler is vectorised: one call draws a whole sweep's worth of
latent variables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_ndtr

TRUNC = 0.64
MAX_REJECTION_ITERS = 10**6


@dataclass(frozen=True)
class PGParams:
    """Parameters of PG(b, c): integer count b >= 1 and real tilt c."""

    b: int
    c: float

    def __post_init__(self):
        if int(self.b) != self.b or self.b < 1:
            raise ValueError(f"b must be a positive integer, got {self.b!r}")
        if not np.isfinite(self.c):
            raise ValueError("c must be finite")


def pg_mean(params: PGParams) -> float:
    """E[PG(b, c)] = (b / 2c) tanh(c / 2), with the analytic c -> 0 limit."""
    b, c = params.b, params.c
    if abs(c) < 1e-4:
        return b / 4.0 * (1.0 - c * c / 12.0 + c**4 / 120.0)
    return b / (2.0 * c) * np.tanh(c / 2.0)


def pg_variance(params: PGParams) -> float:
    """Var[PG(b, c)] = (b / 4c^3)(sinh c - c) / cosh^2(c / 2), limit b/24."""
    b, c = params.b, params.c
    if abs(c) < 1e-2:
        # sinh(c) - c cancels catastrophically near zero; series instead
        return b * (1.0 / 24.0 - c * c / 120.0 + 17.0 * c**4 / 13440.0)
    return b / (4.0 * c**3) * (np.sinh(c) - c) / np.cosh(c / 2.0) ** 2


def sample_pg(params: PGParams, rng: np.random.Generator) -> float:
    """One draw from PG(b, c)."""
    draws = sample_pg_vector(
        np.array([params.b]), np.array([params.c], dtype=float), rng
    )
    return float(draws[0])


def sample_pg_vector(b: np.ndarray, c: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Independent draws from PG(b_k, c_k) for each k."""
    b = np.asarray(b, dtype=np.int64)
    c = np.asarray(c, dtype=float)
    if b.shape != c.shape:
        raise ValueError("b and c must have matching shapes")
    if np.any(b < 1):
        raise ValueError("b must be positive")
    z = np.repeat(np.abs(c) * 0.5, b)
    unit_draws = 0.25 * _sample_jstar(z, rng)
    offsets = np.concatenate([[0], np.cumsum(b)[:-1]])
    return np.add.reduceat(unit_draws, offsets)


def _sample_jstar(z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Vectorised J*(1, z) draws, z >= 0."""
    out = np.empty_like(z)
    fz = np.pi**2 / 8.0 + z * z / 2.0
    exp_branch = _exp_branch_prob(z, fz)
    pending = np.arange(z.size)
    iters = 0
    while pending.size:
        iters += 1
        if iters > MAX_REJECTION_ITERS:
            raise RuntimeError("PG rejection sampler failed to terminate")
        k = pending.size
        use_exp = rng.random(k) < exp_branch[pending]
        x = np.empty(k)
        n_exp = int(use_exp.sum())
        if n_exp:
            x[use_exp] = TRUNC + rng.exponential(size=n_exp) / fz[pending[use_exp]]
        if n_exp < k:
            x[~use_exp] = _trunc_inv_gauss(z[pending[~use_exp]], rng)
        accepted = _series_accept(x, rng)
        out[pending[accepted]] = x[accepted]
        pending = pending[~accepted]
    return out


def _exp_branch_prob(z: np.ndarray, fz: np.ndarray) -> np.ndarray:
    """p / (p + q): mass of the exponential proposal branch, in log space."""
    sqrt_t = np.sqrt(TRUNC)
    log_p = np.log(np.pi / 2.0) - np.log(fz) - fz * TRUNC
    log_ig_cdf = np.logaddexp(
        log_ndtr((TRUNC * z - 1.0) / sqrt_t),
        2.0 * z + log_ndtr(-(TRUNC * z + 1.0) / sqrt_t),
    )
    log_q = np.log(2.0) - z + log_ig_cdf
    return expit(log_p - log_q)


def _trunc_inv_gauss(z: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Gaussian(1/z, 1) draws restricted to (0, TRUNC]."""
    x = np.empty_like(z)
    big_mean = z < 1.0 / TRUNC

    pending = np.nonzero(big_mean)[0]
    iters = 0
    while pending.size:
        iters += 1
        if iters > MAX_REJECTION_ITERS:
            raise RuntimeError("truncated inverse-Gaussian sampler stalled")
        k = pending.size
        e1 = rng.exponential(size=k)
        e2 = rng.exponential(size=k)
        candidate = TRUNC / (1.0 + TRUNC * e1) ** 2
        ok = (e1 * e1 <= 2.0 * e2 / TRUNC) & (
            rng.random(k) <= np.exp(-0.5 * z[pending] ** 2 * candidate)
        )
        x[pending[ok]] = candidate[ok]
        pending = pending[~ok]

    pending = np.nonzero(~big_mean)[0]
    iters = 0
    while pending.size:
        iters += 1
        if iters > MAX_REJECTION_ITERS:
            raise RuntimeError("truncated inverse-Gaussian sampler stalled")
        k = pending.size
        mu = 1.0 / z[pending]
        y = rng.standard_normal(k) ** 2
        mu_y = mu * y
        candidate = mu + 0.5 * mu * mu_y - 0.5 * mu * np.sqrt(4.0 * mu_y + mu_y * mu_y)
        candidate = np.maximum(candidate, 1e-300)
        flip = rng.random(k) > mu / (mu + candidate)
        candidate[flip] = mu[flip] ** 2 / candidate[flip]
        ok = candidate <= TRUNC
        x[pending[ok]] = candidate[ok]
        pending = pending[~ok]
    return x


def _series_coef(n: int, x: np.ndarray) -> np.ndarray:
    """n-th coefficient of the alternating series bounding the J* density."""
    k = (n + 0.5) * np.pi
    small = x <= TRUNC
    out = np.empty_like(x)
    xs = x[small]
    out[small] = np.exp(
        -1.5 * (np.log(np.pi / 2.0) + np.log(xs)) + np.log(k) - 2.0 * (n + 0.5) ** 2 / xs
    )
    xl = x[~small]
    out[~small] = k * np.exp(-0.5 * k * k * xl)
    return out


def _series_accept(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Alternating-series accept/reject decision per proposal."""
    s = _series_coef(0, x)
    y = rng.random(x.size) * s
    accept = np.zeros(x.size, dtype=bool)
    undecided = np.arange(x.size)
    n = 0
    while undecided.size:
        n += 1
        if n > MAX_REJECTION_ITERS:
            raise RuntimeError("alternating series failed to bracket")
        coef = _series_coef(n, x[undecided])
        if n % 2 == 1:
            s[undecided] -= coef
            hit = y[undecided] <= s[undecided]
            accept[undecided[hit]] = True
            undecided = undecided[~hit]
        else:
            s[undecided] += coef
            miss = y[undecided] > s[undecided]
            undecided = undecided[~miss]
    return accept
