"""Gibbs sampler for the spatial Bradley-Terry model.

Each sweep draws the Polya-Gamma latents for the active pairs, a blocked
multivariate-normal update for the rates, the signal-variance
hyperparameter, and finally resamples the unidentified level of the
rates from its marginal prior.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .comparisons import DesignMatrix, Tallies, design_matrix
from .polya_gamma import sample_pg_vector
from .spatial import SpatialCovariance, cholesky_with_jitter


class DegenerateChainWarning(UserWarning):
    """Raised when an ESS is requested for a constant chain."""


@dataclass
class GibbsState:
    """Mutable chain state: rates, active-pair latents, signal variance."""

    lambda_: np.ndarray
    z: np.ndarray
    alpha_sq: float


@dataclass(frozen=True)
class FitConfig:
    iterations: int = 5000
    burn_in: int = 50
    chi: float = 0.1
    omega: float = 0.1
    seed: int | None = None
    infer_alpha_sq: bool = True
    mh_step: float = 0.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not (0 <= self.burn_in < self.iterations):
            raise ValueError("burn_in must be in [0, iterations)")
        if self.chi <= 0 or self.omega <= 0:
            raise ValueError("inverse-gamma hyperparameters must be positive")


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-ward quantile summaries plus the retained sample matrix."""

    ward_ids: tuple[str, ...]
    median: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    variance: np.ndarray
    samples: np.ndarray = field(repr=False)
    alpha_sq_samples: np.ndarray = field(repr=False)
    alpha_sq_median: float
    alpha_sq_interval: tuple[float, float]
    sampling_seconds: float
    acceptance_rate: float | None = None

    def __post_init__(self):
        if np.any(self.q05 > self.median) or np.any(self.median > self.q95):
            raise ValueError("quantiles out of order")


def update_latents(state: GibbsState, design: DesignMatrix,
                   rng: np.random.Generator) -> np.ndarray:
    """Draw z_ij ~ PG(n_ij, lambda_i - lambda_j) for every active pair."""
    if design.n_rows == 0:
        return state.z
    diffs = state.lambda_[design.pairs[:, 0]] - state.lambda_[design.pairs[:, 1]]
    state.z = sample_pg_vector(design.counts, diffs, rng)
    return state.z


def _xtzx(design: DesignMatrix, z: np.ndarray, n: int) -> np.ndarray:
    i = design.pairs[:, 0]
    j = design.pairs[:, 1]
    out = np.zeros((n, n))
    off = np.bincount(i * n + j, weights=z, minlength=n * n).reshape(n, n)
    out -= off + off.T
    out[np.diag_indices(n)] += (
        np.bincount(i, weights=z, minlength=n) + np.bincount(j, weights=z, minlength=n)
    )
    return out


def rate_conditional(z: np.ndarray, design: DesignMatrix, prior_mean: np.ndarray,
                     prior_precision: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior precision and mean of the blocked rate update.

    Precision is X'ZX + Sigma^-1; the mean solves
    (X'ZX + Sigma^-1) mu = X'kappa + Sigma^-1 prior_mean with
    kappa_ij = y_ij - n_ij / 2.
    """
    n = prior_precision.shape[0]
    precision = _xtzx(design, z, n) + prior_precision
    rhs = prior_precision @ prior_mean
    if design.n_rows:
        kappa = design.wins - design.counts / 2.0
        rhs = rhs + design.matrix.T @ kappa
    return precision, rhs


def update_rates(state: GibbsState, design: DesignMatrix,
                 prior_mean: np.ndarray, prior_precision: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """Blocked draw lambda ~ N(mu, S), S = (X'ZX + Sigma^-1)^-1."""
    n = state.lambda_.size
    precision, rhs = rate_conditional(state.z, design, prior_mean, prior_precision)
    chol = cholesky_with_jitter(precision)
    mu = cho_solve((chol, True), rhs)
    noise = solve_triangular(chol.T, rng.standard_normal(n), lower=False)
    state.lambda_ = mu + noise
    return state.lambda_


def alpha_sq_conditional(lam: np.ndarray, corr_inv: np.ndarray,
                         chi: float, omega: float) -> tuple[float, float]:
    """(shape, scale) of the inverse-gamma full conditional for alpha_sq."""
    shape = chi + lam.size / 2.0
    scale = omega + 0.5 * float(lam @ corr_inv @ lam)
    return shape, scale


def update_alpha_sq(state: GibbsState, corr_inv: np.ndarray,
                    chi: float, omega: float,
                    rng: np.random.Generator) -> float:
    shape, scale = alpha_sq_conditional(state.lambda_, corr_inv, chi, omega)
    state.alpha_sq = scale / rng.gamma(shape)
    return state.alpha_sq


def apply_identifiability(state: GibbsState, cov: SpatialCovariance,
                          rng: np.random.Generator) -> np.ndarray:
    """Re-draw the mean level of the rates from its marginal prior.

    The likelihood only sees differences, so translating the rates leaves
    it unchanged; the level is given its prior N(0, 1'Sigma1 / N^2).
    """
    n = state.lambda_.size
    level_var = float(cov.sigma.sum()) / n**2
    level = rng.normal(0.0, np.sqrt(level_var))
    state.lambda_ = state.lambda_ - state.lambda_.mean() + level
    return state.lambda_


def fit(tallies: Tallies, prior: SpatialCovariance,
        config: FitConfig = FitConfig()) -> PosteriorSummary:
    """Run the latent-variable Gibbs sampler and summarise the posterior.

    `prior.correlation` is the fixed correlation factor; the signal
    variance starts at `prior.alpha_sq` and is inferred under its
    inverse-gamma prior unless `config.infer_alpha_sq` is off.
    """
    design = design_matrix(tallies)
    if design.n_rows == 0:
        raise ValueError("no active pairs: nothing to fit")
    return _run_pg_chain(tallies.ward_ids, design, prior, config)


def _run_pg_chain(ward_ids, design: DesignMatrix, prior: SpatialCovariance,
                  config: FitConfig) -> PosteriorSummary:
    rng = np.random.default_rng(config.seed)
    n = len(ward_ids)
    corr_chol = cholesky_with_jitter(prior.correlation)
    corr_inv = cho_solve((corr_chol, True), np.eye(n))
    corr_inv = (corr_inv + corr_inv.T) / 2.0
    prior_mean = np.zeros(n)

    state = GibbsState(lambda_=np.zeros(n), z=np.ones(design.n_rows),
                       alpha_sq=prior.alpha_sq)
    lam_trace = np.empty((config.iterations, n))
    alpha_trace = np.empty(config.iterations)

    start = time.perf_counter()
    for it in range(config.iterations):
        update_latents(state, design, rng)
        update_rates(state, design, prior_mean, corr_inv / state.alpha_sq, rng)
        if config.infer_alpha_sq:
            update_alpha_sq(state, corr_inv, config.chi, config.omega, rng)
        apply_identifiability(state, prior.with_alpha_sq(state.alpha_sq), rng)
        lam_trace[it] = state.lambda_
        alpha_trace[it] = state.alpha_sq
    elapsed = time.perf_counter() - start

    return summarize_chain(ward_ids, lam_trace[config.burn_in:],
                           alpha_trace[config.burn_in:], elapsed)


def summarize_chain(ward_ids, lam_samples: np.ndarray,
                    alpha_samples: np.ndarray, elapsed: float,
                    acceptance_rate: float | None = None) -> PosteriorSummary:
    q05, med, q95 = np.quantile(lam_samples, [0.05, 0.5, 0.95], axis=0)
    a05, a50, a95 = np.quantile(alpha_samples, [0.05, 0.5, 0.95])
    return PosteriorSummary(
        ward_ids=tuple(ward_ids),
        median=med,
        q05=q05,
        q95=q95,
        variance=lam_samples.var(axis=0, ddof=1),
        samples=lam_samples,
        alpha_sq_samples=alpha_samples,
        alpha_sq_median=float(a50),
        alpha_sq_interval=(float(a05), float(a95)),
        sampling_seconds=elapsed,
        acceptance_rate=acceptance_rate,
    )


def mh_baseline_fit(tallies: Tallies, prior: SpatialCovariance,
                    config: FitConfig = FitConfig()) -> PosteriorSummary:
    """Single-site Gaussian random-walk sampler for the same posterior.

    Benchmarking baseline and correctness oracle; the prior covariance is
    held fixed (no signal-variance inference) and the proposal standard
    deviation is `config.mh_step`. No level resampling is applied, so
    cross-sampler comparisons should use translation-invariant
    functionals (e.g. mean-centred rates).
    """
    design = design_matrix(tallies)
    if design.n_rows == 0:
        raise ValueError("no active pairs: nothing to fit")
    rng = np.random.default_rng(config.seed)
    n = tallies.n_wards

    # per-ward view of the data: opponents and wins from that ward's side
    opponents = [[] for _ in range(n)]
    for (i, j), n_ij, y_ij in zip(design.pairs, design.counts, design.wins):
        opponents[i].append((j, n_ij, y_ij))
        opponents[j].append((i, n_ij, n_ij - y_ij))
    opp_idx = [np.array([o[0] for o in opp], dtype=int) for opp in opponents]
    opp_n = [np.array([o[1] for o in opp], dtype=float) for opp in opponents]
    opp_y = [np.array([o[2] for o in opp], dtype=float) for opp in opponents]

    sigma_chol = cholesky_with_jitter(prior.sigma)
    precision = cho_solve((sigma_chol, True), np.eye(n))
    precision = (precision + precision.T) / 2.0

    lam = np.zeros(n)
    p_lam = precision @ lam
    lam_trace = np.empty((config.iterations, n))
    accepted = 0

    start = time.perf_counter()
    for it in range(config.iterations):
        for w in range(n):
            delta = config.mh_step * rng.standard_normal()
            d_old = lam[w] - lam[opp_idx[w]] if opp_idx[w].size else np.empty(0)
            d_new = d_old + delta
            log_lik_delta = float(
                np.sum(opp_y[w] * (d_new - d_old)
                       - opp_n[w] * (np.logaddexp(0.0, d_new) - np.logaddexp(0.0, d_old)))
            )
            log_prior_delta = -0.5 * (2.0 * delta * p_lam[w] + delta**2 * precision[w, w])
            if np.log(rng.random()) < log_lik_delta + log_prior_delta:
                lam[w] += delta
                p_lam += delta * precision[:, w]
                accepted += 1
        lam_trace[it] = lam
    elapsed = time.perf_counter() - start

    alpha_trace = np.full(config.iterations, prior.alpha_sq)
    return summarize_chain(
        tallies.ward_ids, lam_trace[config.burn_in:], alpha_trace[config.burn_in:],
        elapsed, acceptance_rate=accepted / (config.iterations * n),
    )


def effective_sample_size(chain: np.ndarray) -> np.ndarray | float:
    """ESS per parameter via initial-positive-sequence truncation.

    Constant chains get ESS = length and a DegenerateChainWarning.
    """
    x = np.asarray(chain, dtype=float)
    if x.ndim == 1:
        return _ess_1d(x)
    return np.array([_ess_1d(x[:, k]) for k in range(x.shape[1])])


def _ess_1d(x: np.ndarray) -> float:
    t = x.size
    if t < 10:
        raise ValueError("chain too short for an ESS estimate")
    centered = x - x.mean()
    if np.all(centered == 0.0):
        warnings.warn("constant chain: ESS set to chain length",
                      DegenerateChainWarning)
        return float(t)
    size = 1 << (2 * t - 1).bit_length()
    f = np.fft.rfft(centered, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:t] / t
    rho = acov / acov[0]
    tau_half = 0.0
    for m in range(t // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0.0:
            break
        tau_half += pair
    tau = max(2.0 * tau_half - 1.0, 1.0 / t)
    return float(t / tau)


def write_results_csv(summary: PosteriorSummary, path) -> None:
    """Per-ward results: `ward,median,q05,q95,variance`."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ward", "median", "q05", "q95", "variance"])
        for k, ward in enumerate(summary.ward_ids):
            writer.writerow([
                ward,
                repr(float(summary.median[k])),
                repr(float(summary.q05[k])),
                repr(float(summary.q95[k])),
                repr(float(summary.variance[k])),
            ])


def write_chain_csv(summary: PosteriorSummary, path) -> None:
    """Retained iterations, one row each: lambda per ward then alpha_sq."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"lambda_{w}" for w in summary.ward_ids] + ["alpha_sq"])
        for row, alpha in zip(summary.samples, summary.alpha_sq_samples):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(alpha))])
