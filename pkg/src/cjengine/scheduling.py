"""Distributions over ward pairs for scheduling upcoming comparisons.

Three mechanisms: uniform over pairs, a naive connectivity-penalising
distribution, and the principal-component mechanism that weights each
pair by the share of prior variance its rate difference explains.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .pairs import PairIndex
from .spatial import SpatialCovariance, WardGraph, communicability

MECHANISMS = ("uniform", "naive_spatial", "principal_component")
SPECTRAL_N_CAP = 150
EIGENVALUE_CLAMP = 1e-12
PROB_TOL = 1e-12


@dataclass(frozen=True)
class ScheduleDistribution:
    """Probability mass over unordered ward pairs, canonical pair order."""

    n: int
    probabilities: np.ndarray = field(repr=False)
    mechanism: str

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=float)
        if p.ndim != 1 or p.size != self.n * (self.n - 1) // 2:
            raise ValueError("probability vector length must be N(N-1)/2")
        if np.any(p < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError("probabilities must sum to 1")
        if self.mechanism not in MECHANISMS and self.mechanism != "masked":
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        object.__setattr__(self, "probabilities", p)

    @property
    def pair_index(self) -> PairIndex:
        return PairIndex(self.n)


@dataclass(frozen=True)
class DifferenceCovariance:
    """Covariance of the pairwise rate differences, canonical pair order."""

    delta: np.ndarray = field(repr=False)
    nu: np.ndarray = field(repr=False)


def difference_covariance(sigma: np.ndarray,
                          mu: np.ndarray | None = None) -> DifferenceCovariance:
    """Cov(lambda_i - lambda_j, lambda_k - lambda_l) for every pair of pairs."""
    sigma = np.asarray(sigma, dtype=float)
    n = sigma.shape[0]
    i, j = np.triu_indices(n, k=1)
    delta = sigma[np.ix_(i, i)] - sigma[np.ix_(i, j)] - sigma[np.ix_(j, i)] + sigma[np.ix_(j, j)]
    delta = (delta + delta.T) / 2.0
    if mu is None:
        nu = np.zeros(i.size)
    else:
        mu = np.asarray(mu, dtype=float)
        nu = mu[i] - mu[j]
    return DifferenceCovariance(delta=delta, nu=nu)


def pc_schedule(cov: SpatialCovariance | np.ndarray, *,
                method: str = "closed_form",
                spectral_n_cap: int = SPECTRAL_N_CAP) -> ScheduleDistribution:
    """Pair probabilities proportional to the prior variance of the difference.

    The spectral route follows the principal-component construction
    literally: p_beta = sum_c (u_beta^c)^2 psi^c / sum_c psi^c over the
    eigenpairs of the difference covariance. That sum telescopes to
    diag(Delta) / trace(Delta), which is the default O(N^2) route; the
    spectral route is kept for fidelity testing.
    """
    sigma = cov.sigma if isinstance(cov, SpatialCovariance) else np.asarray(cov, float)
    n = sigma.shape[0]
    if method == "closed_form":
        i, j = np.triu_indices(n, k=1)
        diag = sigma[i, i] + sigma[j, j] - 2.0 * sigma[i, j]
        p = diag / diag.sum()
    elif method == "spectral":
        if n > spectral_n_cap:
            raise ValueError(
                f"spectral route capped at N={spectral_n_cap}; use closed_form"
            )
        delta = difference_covariance(sigma).delta
        psi, u = np.linalg.eigh(delta)
        order = np.argsort(psi)[::-1]
        psi, u = psi[order], u[:, order]
        psi = np.where(psi < EIGENVALUE_CLAMP * psi[0], 0.0, psi)
        p = (u * u) @ psi
        p = p / psi.sum()
    else:
        raise ValueError(f"unknown method {method!r}")
    p = np.maximum(p, 0.0)
    return ScheduleDistribution(n, p / p.sum(), "principal_component")


def uniform_schedule(n: int) -> ScheduleDistribution:
    if n < 2:
        raise ValueError("need at least 2 wards")
    m = n * (n - 1) // 2
    return ScheduleDistribution(n, np.full(m, 1.0 / m), "uniform")


def naive_spatial_schedule(graph: WardGraph) -> ScheduleDistribution:
    """p proportional to 1 - normalised pair communicability.

    Highly connected pairs get low probability. Degenerate cases (a single
    pair, or an edgeless graph where every pair has zero communicability)
    fall back to uniform.
    """
    n = graph.n
    i, j = np.triu_indices(n, k=1)
    p_star = communicability(graph)[i, j]
    total = p_star.sum()
    if total == 0.0:
        return ScheduleDistribution(n, np.full(i.size, 1.0 / i.size), "naive_spatial")
    raw = 1.0 - p_star / total
    raw_total = raw.sum()
    if raw_total <= 0.0:
        return ScheduleDistribution(n, np.full(i.size, 1.0 / i.size), "naive_spatial")
    return ScheduleDistribution(n, raw / raw_total, "naive_spatial")


def build_schedule(mechanism: str, graph: WardGraph,
                   alpha_sq: float = 1.0) -> ScheduleDistribution:
    """Mechanism dispatch used by the service and the CLI."""
    if mechanism == "uniform":
        return uniform_schedule(graph.n)
    if mechanism == "naive_spatial":
        return naive_spatial_schedule(graph)
    if mechanism == "principal_component":
        from .spatial import prior_covariance

        return pc_schedule(prior_covariance(graph, alpha_sq))
    raise ValueError(f"unknown mechanism {mechanism!r}")


def mask_wards(dist: ScheduleDistribution, excluded) -> ScheduleDistribution:
    """Zero out pairs touching any excluded ward index and renormalise.

    Raises ValueError when no probability mass is left, which callers
    surface as an 'exhausted' signal.
    """
    excluded = set(int(w) for w in excluded)
    if not excluded:
        return dist
    pairs = dist.pair_index.all_pairs()
    keep = ~(np.isin(pairs[:, 0], list(excluded)) | np.isin(pairs[:, 1], list(excluded)))
    masked = np.where(keep, dist.probabilities, 0.0)
    total = masked.sum()
    if total <= 0.0:
        raise ValueError("all pairs masked")
    return ScheduleDistribution(dist.n, masked / total, "masked")


def draw_schedule(dist: ScheduleDistribution, m: int,
                  rng: np.random.Generator) -> np.ndarray:
    """(m, 2) array of ward index pairs drawn iid from the distribution."""
    if m < 1:
        raise ValueError("schedule length must be at least 1")
    pairs = dist.pair_index.all_pairs()
    rows = rng.choice(pairs.shape[0], size=m, p=dist.probabilities)
    return pairs[rows]


def utility(samples: np.ndarray) -> float:
    """Bayesian A-posterior precision: 1 / trace of the sample covariance."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError("need at least 2 posterior samples")
    trace = np.cov(samples, rowvar=False).trace()
    if trace <= 0.0 or not np.isfinite(trace):
        raise ValueError("degenerate posterior samples")
    return 1.0 / trace


def write_schedule_csv(dist: ScheduleDistribution, ward_ids, path) -> None:
    """Export `ward_a,ward_b,probability` rows in canonical pair order."""
    pairs = dist.pair_index.all_pairs()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ward_a", "ward_b", "probability"])
        for (i, j), p in zip(pairs, dist.probabilities):
            writer.writerow([ward_ids[i], ward_ids[j], repr(float(p))])
