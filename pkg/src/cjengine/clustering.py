"""Spatial clustering Bradley-Terry model.

Each ward links to one ward (possibly itself); clusters are the connected
components of the link graph. Rates within a cluster share a normal
distribution whose mean and variance carry a normal-inverse-gamma base
measure, so assignment updates use the closed-form marginal likelihood
with the cluster parameters integrated out.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import shortest_path
from scipy.special import gammaln

from .comparisons import Tallies, design_matrix
from .inference import GibbsState, update_latents, update_rates
from .spatial import WardGraph, communicability

LOG_TWO_PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class NIGBase:
    """Normal-inverse-gamma base measure over cluster (mean, variance).

    The prior mean-precision scaling is fixed at 1: the cluster mean has
    prior N(mu0, sigma_sq) given the cluster variance.
    """

    mu0: float = 0.0
    alpha0: float = 1.0
    beta0: float = 1.0

    def __post_init__(self):
        if self.alpha0 <= 0 or self.beta0 <= 0:
            raise ValueError("alpha0 and beta0 must be positive")


@dataclass(frozen=True)
class ClusterConfig:
    iterations: int = 100_000
    burn_in: int = 1000
    beta: float = 1e-8
    seed: int | None = None
    affinity: str = "communicability"

    def __post_init__(self):
        if self.iterations < 1 or not (0 <= self.burn_in < self.iterations):
            raise ValueError("invalid iteration counts")
        if self.beta <= 0:
            raise ValueError("concentration beta must be positive")
        if self.affinity not in ("communicability", "graph_distance"):
            raise ValueError(f"unknown affinity {self.affinity!r}")


@dataclass
class ClusterState:
    """Chain state: rates, latents, links, and per-cluster parameters."""

    lambda_: np.ndarray
    z: np.ndarray
    theta: np.ndarray
    m: dict
    sigma_sq: dict
    beta: float = 1e-8


@dataclass(frozen=True)
class ClusterPosterior:
    """Rate summaries plus partition summaries from the clustering chain."""

    ward_ids: tuple[str, ...]
    median: np.ndarray
    q05: np.ndarray
    q95: np.ndarray
    variance: np.ndarray
    samples: np.ndarray = field(repr=False)
    k_trace: np.ndarray = field(repr=False)
    k_posterior: dict
    co_clustering: np.ndarray = field(repr=False)
    modal_labels: np.ndarray
    sampling_seconds: float

    @property
    def modal_k(self) -> int:
        """Mode of the cluster-count posterior (smallest count on ties)."""
        best = max(sorted(self.k_posterior), key=lambda k: self.k_posterior[k])
        return int(best)


def _functional_components(link: np.ndarray) -> np.ndarray:
    """Component ids for a one-out-link-per-node graph via pointer doubling.

    Every node's forward orbit ends on its component's unique cycle, so
    the minimum node on that cycle identifies the weak component.
    """
    n = link.size
    landing = link.copy()
    steps = 1
    while steps < n:
        landing = landing[landing]
        steps *= 2
    orbit_min = np.arange(n)
    hop = link.copy()
    steps = 1
    while steps < n:
        orbit_min = np.minimum(orbit_min, orbit_min[hop])
        hop = hop[hop]
        steps *= 2
    return orbit_min[landing]


def cluster_labels(theta: np.ndarray) -> np.ndarray:
    """Per-ward canonical cluster label: the smallest member of its cluster."""
    theta = np.asarray(theta, dtype=np.int64)
    n = theta.size
    if np.any((theta < 0) | (theta >= n)):
        raise ValueError("assignments out of range")
    components = _functional_components(theta)
    smallest = np.full(n, n, dtype=np.int64)
    np.minimum.at(smallest, components, np.arange(n))
    return smallest[components]


def clusters(theta: np.ndarray) -> list[list[int]]:
    """Weakly-connected components of the link digraph i -> theta[i].

    Components are sorted internally and ordered by smallest member.
    """
    labels = cluster_labels(theta)
    groups: dict[int, list[int]] = {}
    for idx, label in enumerate(labels):
        groups.setdefault(int(label), []).append(idx)
    return [groups[key] for key in sorted(groups)]


def _log_ml_stats(count: int, total: float, total_sq: float, base: NIGBase) -> float:
    """Marginal likelihood from sufficient statistics (n, sum, sum of squares)."""
    if count == 0:
        return 0.0
    mean = total / count
    ssd = max(total_sq - count * mean * mean, 0.0)
    beta_bar = (base.beta0 + 0.5 * ssd
                + count * (mean - base.mu0) ** 2 / (2.0 * (1.0 + count)))
    return (math.lgamma(base.alpha0 + count / 2.0) - math.lgamma(base.alpha0)
            + base.alpha0 * math.log(base.beta0)
            - (base.alpha0 + count / 2.0) * math.log(beta_bar)
            - 0.5 * math.log(1.0 + count)
            - count / 2.0 * LOG_TWO_PI)


def log_marginal_likelihood(lambda_k: np.ndarray, base: NIGBase) -> float:
    """Log marginal likelihood of a cluster's rates under the NIG base.

    Gamma(a0 + n/2) / Gamma(a0) * b0^a0 / beta_bar^(a0 + n/2)
    * (1 + n)^(-1/2) * (2 pi)^(-n/2), with beta_bar absorbing the
    within-cluster spread and the shrunken distance of the cluster mean
    from mu0.
    """
    lam = np.asarray(lambda_k, dtype=float)
    n = lam.size
    if n == 0:
        return 0.0
    mean = float(lam.mean())
    ssd = float(np.sum((lam - mean) ** 2))
    beta_bar = (base.beta0 + 0.5 * ssd
                + n * (mean - base.mu0) ** 2 / (2.0 * (1.0 + n)))
    return (math.lgamma(base.alpha0 + n / 2.0) - math.lgamma(base.alpha0)
            + base.alpha0 * math.log(base.beta0)
            - (base.alpha0 + n / 2.0) * math.log(beta_bar)
            - 0.5 * math.log(1.0 + n)
            - n / 2.0 * LOG_TWO_PI)


def cluster_affinity(graph: WardGraph, kind: str = "communicability") -> np.ndarray:
    """Pairwise link affinities f(i, j); the diagonal is unused."""
    if kind == "communicability":
        return communicability(graph)
    if kind == "graph_distance":
        dist = shortest_path(graph.adjacency, method="D", unweighted=True)
        with np.errstate(over="ignore"):
            return np.exp(-dist)
    raise ValueError(f"unknown affinity {kind!r}")


_SCALAR_PATH_MAX_N = 12


def update_assignment(i: int, state: ClusterState, base: NIGBase,
                      affinity: np.ndarray, rng: np.random.Generator) -> int:
    """Resample ward i's link from its full conditional.

    The link is removed first (so the conditional is correct when it was
    holding a cluster together), then the three cases are weighed:
    beta for a self-link, affinity alone for a link inside i's current
    cluster, affinity times the marginal-likelihood ratio when the link
    would join two clusters.

    Small problems take a scalar path, larger ones a vectorised path;
    both produce identical weights and consume one uniform draw.
    """
    n = state.theta.size
    if n <= _SCALAR_PATH_MAX_N:
        weights = _assignment_weights_scalar(i, state, base, affinity)
    else:
        weights = _assignment_weights_vector(i, state, base, affinity)
    u = rng.random() * weights[-1]
    # first candidate whose cumulative weight strictly exceeds u, so
    # zero-weight candidates can never be selected
    choice = int(np.searchsorted(weights, u, side="right"))
    choice = min(choice, n - 1)
    state.theta[i] = choice
    return choice


def _assignment_weights_scalar(i, state, base, affinity):
    """Cumulative candidate weights (index j = link i -> j), python scalars."""
    theta = state.theta
    n = theta.size
    lam = state.lambda_
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for k in range(n):
        if k != i:
            ra, rb = find(k), find(int(theta[k]))
            if ra != rb:
                parent[ra] = rb

    roots = [find(k) for k in range(n)]
    count: dict[int, int] = {}
    total: dict[int, float] = {}
    total_sq: dict[int, float] = {}
    for k in range(n):
        r = roots[k]
        v = float(lam[k])
        count[r] = count.get(r, 0) + 1
        total[r] = total.get(r, 0.0) + v
        total_sq[r] = total_sq.get(r, 0.0) + v * v

    root_i = roots[i]
    log_ml_own = _log_ml_stats(count[root_i], total[root_i], total_sq[root_i], base)
    merge_delta: dict[int, float] = {root_i: 0.0}
    f_row = affinity[i]

    log_weights = []
    for j in range(n):
        if j == i:
            log_weights.append(math.log(state.beta))
            continue
        f_ij = float(f_row[j])
        if f_ij <= 0.0:
            log_weights.append(-math.inf)
            continue
        r = roots[j]
        delta = merge_delta.get(r)
        if delta is None:
            merged = _log_ml_stats(count[root_i] + count[r], total[root_i] + total[r],
                                   total_sq[root_i] + total_sq[r], base)
            other = _log_ml_stats(count[r], total[r], total_sq[r], base)
            delta = merged - log_ml_own - other
            merge_delta[r] = delta
        log_weights.append(math.log(f_ij) + delta)

    top = max(log_weights)
    acc = 0.0
    cumulative = np.empty(n)
    for j, lw in enumerate(log_weights):
        acc += math.exp(lw - top)
        cumulative[j] = acc
    return cumulative


def _assignment_weights_vector(i, state, base, affinity):
    """Cumulative candidate weights, vectorised over clusters and wards."""
    theta = state.theta
    n = theta.size
    lam = state.lambda_
    link = theta.astype(np.int64, copy=True)
    link[i] = i
    labels = _functional_components(link)

    counts = np.bincount(labels, minlength=n)
    sums = np.bincount(labels, weights=lam, minlength=n)
    sumsqs = np.bincount(labels, weights=lam * lam, minlength=n)
    roots = np.unique(labels)
    r0 = labels[i]

    log_ml = _log_ml_stats_vector(counts[roots], sums[roots], sumsqs[roots], base)
    own = float(log_ml[np.searchsorted(roots, r0)])
    merged = _log_ml_stats_vector(counts[roots] + counts[r0], sums[roots] + sums[r0],
                                  sumsqs[roots] + sumsqs[r0], base)
    delta_by_root = merged - own - log_ml
    delta_by_root[np.searchsorted(roots, r0)] = 0.0

    root_pos = np.empty(n, dtype=np.int64)
    root_pos[roots] = np.arange(roots.size)
    with np.errstate(divide="ignore"):
        log_w = np.log(affinity[i]) + delta_by_root[root_pos[labels]]
    log_w[i] = math.log(state.beta)
    top = log_w.max()
    return np.cumsum(np.exp(log_w - top))


def _log_ml_stats_vector(counts, sums, sumsqs, base: NIGBase) -> np.ndarray:
    """Vectorised marginal likelihood from per-cluster sufficient statistics."""
    counts = counts.astype(float)
    means = sums / counts
    ssd = np.maximum(sumsqs - counts * means * means, 0.0)
    beta_bar = (base.beta0 + 0.5 * ssd
                + counts * (means - base.mu0) ** 2 / (2.0 * (1.0 + counts)))
    return (gammaln(base.alpha0 + counts / 2.0) - math.lgamma(base.alpha0)
            + base.alpha0 * math.log(base.beta0)
            - (base.alpha0 + counts / 2.0) * np.log(beta_bar)
            - 0.5 * np.log1p(counts)
            - counts / 2.0 * LOG_TWO_PI)


def precision_conditional(lambda_k: np.ndarray, base: NIGBase) -> tuple[float, float]:
    """(shape, rate) of the gamma full conditional for a cluster precision."""
    lam = np.asarray(lambda_k, dtype=float)
    n = lam.size
    if n == 0:
        raise ValueError("cluster must be nonempty")
    mean = float(lam.mean())
    ssd = float(np.sum((lam - mean) ** 2))
    beta_bar = (base.beta0 + 0.5 * ssd
                + n * (mean - base.mu0) ** 2 / (2.0 * (1.0 + n)))
    return base.alpha0 + n / 2.0, beta_bar


def update_precision(lambda_k: np.ndarray, base: NIGBase,
                     rng: np.random.Generator) -> float:
    """Draw a cluster variance: 1/sigma_sq ~ Gamma(alpha0 + n/2, beta_bar)."""
    shape, rate = precision_conditional(lambda_k, base)
    return 1.0 / rng.gamma(shape, 1.0 / rate)


def mean_conditional(lambda_k: np.ndarray, sigma_sq: float,
                     base: NIGBase) -> tuple[float, float]:
    """(mean, variance) of the normal full conditional for a cluster mean."""
    lam = np.asarray(lambda_k, dtype=float)
    n = lam.size
    if n == 0:
        raise ValueError("cluster must be nonempty")
    return ((base.mu0 + float(lam.sum())) / (1.0 + n), sigma_sq / (1.0 + n))


def update_mean(lambda_k: np.ndarray, sigma_sq: float, base: NIGBase,
                rng: np.random.Generator) -> float:
    loc, var = mean_conditional(lambda_k, sigma_sq, base)
    return rng.normal(loc, math.sqrt(var))


def update_rates_clustered(state: ClusterState, design, rng) -> np.ndarray:
    """Blocked rate update with cluster-wise normal priors.

    The prior is diagonal: ward i gets mean m_k and variance sigma_sq_k
    of its cluster.
    """
    labels = cluster_labels(state.theta)
    prior_mean = np.array([state.m[l] for l in labels])
    prior_precision = np.diag([1.0 / state.sigma_sq[l] for l in labels])
    return update_rates(state, design, prior_mean, prior_precision, rng)


def _draw_cluster_params(state: ClusterState, base: NIGBase,
                         rng: np.random.Generator) -> None:
    state.m = {}
    state.sigma_sq = {}
    for group in clusters(state.theta):
        lam_k = state.lambda_[group]
        label = group[0]
        sigma_sq = update_precision(lam_k, base, rng)
        state.sigma_sq[label] = sigma_sq
        state.m[label] = update_mean(lam_k, sigma_sq, base, rng)


def recenter_level(state: ClusterState, base: NIGBase,
                   rng: np.random.Generator) -> float:
    """Gibbs move on the unidentified level of the clustering chain.

    Shifting rates and cluster means together leaves the likelihood and
    the within-cluster terms unchanged; only the cluster-mean priors
    N(mu0, sigma_sq_k) inform the shift, giving a Gaussian conditional.
    Without this move the level random-walks through the m/lambda
    feedback and drifts on weakly identified data.
    """
    precision = sum(1.0 / s for s in state.sigma_sq.values())
    mean = sum((base.mu0 - state.m[k]) / state.sigma_sq[k] for k in state.m) / precision
    shift = rng.normal(mean, math.sqrt(1.0 / precision))
    state.lambda_ = state.lambda_ + shift
    state.m = {k: v + shift for k, v in state.m.items()}
    return shift


def initial_rates(tallies: Tallies, rng: np.random.Generator,
                  sweeps: int = 200, prior_var: float = 25.0) -> np.ndarray:
    """Data-driven starting rates from a short diffuse-prior chain.

    The joint posterior over (rates, links) can hold far-apart modes
    (tight separated clusters vs one smeared cluster) that single-link
    updates cannot travel between, so the chain must start in the
    data-supported basin. Win-rate logits seed a brief run of the
    latent-variable sampler under independent wide normal priors, which
    recovers the pairwise structure that raw win rates compress.
    """
    design = design_matrix(tallies)
    wins = tallies.y.sum(axis=1).astype(float)
    losses = tallies.y.sum(axis=0).astype(float)
    n = tallies.n_wards
    state = GibbsState(
        lambda_=np.log((wins + 0.5) / (losses + 0.5)),
        z=np.ones(design.n_rows),
        alpha_sq=prior_var,
    )
    prior_mean = np.zeros(n)
    prior_precision = np.eye(n) / prior_var
    for _ in range(sweeps):
        update_latents(state, design, rng)
        update_rates(state, design, prior_mean, prior_precision, rng)
    return state.lambda_


def fit_clustered(tallies: Tallies, graph: WardGraph,
                  base: NIGBase = NIGBase(),
                  config: ClusterConfig = ClusterConfig()) -> ClusterPosterior:
    """Run the clustering Gibbs sampler and summarise rates and partitions."""
    design = design_matrix(tallies)
    if design.n_rows == 0:
        raise ValueError("no active pairs: nothing to fit")
    rng = np.random.default_rng(config.seed)
    n = graph.n
    affinity = cluster_affinity(graph, config.affinity)

    state = ClusterState(
        lambda_=initial_rates(tallies, rng),
        z=np.ones(design.n_rows),
        theta=np.arange(n),
        m={},
        sigma_sq={},
        beta=config.beta,
    )
    # settle the partition on the warm-started rates before any rate update;
    # the assignment conditional is collapsed, so it only needs lambda
    for _ in range(5):
        for i in range(n):
            update_assignment(i, state, base, affinity, rng)
    _draw_cluster_params(state, base, rng)

    lam_trace = np.empty((config.iterations, n))
    labels_trace = np.empty((config.iterations, n), dtype=np.int16)

    start = time.perf_counter()
    for it in range(config.iterations):
        update_latents(state, design, rng)  # ClusterState carries lambda_ and z
        update_rates_clustered(state, design, rng)
        for i in range(n):
            update_assignment(i, state, base, affinity, rng)
        _draw_cluster_params(state, base, rng)
        recenter_level(state, base, rng)
        lam_trace[it] = state.lambda_
        labels_trace[it] = cluster_labels(state.theta)
    elapsed = time.perf_counter() - start

    lam_kept = lam_trace[config.burn_in:]
    labels_kept = labels_trace[config.burn_in:]
    k_trace = np.array([len(np.unique(row)) for row in labels_kept])
    ks, counts = np.unique(k_trace, return_counts=True)
    k_posterior = {int(k): float(c) / k_trace.size for k, c in zip(ks, counts)}
    co = co_clustering_matrix(labels_kept)
    modal = _modal_partition(labels_kept, co)
    q05, med, q95 = np.quantile(lam_kept, [0.05, 0.5, 0.95], axis=0)
    return ClusterPosterior(
        ward_ids=tuple(tallies.ward_ids),
        median=med,
        q05=q05,
        q95=q95,
        variance=lam_kept.var(axis=0, ddof=1),
        samples=lam_kept,
        k_trace=k_trace,
        k_posterior=k_posterior,
        co_clustering=co,
        modal_labels=modal,
        sampling_seconds=elapsed,
    )


def co_clustering_matrix(labels_trace: np.ndarray) -> np.ndarray:
    """Frequency with which each ward pair shares a cluster across the trace."""
    labels_trace = np.asarray(labels_trace)
    if labels_trace.ndim != 2 or labels_trace.shape[0] == 0:
        raise ValueError("need a nonempty (iterations, wards) label trace")
    t, n = labels_trace.shape
    acc = np.zeros((n, n))
    chunk = max(1, 10_000_000 // (n * n))
    for lo in range(0, t, chunk):
        block = labels_trace[lo:lo + chunk]
        acc += (block[:, :, None] == block[:, None, :]).sum(axis=0)
    return acc / t


def _modal_partition(labels_trace: np.ndarray, co: np.ndarray) -> np.ndarray:
    """Sampled partition with the best co-clustering agreement (Binder score)."""
    unique_rows = np.unique(labels_trace, axis=0)
    iu, ju = np.triu_indices(co.shape[0], k=1)
    penalty = 1.0 - 2.0 * co[iu, ju]
    best_row, best_score = None, np.inf
    for row in unique_rows:
        same = row[iu] == row[ju]
        score = penalty[same].sum()
        if score < best_score:
            best_score, best_row = score, row
    return np.asarray(best_row, dtype=np.int64)


def write_cluster_csv(posterior: ClusterPosterior, graph: WardGraph, path) -> None:
    """Per-ward modal cluster and max co-clustering rate with any neighbour."""
    adjacency = graph.adjacency
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ward", "modal_cluster", "p_same_as_neighbor_max"])
        for k, ward in enumerate(posterior.ward_ids):
            neighbors = np.nonzero(adjacency[k])[0]
            p_max = float(posterior.co_clustering[k, neighbors].max()) if neighbors.size else 0.0
            writer.writerow([ward, int(posterior.modal_labels[k]), repr(p_max)])


def write_k_posterior_csv(posterior: ClusterPosterior, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["K", "probability"])
        for k in sorted(posterior.k_posterior):
            writer.writerow([k, repr(posterior.k_posterior[k])])
