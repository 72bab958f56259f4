"""Simulation studies: scheduling-mechanism utility and sampler efficiency.

Includes a deterministic synthetic ward contact map standing in for a
real county adjacency network, since no study data ships with the
package.
"""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone

import numpy as np

from .comparisons import ComparisonRecord, tally, win_probability
from .inference import FitConfig, effective_sample_size, fit, mh_baseline_fit
from .scheduling import MECHANISMS, build_schedule, draw_schedule, utility
from .spatial import WardGraph, prior_covariance, sample_prior


def demo_sites(n: int = 76, seed: int = 2021) -> np.ndarray:
    """Ward site coordinates used by demo_graph, for spatial fixtures."""
    return np.random.default_rng(seed).random((n, 2))


def demo_graph(n: int = 76, seed: int = 2021,
               contacts: int | None = None) -> WardGraph:
    """Synthetic ward contact map: seeded random sites, each touching its
    nearest neighbours.

    The construction gives a wide spread of pair communicabilities, from
    near-interchangeable neighbouring wards to weakly connected opposite
    corners, which is the regime the spatial scheduling mechanism is
    designed for.
    """
    if n < 3:
        raise ValueError("demo graph needs at least 3 wards")
    if contacts is None:
        contacts = min(12, n - 1)
    if contacts < 2 or contacts >= n:
        raise ValueError("contacts must be in [2, n)")
    points = demo_sites(n, seed)
    adjacency = np.zeros((n, n))
    for i in range(n):
        dist = np.linalg.norm(points - points[i], axis=1)
        dist[i] = np.inf
        for j in np.argsort(dist)[:contacts]:
            adjacency[i, j] = adjacency[j, i] = 1.0
    ids = tuple(f"ward_{k:03d}" for k in range(n))
    return WardGraph(ids, adjacency)


def simulate_rates(cov, rng: np.random.Generator) -> np.ndarray:
    """Synthetic ground-truth rates drawn from the spatial prior."""
    return sample_prior(cov, rng)


def simulate_comparisons(lam: np.ndarray, pairs: np.ndarray,
                         rng: np.random.Generator, graph: WardGraph,
                         judge: str = "sim") -> list[ComparisonRecord]:
    """One Bernoulli outcome per scheduled pair under the BT model."""
    t0 = datetime(2022, 1, 1, tzinfo=timezone.utc)
    records = []
    for k, (i, j) in enumerate(np.asarray(pairs)):
        p = win_probability(lam[i], lam[j])
        if rng.random() < p:
            winner, loser = i, j
        else:
            winner, loser = j, i
        records.append(ComparisonRecord(
            winner=graph.ward_ids[winner],
            loser=graph.ward_ids[loser],
            judge=judge,
            timestamp=t0 + timedelta(seconds=k),
        ))
    return records


@dataclass(frozen=True)
class DesignStudyConfig:
    graph: WardGraph
    alpha: float = 3.0
    comparisons: int = 500
    replicates: int = 100
    iterations: int = 500
    burn_in: int = 50
    mechanisms: tuple[str, ...] = MECHANISMS
    seed: int | None = None
    workers: int = 1
    # the generating signal variance is known in a simulation; holding it
    # fixed keeps per-replicate utilities on one scale (the hyperparameter
    # posterior otherwise tracks each replicate's rate spread and buries
    # the design effect in noise)
    infer_alpha_sq: bool = False

    def __post_init__(self):
        if min(self.comparisons, self.replicates, self.iterations) < 1:
            raise ValueError("counts must be positive")
        unknown = set(self.mechanisms) - set(MECHANISMS)
        if unknown:
            raise ValueError(f"unknown mechanisms {sorted(unknown)}")


@dataclass(frozen=True)
class UtilityReport:
    """Mean/min/max utility per mechanism plus the raw per-replicate values."""

    mechanisms: tuple[str, ...]
    mean: dict
    minimum: dict
    maximum: dict
    utilities: dict = field(repr=False)

    def __post_init__(self):
        for mech in self.mechanisms:
            if not (self.minimum[mech] <= self.mean[mech] <= self.maximum[mech]):
                raise ValueError("report ordering violated")


def _design_replicate(args):
    config, replicate, seeds = args
    graph = config.graph
    cov = prior_covariance(graph, config.alpha**2)
    rng = np.random.default_rng(seeds["rates"])
    lam_true = simulate_rates(cov, rng)
    out = {}
    for mech in config.mechanisms:
        mech_rng = np.random.default_rng(seeds[mech])
        dist = build_schedule(mech, graph, alpha_sq=config.alpha**2)
        pairs = draw_schedule(dist, config.comparisons, mech_rng)
        records = simulate_comparisons(lam_true, pairs, mech_rng, graph)
        tallies = tally(records, graph)
        summary = fit(tallies, cov, FitConfig(
            iterations=config.iterations,
            burn_in=config.burn_in,
            seed=seeds[f"fit_{mech}"],
            infer_alpha_sq=config.infer_alpha_sq,
        ))
        # utility of the identified posterior: comparisons only ever inform
        # rate contrasts, and the resampled level would otherwise add
        # mechanism-independent prior noise to every ward's variance
        centered = summary.samples - summary.samples.mean(axis=1, keepdims=True)
        out[mech] = utility(centered)
    return replicate, out


def run_design_study(config: DesignStudyConfig) -> UtilityReport:
    """Compare scheduling mechanisms by posterior-precision utility.

    Per replicate: draw true rates from the prior, then for each
    mechanism schedule comparisons, simulate outcomes, fit, and record
    the reciprocal posterior-covariance trace.
    """
    root = np.random.SeedSequence(config.seed)
    children = root.spawn(config.replicates)
    jobs = []
    for r, child in enumerate(children):
        streams = child.spawn(2 * len(config.mechanisms) + 1)
        seeds = {"rates": streams[0]}
        for k, mech in enumerate(config.mechanisms):
            seeds[mech] = streams[1 + 2 * k]
            seeds[f"fit_{mech}"] = streams[2 + 2 * k]
        jobs.append((config, r, seeds))

    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_design_replicate, jobs))
    else:
        results = [_design_replicate(job) for job in jobs]

    utilities = {mech: np.empty(config.replicates) for mech in config.mechanisms}
    for replicate, values in results:
        for mech, value in values.items():
            utilities[mech][replicate] = value
    return UtilityReport(
        mechanisms=tuple(config.mechanisms),
        mean={m: float(u.mean()) for m, u in utilities.items()},
        minimum={m: float(u.min()) for m, u in utilities.items()},
        maximum={m: float(u.max()) for m, u in utilities.items()},
        utilities=utilities,
    )


@dataclass(frozen=True)
class BenchmarkConfig:
    alpha: float = 3.0
    comparisons: int = 2000
    iterations: int = 5000
    burn_in: int = 50
    # the fixed-step random walk needs far more sweeps to deliver an
    # honest effective-sample count on a study-sized posterior
    mh_iterations: int = 100_000
    mh_burn_in: int = 20_000
    mh_step: float = 0.5
    seed: int | None = None


@dataclass(frozen=True)
class BenchmarkReport:
    """ESS-per-second comparison of the latent-variable and MH samplers."""

    ess_per_s: dict
    ess: dict = field(repr=False)
    seconds: dict
    iterations: int
    mean_agreement_z: np.ndarray = field(repr=False)

    def stats(self, sampler: str) -> tuple[float, float, float]:
        values = self.ess_per_s[sampler]
        return (float(np.median(values)), float(values.min()), float(values.max()))


def run_sampler_benchmark(graph: WardGraph,
                          config: BenchmarkConfig = BenchmarkConfig()) -> BenchmarkReport:
    """Fit the same simulated study with both samplers and compare ESS/s.

    Both chains target the identical fixed-covariance posterior so their
    posterior means double as a cross-sampler correctness gate.
    """
    root = np.random.SeedSequence(config.seed)
    s_rates, s_sched, s_outcomes, s_pg, s_mh = root.spawn(5)
    cov = prior_covariance(graph, config.alpha**2)
    lam_true = simulate_rates(cov, np.random.default_rng(s_rates))
    dist = build_schedule("principal_component", graph, alpha_sq=config.alpha**2)
    pairs = draw_schedule(dist, config.comparisons, np.random.default_rng(s_sched))
    records = simulate_comparisons(lam_true, pairs, np.random.default_rng(s_outcomes), graph)
    tallies = tally(records, graph)

    base = FitConfig(iterations=config.iterations, burn_in=config.burn_in,
                     infer_alpha_sq=False, mh_step=config.mh_step)
    pg = fit(tallies, cov, replace(base, seed=_seed_int(s_pg)))
    mh = mh_baseline_fit(tallies, cov, replace(
        base, iterations=config.mh_iterations, burn_in=config.mh_burn_in,
        seed=_seed_int(s_mh)))

    ess = {
        "polya_gamma": np.asarray(effective_sample_size(pg.samples)),
        "mh_single_site": np.asarray(effective_sample_size(mh.samples)),
    }
    seconds = {"polya_gamma": pg.sampling_seconds, "mh_single_site": mh.sampling_seconds}
    ess_per_s = {k: ess[k] / seconds[k] for k in ess}

    # agreement gate on mean-centred rates: the raw level is unidentified
    # and the two samplers treat it differently
    pg_c = pg.samples - pg.samples.mean(axis=1, keepdims=True)
    mh_c = mh.samples - mh.samples.mean(axis=1, keepdims=True)
    ess_pg_c = np.asarray(effective_sample_size(pg_c))
    ess_mh_c = np.asarray(effective_sample_size(mh_c))
    se = np.sqrt(pg_c.var(axis=0, ddof=1) / ess_pg_c
                 + mh_c.var(axis=0, ddof=1) / ess_mh_c)
    z = (pg_c.mean(axis=0) - mh_c.mean(axis=0)) / se
    return BenchmarkReport(ess_per_s=ess_per_s, ess=ess, seconds=seconds,
                           iterations=config.iterations, mean_agreement_z=z)


def _seed_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


def write_study_report(report: UtilityReport, detail_path, summary_path) -> None:
    """Raw `mechanism,replicate,utility` rows plus a mean/min/max summary."""
    with open(detail_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mechanism", "replicate", "utility"])
        for mech in report.mechanisms:
            for r, value in enumerate(report.utilities[mech]):
                writer.writerow([mech, r, repr(float(value))])
    with open(summary_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mechanism", "mean", "minimum", "maximum"])
        for mech in report.mechanisms:
            writer.writerow([mech, repr(report.mean[mech]),
                             repr(report.minimum[mech]), repr(report.maximum[mech])])


def write_benchmark_report(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sampler", "median_ess_per_s", "min_ess_per_s",
                         "max_ess_per_s", "sampling_seconds", "iterations"])
        for sampler in report.ess_per_s:
            med, lo, hi = report.stats(sampler)
            writer.writerow([sampler, repr(med), repr(lo), repr(hi),
                             repr(report.seconds[sampler]), report.iterations])
