"""Operator command line: fit, cluster, schedule, simulate, bench, serve,
sensitivity. Every subcommand honours --seed; invalid input exits 2 with a
single-line error."""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import ClusterConfig, NIGBase, fit_clustered, write_cluster_csv, write_k_posterior_csv
from .comparisons import read_comparisons, tally
from .inference import FitConfig, fit, write_chain_csv, write_results_csv
from .scheduling import MECHANISMS, build_schedule, draw_schedule, write_schedule_csv
from .simulation import (
    BenchmarkConfig,
    DesignStudyConfig,
    demo_graph,
    run_design_study,
    run_sampler_benchmark,
    write_benchmark_report,
    write_study_report,
)
from .spatial import read_edge_list

BSBT_DEFAULTS = {"iterations": 5000, "burn_in": 50, "chi": 0.1, "omega": 0.1}
CLUSTER_DEFAULTS = {"iterations": 100_000, "burn_in": 1000, "beta": 1e-8,
                    "mu0": 0.0, "alpha0": 1.0, "beta0": 1.0}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 0
    try:
        args.handler(args)
        return 0
    except BrokenPipeError:
        raise
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cjengine",
        description="Comparative judgement engine: inference, scheduling, "
                    "simulation and the live study service.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")
    parser.set_defaults(command=None)

    p = sub.add_parser("fit", help="fit the spatial BT model to a comparisons CSV")
    _graph_args(p)
    p.add_argument("--comparisons", required=True)
    p.add_argument("--out", required=True, help="results CSV path")
    p.add_argument("--chain-dump", help="optional retained-chain CSV")
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--chi", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--alpha-sq", type=float, default=1.0,
                   help="initial signal variance")
    p.add_argument("--drop-unknown", action="store_true",
                   help="drop rows naming wards outside the graph")
    _common_args(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("cluster", help="fit the spatial clustering BT model")
    _graph_args(p)
    p.add_argument("--comparisons", required=True)
    p.add_argument("--out-clusters", required=True)
    p.add_argument("--out-k", required=True)
    p.add_argument("--out-results", help="optional per-ward rate summaries CSV")
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--beta", type=float, help="ddCRP concentration")
    p.add_argument("--mu0", type=float)
    p.add_argument("--alpha0", type=float)
    p.add_argument("--beta0", type=float)
    p.add_argument("--affinity", choices=["communicability", "graph_distance"],
                   default="communicability")
    p.add_argument("--drop-unknown", action="store_true")
    p.add_argument("--beta-sweep",
                   help="comma-separated concentrations; writes a modal-K table")
    p.add_argument("--beta-sweep-out", help="CSV path for the sweep table")
    _common_args(p)
    p.set_defaults(handler=cmd_cluster)

    p = sub.add_parser("schedule", help="build a scheduling distribution")
    _graph_args(p)
    p.add_argument("--mechanism", choices=MECHANISMS, default="principal_component")
    p.add_argument("--out", required=True, help="distribution CSV path")
    p.add_argument("--alpha-sq", type=float, default=1.0)
    p.add_argument("--draw", type=int, help="also draw this many pairs")
    p.add_argument("--draw-out", help="CSV path for drawn pairs")
    _common_args(p)
    p.set_defaults(handler=cmd_schedule)

    p = sub.add_parser("simulate", help="scheduling-mechanism utility study")
    _graph_args(p, required=False)
    p.add_argument("--demo-wards", type=int,
                   help="use the synthetic demo map with this many wards")
    p.add_argument("--replicates", type=int, default=100)
    p.add_argument("--comparisons", type=int, default=500)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--burn-in", type=int, default=50)
    p.add_argument("--alpha", type=float, default=3.0)
    p.add_argument("--parallel-replicates", type=int, default=1)
    p.add_argument("--out-detail", required=True)
    p.add_argument("--out-summary", required=True)
    _common_args(p)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("bench", help="PG vs single-site MH efficiency benchmark")
    _graph_args(p, required=False)
    p.add_argument("--demo-wards", type=int)
    p.add_argument("--comparisons", type=int, default=2000)
    p.add_argument("--iterations", type=int, default=5000)
    p.add_argument("--burn-in", type=int, default=50)
    p.add_argument("--alpha", type=float, default=3.0)
    p.add_argument("--out", required=True)
    _common_args(p)
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("serve", help="run the live study service")
    p.add_argument("--data-dir", default=os.environ.get("CJENGINE_DATA_DIR", "./study-data"))
    p.add_argument("--host", default=os.environ.get("CJENGINE_HOST", "127.0.0.1"))
    p.add_argument("--port", type=int,
                   default=int(os.environ.get("CJENGINE_PORT", "8000")))
    p.set_defaults(handler=cmd_serve)

    p = sub.add_parser("sensitivity",
                       help="refit with one judge excluded / isolated and correlate")
    _graph_args(p)
    p.add_argument("--comparisons", required=True)
    p.add_argument("--judge", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--chi", type=float)
    p.add_argument("--omega", type=float)
    p.add_argument("--alpha-sq", type=float, default=1.0)
    p.add_argument("--drop-unknown", action="store_true")
    _common_args(p)
    p.set_defaults(handler=cmd_sensitivity)

    return parser


def _graph_args(parser, required=True):
    parser.add_argument("--wards", required=required, help="ward-id manifest file")
    parser.add_argument("--edges", required=required, help="tab-separated edge list")


def _common_args(parser):
    parser.add_argument("--seed", type=int)
    parser.add_argument("--config", help="key=value file; flags take precedence")


def _load_config_file(args) -> dict:
    values = {}
    path = getattr(args, "config", None)
    if path:
        for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, key: str, defaults: dict, cast):
    """Precedence: explicit flag > config file > built-in default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    config = _load_config_file(args)
    if key in config:
        return cast(config[key])
    return defaults[key]


def _graph_for(args):
    if getattr(args, "demo_wards", None):
        return demo_graph(args.demo_wards, seed=args.seed if args.seed is not None else 2021)
    if not (args.wards and args.edges):
        raise ValueError("provide --wards/--edges or --demo-wards")
    return read_edge_list(args.wards, args.edges)


def _fit_config(args) -> FitConfig:
    return FitConfig(
        iterations=int(_resolve(args, "iterations", BSBT_DEFAULTS, int)),
        burn_in=int(_resolve(args, "burn_in", BSBT_DEFAULTS, int)),
        chi=float(_resolve(args, "chi", BSBT_DEFAULTS, float)),
        omega=float(_resolve(args, "omega", BSBT_DEFAULTS, float)),
        seed=args.seed,
    )


def cmd_fit(args):
    from .spatial import prior_covariance

    graph = _graph_for(args)
    records = read_comparisons(args.comparisons, graph, drop_unknown=args.drop_unknown)
    tallies = tally(records, graph)
    summary = fit(tallies, prior_covariance(graph, args.alpha_sq), _fit_config(args))
    write_results_csv(summary, args.out)
    if args.chain_dump:
        write_chain_csv(summary, args.chain_dump)
    lo, hi = summary.alpha_sq_interval
    print(f"fitted {tallies.total_comparisons} comparisons over {graph.n} wards; "
          f"alpha posterior median {np.sqrt(summary.alpha_sq_median):.3g} "
          f"(90% interval {np.sqrt(lo):.3g}..{np.sqrt(hi):.3g})")


def _cluster_config(args, beta=None) -> ClusterConfig:
    return ClusterConfig(
        iterations=int(_resolve(args, "iterations", CLUSTER_DEFAULTS, int)),
        burn_in=int(_resolve(args, "burn_in", CLUSTER_DEFAULTS, int)),
        beta=float(beta if beta is not None
                   else _resolve(args, "beta", CLUSTER_DEFAULTS, float)),
        seed=args.seed,
        affinity=args.affinity,
    )


def cmd_cluster(args):
    graph = _graph_for(args)
    records = read_comparisons(args.comparisons, graph, drop_unknown=args.drop_unknown)
    tallies = tally(records, graph)
    base = NIGBase(
        mu0=float(_resolve(args, "mu0", CLUSTER_DEFAULTS, float)),
        alpha0=float(_resolve(args, "alpha0", CLUSTER_DEFAULTS, float)),
        beta0=float(_resolve(args, "beta0", CLUSTER_DEFAULTS, float)),
    )
    posterior = fit_clustered(tallies, graph, base, _cluster_config(args))
    write_cluster_csv(posterior, graph, args.out_clusters)
    write_k_posterior_csv(posterior, args.out_k)
    if args.out_results:
        write_results_csv_like(posterior, args.out_results)
    print(f"modal K = {posterior.modal_k}; "
          f"P(K = {posterior.modal_k}) = {posterior.k_posterior[posterior.modal_k]:.3f}")

    if args.beta_sweep:
        if not args.beta_sweep_out:
            raise ValueError("--beta-sweep requires --beta-sweep-out")
        rows = []
        for raw in args.beta_sweep.split(","):
            beta = float(raw)
            swept = fit_clustered(tallies, graph, base, _cluster_config(args, beta=beta))
            k = swept.modal_k
            rows.append([repr(beta), k, repr(swept.k_posterior.get(3, 0.0))])
        with open(args.beta_sweep_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["beta", "modal_k", "p_three_clusters"])
            writer.writerows(rows)


def write_results_csv_like(posterior, path):
    # ClusterPosterior carries the same per-ward summary fields
    write_results_csv(posterior, path)


def cmd_schedule(args):
    graph = _graph_for(args)
    dist = build_schedule(args.mechanism, graph, alpha_sq=args.alpha_sq)
    write_schedule_csv(dist, graph.ward_ids, args.out)
    if args.draw:
        if not args.draw_out:
            raise ValueError("--draw requires --draw-out")
        rng = np.random.default_rng(args.seed)
        pairs = draw_schedule(dist, args.draw, rng)
        with open(args.draw_out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["ward_a", "ward_b"])
            for i, j in pairs:
                writer.writerow([graph.ward_ids[i], graph.ward_ids[j]])
    print(f"{args.mechanism} schedule over {dist.probabilities.size} pairs")


def cmd_simulate(args):
    graph = _graph_for(args)
    report = run_design_study(DesignStudyConfig(
        graph=graph,
        alpha=args.alpha,
        comparisons=args.comparisons,
        replicates=args.replicates,
        iterations=args.iterations,
        burn_in=args.burn_in,
        seed=args.seed,
        workers=args.parallel_replicates,
    ))
    write_study_report(report, args.out_detail, args.out_summary)
    for mech in report.mechanisms:
        print(f"{mech}: mean {report.mean[mech]:.4f} "
              f"min {report.minimum[mech]:.4f} max {report.maximum[mech]:.4f}")


def cmd_bench(args):
    graph = _graph_for(args)
    report = run_sampler_benchmark(graph, BenchmarkConfig(
        alpha=args.alpha,
        comparisons=args.comparisons,
        iterations=args.iterations,
        burn_in=args.burn_in,
        seed=args.seed,
    ))
    write_benchmark_report(report, args.out)
    for sampler in report.ess_per_s:
        med, lo, hi = report.stats(sampler)
        print(f"{sampler}: median ESS/s {med:.2f} (min {lo:.2f}, max {hi:.2f})")


def cmd_serve(args):
    import uvicorn

    from .service import StudyService, create_app

    service = StudyService(args.data_dir)
    app = create_app(service)
    uvicorn.run(app, host=args.host, port=args.port)


def cmd_sensitivity(args):
    from scipy.stats import pearsonr, spearmanr

    from .spatial import prior_covariance

    graph = _graph_for(args)
    records = read_comparisons(args.comparisons, graph, drop_unknown=args.drop_unknown)
    judge = args.judge
    subsets = {
        "all": records,
        f"not_{judge}": [r for r in records if r.judge != judge],
        f"only_{judge}": [r for r in records if r.judge == judge],
    }
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prior = prior_covariance(graph, args.alpha_sq)
    medians = {}
    for name, subset in subsets.items():
        if not subset:
            print(f"subset {name}: empty, skipped")
            continue
        summary = fit(tally(subset, graph), prior, _fit_config(args))
        write_results_csv(summary, out_dir / f"results_{name}.csv")
        medians[name] = summary.median
    with open(out_dir / "correlations.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subset_a", "subset_b", "pearson", "spearman"])
        names = list(medians)
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                pe = pearsonr(medians[names[a]], medians[names[b]]).statistic
                sp = spearmanr(medians[names[a]], medians[names[b]]).statistic
                writer.writerow([names[a], names[b], repr(float(pe)), repr(float(sp))])
                print(f"{names[a]} vs {names[b]}: pearson {pe:.3f} spearman {sp:.3f}")


if __name__ == "__main__":
    sys.exit(main())
