"""Command-line interface.

Subcommands: ``fit`` (NPMLE prior from a counts file), ``estimate``
(probabilities for one estimator), ``benchmark`` (synthetic risk/regret
sweep from a YAML config), ``corpus`` (subsampled-corpus experiment), and
``export-prior`` (fit a prior straight from a text corpus for pretrained
Bayes). Everything emits CSV/JSON artifacts; figures are rendered from those
files by the companion plotting tool.

Exit codes: 0 ok, 1 internal error, 2 non-convergence under --strict,
3 estimator undefined on the given input, 4 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import yaml

from .estimators import EstimatorUndefinedError, parse_estimator_spec
from .evaluation import (
    ExperimentConfig,
    corpus_experiment,
    run_benchmark,
    smoothing_table,
    write_aggregate_csv,
    write_trials_csv,
    parse_distribution_spec,
)
from .ingestion import counts_from_stream, load_counts_file, tokenize
from .mixture import save_prior
from .solver import SolverConfig, solve_npmle

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_NO_CONVERGENCE = 2
EXIT_ESTIMATOR_UNDEFINED = 3
EXIT_USAGE = 4

log = logging.getLogger("countsmooth")


class UsageError(ValueError):
    """Bad arguments or unusable input files."""


def _solver_config(args: argparse.Namespace) -> SolverConfig:
    return SolverConfig(
        grid_multiplier=args.grid_multiplier,
        max_grid_points=args.max_grid_points,
        kkt_tol=args.kkt_tol,
        max_fw_iters=args.max_fw_iters,
    )


def _add_solver_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("solver")
    group.add_argument("--grid-multiplier", type=int, default=10,
                       help="grid points per unit of the maximum count (default 10)")
    group.add_argument("--max-grid-points", type=int, default=100_000,
                       help="hard cap on the number of grid points")
    group.add_argument("--kkt-tol", type=float, default=1e-6,
                       help="first-order optimality tolerance")
    group.add_argument("--max-fw-iters", type=int, default=500,
                       help="maximum Frank-Wolfe iterations")


def _report_dict(report) -> dict:
    return {
        "atoms": [float(a) for a in report.solution.atoms],
        "weights": [float(w) for w in report.solution.weights],
        "log_likelihood": report.final_log_likelihood,
        "max_gradient": report.max_gradient,
        "kkt_gap": report.max_gradient - 1.0,
        "fw_iterations": report.fw_iterations,
        "converged": report.converged,
    }


def cmd_fit(args: argparse.Namespace) -> int:
    try:
        _, counts = load_counts_file(args.counts_file)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    report = solve_npmle(counts.profile(), _solver_config(args))
    save_prior(report.solution, n_scale=counts.n_total, path=args.output)
    summary = _report_dict(report)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    print(f"prior written to {args.output}")
    print(f"  atoms: {len(summary['atoms'])}  log-likelihood: {summary['log_likelihood']:.6f}")
    print(f"  kkt gap: {summary['kkt_gap']:.3e}  iterations: {summary['fw_iterations']}"
          f"  converged: {summary['converged']}")
    if not report.converged:
        log.warning("solver did not reach the optimality tolerance")
        if args.strict:
            return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    try:
        symbols, counts = load_counts_file(args.counts_file)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    spec_text = args.estimator
    if args.prior and spec_text.strip().lower() == "pretrained":
        spec_text = f"pretrained:prior={args.prior}"
    try:
        spec = parse_estimator_spec(spec_text, solver_cfg=_solver_config(args))
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if spec.is_oracle:
        raise UsageError("oracle estimators need ground truth; use them in `benchmark`")
    estimate = spec.evaluate(counts)

    out = open(args.output, "w", newline="", encoding="utf-8") if args.output else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(["symbol", "count", "prob"])
        for sym, cnt, prob in zip(symbols, counts.counts, estimate.probs):
            writer.writerow([sym, int(cnt), repr(float(prob))])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _load_experiment_config(path: str, seed_override: int | None) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: config must be a mapping of fields")
    if seed_override is not None:
        raw["seed"] = seed_override
    try:
        cfg = ExperimentConfig.from_dict(raw)
        parse_distribution_spec(cfg.distribution)
        for text in cfg.estimators:
            parse_estimator_spec(text, solver_cfg=cfg.solver)
    except (TypeError, ValueError, OSError) as exc:
        raise UsageError(f"{path}: {exc}") from exc
    return cfg


def cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = _load_experiment_config(args.config, args.seed)
    results, aggregates = run_benchmark(cfg, threads=args.threads)
    prefix = args.output or "benchmark"
    trials_path = args.out_trials or f"{prefix}_trials.csv"
    agg_path = args.out_aggregate or f"{prefix}_aggregate.csv"
    dist_label = parse_distribution_spec(cfg.distribution).label
    write_trials_csv(trials_path, results, distribution=dist_label, k=cfg.k)
    write_aggregate_csv(agg_path, aggregates)
    print(f"wrote {trials_path} and {agg_path}")
    if args.smoothing_out:
        header, rows = smoothing_table(cfg)
        with open(args.smoothing_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row in rows:
                writer.writerow([row[0], row[1]] + [repr(float(v)) for v in row[2:]])
        print(f"wrote {args.smoothing_out}")
    return EXIT_OK


def cmd_corpus(args: argparse.Namespace) -> int:
    try:
        with open(args.text_file, encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    stream = tokenize(raw)
    if not stream.tokens:
        raise UsageError(f"{args.text_file}: no tokens after normalization")
    counts = counts_from_stream(stream)
    solver_cfg = _solver_config(args)
    try:
        for text in args.estimator:
            parse_estimator_spec(text, solver_cfg=solver_cfg)
    except (OSError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    tokens = stream.token_ids.tolist() if args.mode == "consecutive" else None
    results, aggregates = corpus_experiment(
        counts,
        ratios=args.ratio,
        mode=args.mode,
        estimators=args.estimator,
        trials=args.trials,
        seed=args.seed if args.seed is not None else 0,
        tokens=tokens,
        solver_cfg=solver_cfg,
        threads=args.threads,
    )
    out_path = args.output or "corpus_trials.csv"
    write_trials_csv(out_path, results, distribution="corpus", k=counts.k)
    if args.out_aggregate:
        write_aggregate_csv(args.out_aggregate, aggregates)
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_export_prior(args: argparse.Namespace) -> int:
    try:
        with open(args.text_file, encoding="utf-8") as fh:
            raw = fh.read()
    except OSError as exc:
        raise UsageError(str(exc)) from exc
    stream = tokenize(raw)
    if not stream.tokens:
        raise UsageError(f"{args.text_file}: no tokens after normalization")
    counts = counts_from_stream(stream)
    report = solve_npmle(counts.profile(), _solver_config(args))
    save_prior(report.solution, n_scale=counts.n_total, path=args.output)
    print(f"prior fitted on {counts.n_total} tokens over {counts.k} words"
          f" -> {args.output}")
    if not report.converged:
        log.warning("solver did not reach the optimality tolerance")
        if args.strict:
            return EXIT_NO_CONVERGENCE
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countsmooth",
        description="Empirical-Bayes probability estimation from symbol counts.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="RNG seed (overrides config seed where applicable)")
    common.add_argument("--threads", type=int, default=1,
                        help="trial-level parallelism (results are thread-count invariant)")
    common.add_argument("--output", default=None, help="primary output path")

    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", parents=[common],
                           help="fit the NPMLE prior on a counts file")
    p_fit.add_argument("counts_file")
    p_fit.add_argument("--report", default=None, help="also write a JSON solver report")
    p_fit.add_argument("--strict", action="store_true",
                       help="exit 2 if the solver does not converge")
    _add_solver_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_est = sub.add_parser("estimate", parents=[common],
                           help="estimate symbol probabilities with one estimator")
    p_est.add_argument("counts_file")
    p_est.add_argument("--estimator", required=True,
                       help="e.g. empirical, laplace, kt, add-c:c=0.5, gt, mgt:y0=5, "
                            "mgt-profile, npmle, npmle:tau=1e-4, "
                            "pretrained:prior=FILE, cond-npmle:threshold=20000")
    p_est.add_argument("--prior", default=None,
                       help="prior JSON for the pretrained estimator")
    _add_solver_flags(p_est)
    p_est.set_defaults(func=cmd_estimate)

    p_bench = sub.add_parser("benchmark", parents=[common],
                             help="run a synthetic benchmark from a YAML config")
    p_bench.add_argument("config")
    p_bench.add_argument("--out-trials", default=None,
                         help="per-trial CSV path (default <output>_trials.csv)")
    p_bench.add_argument("--out-aggregate", default=None,
                         help="aggregate CSV path (default <output>_aggregate.csv)")
    p_bench.add_argument("--smoothing-out", default=None,
                         help="also write a per-symbol estimate CSV from one trial")
    p_bench.set_defaults(func=cmd_benchmark)

    p_corp = sub.add_parser("corpus", parents=[common],
                            help="subsample a text corpus and score estimators")
    p_corp.add_argument("text_file")
    p_corp.add_argument("--ratio", type=float, action="append", required=True,
                        help="sampling ratio in (0, 1]; repeat for a sweep")
    p_corp.add_argument("--mode", choices=["random", "consecutive"], default="random")
    p_corp.add_argument("--estimator", action="append", required=True,
                        help="estimator spec; repeat for several")
    p_corp.add_argument("--trials", type=int, default=1)
    p_corp.add_argument("--out-aggregate", default=None)
    _add_solver_flags(p_corp)
    p_corp.set_defaults(func=cmd_corpus)

    p_exp = sub.add_parser("export-prior", parents=[common],
                           help="fit a prior on a whole text corpus (pretrained Bayes)")
    p_exp.add_argument("text_file")
    p_exp.add_argument("--strict", action="store_true",
                       help="exit 2 if the solver does not converge")
    _add_solver_flags(p_exp)
    p_exp.set_defaults(func=cmd_export_prior)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage problems.
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command in ("fit", "export-prior") and args.output is None:
        args.output = "prior.json"
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EstimatorUndefinedError as exc:
        print(f"estimator undefined: {exc}", file=sys.stderr)
        return EXIT_ESTIMATOR_UNDEFINED
    except Exception as exc:  # pragma: no cover - defensive
        log.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
