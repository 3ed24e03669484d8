"""Loss functions, synthetic truths, and the Monte-Carlo benchmark harness.

A benchmark is a declarative config (truth distribution, domain size, a grid
of sample sizes, trial count, estimator list, seed). Each trial draws counts,
runs every estimator, and records KL risk plus regret against the separable
oracle, the paper-style proxy for the intractable permutation-invariant
oracle. Trials get their own RNG streams derived from (seed, n-index, trial),
so results are identical no matter how the work is scheduled.
"""

from __future__ import annotations

import concurrent.futures
import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .estimators import (
    EstimatorSpec,
    EstimatorUndefinedError,
    ProbabilityEstimate,
    parse_estimator_spec,
)
from .mixture import CountsVector, InfeasiblePriorError
from .oracles import TrueDistribution, natural_oracle, separable_oracle
from .solver import SolverConfig

__all__ = [
    "DistributionSpec",
    "ExperimentConfig",
    "TrialResult",
    "AggregateRow",
    "kl_divergence",
    "generalized_kl",
    "sample_counts",
    "make_distribution",
    "parse_distribution_spec",
    "run_benchmark",
    "corpus_experiment",
    "smoothing_table",
    "write_trials_csv",
    "write_aggregate_csv",
    "TRIALS_HEADER",
    "AGGREGATE_HEADER",
]

log = logging.getLogger(__name__)

TRIALS_HEADER = [
    "distribution", "k", "n", "trial", "estimator",
    "kl_risk", "regret", "gen_kl_regret", "failed", "wall_ms",
]
AGGREGATE_HEADER = [
    "distribution", "k", "n", "estimator",
    "mean_risk", "se_risk", "mean_regret", "se_regret", "n_failures",
]

# Truth families whose draw is random, so each trial must redraw.
_RANDOM_TRUTHS = ("dirichlet", "sqrt_cauchy")


def kl_divergence(p_true: np.ndarray, p_hat: ProbabilityEstimate) -> float:
    """KL(p* || p_hat); +inf when the estimate gives zero to a real symbol.

    Only normalized estimates are accepted; comparing against unnormalized
    mass vectors silently changes the metric, so it is a contract error.
    """
    if not p_hat.normalized:
        raise ValueError("kl_divergence requires a normalized estimate")
    p = np.asarray(p_true, dtype=float)
    q = p_hat.probs
    if p.shape != q.shape:
        raise ValueError("dimension mismatch between truth and estimate")
    support = p > 0
    if np.any(q[support] == 0):
        return float("inf")
    ps, qs = p[support], q[support]
    return float(np.dot(ps, np.log(ps) - np.log(qs)))


def generalized_kl(a, b) -> float:
    """sum_i (a_i log(a_i / b_i) - a_i + b_i) for nonnegative a, positive b.

    The extension of KL to unnormalized vectors; each term is nonnegative by
    convexity, and terms with a_i = 0 reduce to b_i. Returns +inf if some
    a_i > 0 meets b_i = 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("generalized KL needs nonnegative inputs")
    pos = a > 0
    if np.any(b[pos] == 0):
        return float("inf")
    terms = np.array(b, dtype=float)
    ap, bp = a[pos], b[pos]
    # Each summand is >= 0 exactly; clip per term so rounding noise cannot
    # push the total negative.
    terms[pos] = np.maximum(ap * (np.log(ap) - np.log(bp)) - ap + bp, 0.0)
    return float(terms.sum())


def sample_counts(truth: TrueDistribution, sampling: str,
                  rng: np.random.Generator) -> CountsVector:
    """Draw a counts vector under the Poissonized or multinomial model."""
    if sampling == "poissonized":
        counts = rng.poisson(truth.nominal_n * truth.probs)
    elif sampling == "multinomial":
        counts = rng.multinomial(int(round(truth.nominal_n)), truth.probs)
    else:
        raise ValueError(f"unknown sampling mode {sampling!r}")
    return CountsVector(counts)


@dataclass(frozen=True)
class DistributionSpec:
    """Parsed synthetic-truth description."""

    kind: str
    params: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        if self.kind == "zipf":
            return f"zipf:alpha={self.params['alpha']:g}"
        if self.kind == "dirichlet":
            return f"dirichlet:c={self.params['c']:g}"
        if self.kind == "from_file":
            return f"from-file:{self.params['path']}"
        return self.kind.replace("_", "-")

    @property
    def is_random(self) -> bool:
        return self.kind in _RANDOM_TRUTHS


def parse_distribution_spec(text: str) -> DistributionSpec:
    """Parse truth strings: ``uniform``, ``step``, ``zipf:alpha=1.5``,
    ``dirichlet:c=0.5``, ``sqrt-cauchy``, ``from-file:path=counts.csv``."""
    head, _, body = text.strip().partition(":")
    head = head.strip().lower().replace("_", "-")
    kv = {}
    for item in body.split(","):
        if "=" in item:
            key, value = item.split("=", 1)
            kv[key.strip()] = value.strip()
        elif item.strip():
            kv["_bare"] = item.strip()
    if head == "uniform":
        return DistributionSpec("uniform")
    if head == "step":
        return DistributionSpec("step")
    if head == "zipf":
        alpha = float(kv.get("alpha", kv.get("_bare", "1")))
        if alpha <= 0:
            raise ValueError("zipf alpha must be positive")
        return DistributionSpec("zipf", {"alpha": alpha})
    if head == "dirichlet":
        c = float(kv.get("c", kv.get("_bare", "1")))
        if c <= 0:
            raise ValueError("dirichlet concentration must be positive")
        return DistributionSpec("dirichlet", {"c": c})
    if head == "sqrt-cauchy":
        return DistributionSpec("sqrt_cauchy")
    if head == "from-file":
        path = kv.get("path", kv.get("_bare"))
        if not path:
            raise ValueError("from-file distribution needs path=FILE")
        return DistributionSpec("from_file", {"path": path})
    raise ValueError(f"unrecognized distribution spec {text!r}")


def _load_distribution_file(path: str) -> np.ndarray:
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            values.append(float(row[-1]))
    arr = np.asarray(values, dtype=float)
    if arr.size == 0 or np.any(arr < 0) or arr.sum() <= 0:
        raise ValueError(f"{path} does not contain a usable nonnegative weight column")
    return arr / arr.sum()


def make_distribution(spec: DistributionSpec, k: int, rng: np.random.Generator,
                      nominal_n: float = 1.0) -> TrueDistribution:
    """Materialize a truth vector of length k for one trial."""
    if k < 2:
        raise ValueError("domain size k must be at least 2")
    if spec.kind == "uniform":
        probs = np.full(k, 1.0 / k)
    elif spec.kind == "step":
        # Light half at 1/(2k), heavy half at 3/(2k); odd k leaves the sum
        # slightly off one, so renormalize exactly then.
        probs = np.full(k, 3.0 / (2 * k))
        probs[: math.ceil(k / 2)] = 1.0 / (2 * k)
        if k % 2 == 1:
            probs = probs / probs.sum()
    elif spec.kind == "zipf":
        weights = np.arange(1, k + 1, dtype=float) ** -spec.params["alpha"]
        probs = weights / weights.sum()
    elif spec.kind == "dirichlet":
        probs = rng.dirichlet(np.full(k, spec.params["c"]))
        probs = probs / probs.sum()
    elif spec.kind == "sqrt_cauchy":
        weights = np.sqrt(np.abs(rng.standard_cauchy(k)))
        probs = weights / weights.sum()
    elif spec.kind == "from_file":
        probs = _load_distribution_file(spec.params["path"])
        if probs.size != k:
            raise ValueError(
                f"distribution file has {probs.size} symbols, config says k={k}"
            )
    else:
        raise ValueError(f"unknown distribution kind {spec.kind!r}")
    return TrueDistribution(probs=probs, nominal_n=nominal_n)


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one synthetic benchmark."""

    distribution: str
    k: int
    n_grid: tuple[float, ...]
    trials: int
    estimators: tuple[str, ...]
    oracles: tuple[str, ...] = ()
    sampling: str = "poissonized"
    seed: int = 0
    redraw_truth_per_trial: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        grid = tuple(float(n) for n in self.n_grid)
        if not grid or any(n <= 0 for n in grid) or list(grid) != sorted(grid):
            raise ValueError("n_grid must be a nonempty ascending sequence of positive reals")
        object.__setattr__(self, "n_grid", grid)
        object.__setattr__(self, "estimators", tuple(self.estimators))
        oracles = tuple(self.oracles)
        bad = set(oracles) - {"separable", "natural"}
        if bad:
            raise ValueError(f"unknown oracle names: {sorted(bad)}")
        object.__setattr__(self, "oracles", oracles)
        if self.sampling not in ("poissonized", "multinomial"):
            raise ValueError("sampling must be 'poissonized' or 'multinomial'")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        spec = parse_distribution_spec(self.distribution)
        if spec.is_random and not self.redraw_truth_per_trial:
            # A randomly drawn truth must be redrawn per trial by protocol.
            object.__setattr__(self, "redraw_truth_per_trial", True)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kwargs = dict(raw)
        if "solver" in kwargs and isinstance(kwargs["solver"], dict):
            kwargs["solver"] = SolverConfig(**kwargs["solver"])
        return cls(**kwargs)


@dataclass(frozen=True)
class TrialResult:
    """One estimator evaluated on one sampled trial."""

    n: float
    trial_index: int
    estimator_name: str
    kl_risk: float
    regret_vs_separable: float
    generalized_kl_regret: float
    wall_time: float
    failed: bool = False


@dataclass(frozen=True)
class AggregateRow:
    """Mean and standard error over the finite trials of one cell."""

    distribution: str
    k: int
    n: float
    estimator: str
    mean_risk: float
    se_risk: float
    mean_regret: float
    se_regret: float
    n_failures: int


def _trial_rng(seed: int, n_index: int, trial: int) -> np.random.Generator:
    return np.random.default_rng([seed, n_index, trial])


def _evaluate_trial(specs: list[EstimatorSpec], truth: TrueDistribution,
                    counts: CountsVector, n: float, trial: int) -> list[TrialResult]:
    sep_unnorm = separable_oracle(truth, counts)
    sep_norm = ProbabilityEstimate(sep_unnorm.probs / sep_unnorm.probs.sum(), normalized=True)
    oracle_risk_kl = kl_divergence(truth.probs, sep_norm)
    oracle_risk_gen = generalized_kl(truth.probs, sep_unnorm.probs)

    rows = []
    for spec in specs:
        start = time.perf_counter()
        failed = False
        risk = regret = gen_regret = float("nan")
        try:
            if spec.is_oracle:
                if spec.params["which"] == "separable-oracle":
                    estimate, risk = sep_norm, oracle_risk_kl
                else:
                    estimate = natural_oracle(truth, counts)
                    risk = kl_divergence(truth.probs, estimate)
            else:
                estimate = spec.evaluate(counts)
                risk = kl_divergence(truth.probs, estimate)
            regret = risk - oracle_risk_kl
            gen_regret = risk - oracle_risk_gen
        except (EstimatorUndefinedError, InfeasiblePriorError) as exc:
            failed = True
            log.debug("estimator %s failed on trial %d: %s", spec.name, trial, exc)
        rows.append(TrialResult(
            n=n,
            trial_index=trial,
            estimator_name=spec.name,
            kl_risk=risk,
            regret_vs_separable=regret,
            generalized_kl_regret=gen_regret,
            wall_time=time.perf_counter() - start,
            failed=failed,
        ))
    return rows


def run_benchmark(cfg: ExperimentConfig, threads: int = 1,
                  ) -> tuple[list[TrialResult], list[AggregateRow]]:
    """Run the full benchmark described by ``cfg``.

    Returns per-trial results plus per-(n, estimator) aggregates. Estimator
    failures (e.g. an undefined Good-Turing) and infinite-risk trials are
    excluded from the means and surfaced in the failure count. Output is
    deterministic for a fixed config regardless of ``threads``.
    """
    dist_spec = parse_distribution_spec(cfg.distribution)
    specs = [parse_estimator_spec(s, solver_cfg=cfg.solver) for s in cfg.estimators]
    for oracle in cfg.oracles:
        name = f"{oracle}-oracle"
        if all(s.name != name for s in specs):
            specs.append(parse_estimator_spec(name))

    fixed_truth: np.ndarray | None = None
    if not cfg.redraw_truth_per_trial:
        rng0 = _trial_rng(cfg.seed, 0, 0)
        fixed_truth = make_distribution(dist_spec, cfg.k, rng0).probs

    def one_trial(n_index: int, trial: int) -> list[TrialResult]:
        n = cfg.n_grid[n_index]
        rng = _trial_rng(cfg.seed, n_index, trial)
        if fixed_truth is None:
            truth = make_distribution(dist_spec, cfg.k, rng, nominal_n=n)
        else:
            truth = TrueDistribution(fixed_truth, nominal_n=n)
        counts = sample_counts(truth, cfg.sampling, rng)
        return _evaluate_trial(specs, truth, counts, n, trial)

    jobs = [(ni, t) for ni in range(len(cfg.n_grid)) for t in range(cfg.trials)]
    by_key: dict[tuple[int, int], list[TrialResult]] = {}
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(one_trial, ni, t): (ni, t) for ni, t in jobs}
            for fut in concurrent.futures.as_completed(futures):
                by_key[futures[fut]] = fut.result()
    else:
        for ni, t in jobs:
            by_key[(ni, t)] = one_trial(ni, t)

    results = [row for key in sorted(by_key) for row in by_key[key]]
    aggregates = aggregate_results(results, distribution=dist_spec.label, k=cfg.k)
    return results, aggregates


def aggregate_results(results: list[TrialResult], distribution: str,
                      k: int) -> list[AggregateRow]:
    """Group per-trial rows into mean/SE rows, excluding failures and infinities."""
    estimator_order: dict[str, None] = {}
    cells: dict[tuple[float, str], list[TrialResult]] = {}
    for row in results:
        estimator_order.setdefault(row.estimator_name, None)
        cells.setdefault((row.n, row.estimator_name), []).append(row)

    def mean_se(values: list[float]) -> tuple[float, float]:
        if not values:
            return float("nan"), float("nan")
        arr = np.asarray(values)
        se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
        return float(arr.mean()), se

    out = []
    ns = sorted({n for n, _ in cells})
    for n in ns:
        for name in estimator_order:
            # canonical trial order inside each cell, so the reduction is
            # bitwise identical no matter how trials were scheduled
            rows = sorted(cells.get((n, name), []), key=lambda r: r.trial_index)
            ok = [r for r in rows if not r.failed and math.isfinite(r.kl_risk)]
            failures = len(rows) - len(ok)
            mean_risk, se_risk = mean_se([r.kl_risk for r in ok])
            mean_regret, se_regret = mean_se([r.regret_vs_separable for r in ok])
            out.append(AggregateRow(
                distribution=distribution, k=k, n=n, estimator=name,
                mean_risk=mean_risk, se_risk=se_risk,
                mean_regret=mean_regret, se_regret=se_regret,
                n_failures=failures,
            ))
    return out


def corpus_experiment(
    corpus_counts: CountsVector,
    ratios,
    mode: str,
    estimators,
    trials: int,
    seed: int = 0,
    tokens: list[int] | None = None,
    solver_cfg: SolverConfig | None = None,
    threads: int = 1,
) -> tuple[list[TrialResult], list[AggregateRow]]:
    """Subsample a corpus and score estimators against its full frequencies.

    Ground truth is the empirical distribution of the whole corpus. In
    ``random`` mode each trial draws a Poissonized sample at rate
    ratio * total; ``consecutive`` mode takes the first ceil(ratio * total)
    tokens of the stream (``tokens``: symbol indices in corpus order), which
    therefore must be provided.
    """
    if mode not in ("random", "consecutive"):
        raise ValueError("mode must be 'random' or 'consecutive'")
    if corpus_counts.n_total == 0:
        raise ValueError("corpus is empty")
    if mode == "consecutive" and tokens is None:
        raise ValueError("consecutive mode needs the token stream, not just counts")
    ratios = [float(r) for r in (ratios if np.iterable(ratios) else [ratios])]
    if any(not 0 < r <= 1 for r in ratios):
        raise ValueError("sampling ratios must lie in (0, 1]")

    total = corpus_counts.n_total
    probs = corpus_counts.counts / total
    solver_cfg = solver_cfg or SolverConfig()
    specs = [parse_estimator_spec(s, solver_cfg=solver_cfg) for s in estimators]

    def one_trial(r_index: int, trial: int) -> list[TrialResult]:
        ratio = ratios[r_index]
        n = ratio * total
        truth = TrueDistribution(probs, nominal_n=n)
        if mode == "random":
            rng = _trial_rng(seed, r_index, trial)
            counts = sample_counts(truth, "poissonized", rng)
        else:
            m = math.ceil(ratio * total)
            prefix = np.bincount(np.asarray(tokens[:m]), minlength=corpus_counts.k)
            counts = CountsVector(prefix)
        return _evaluate_trial(specs, truth, counts, n, trial)

    jobs = [(ri, t) for ri in range(len(ratios)) for t in range(trials)]
    by_key: dict[tuple[int, int], list[TrialResult]] = {}
    if threads > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {pool.submit(one_trial, ri, t): (ri, t) for ri, t in jobs}
            for fut in concurrent.futures.as_completed(futures):
                by_key[futures[fut]] = fut.result()
    else:
        for ri, t in jobs:
            by_key[(ri, t)] = one_trial(ri, t)
    results = [row for key in sorted(by_key) for row in by_key[key]]
    aggregates = aggregate_results(results, distribution="corpus", k=corpus_counts.k)
    return results, aggregates


def smoothing_table(cfg: ExperimentConfig) -> tuple[list[str], list[list]]:
    """Per-symbol estimates from a single trial, for the smoothing figure.

    Uses trial 0 at the largest n in the grid. Columns: symbol, count,
    p_true, then one column per (non-oracle) estimator.
    """
    dist_spec = parse_distribution_spec(cfg.distribution)
    specs = [s for s in (parse_estimator_spec(t, solver_cfg=cfg.solver)
                         for t in cfg.estimators) if not s.is_oracle]
    n_index = len(cfg.n_grid) - 1
    n = cfg.n_grid[n_index]
    rng = _trial_rng(cfg.seed, n_index, 0)
    truth = make_distribution(dist_spec, cfg.k, rng, nominal_n=n)
    counts = sample_counts(truth, cfg.sampling, rng)

    header = ["symbol", "count", "p_true"] + [s.name for s in specs]
    columns = [spec.evaluate(counts).probs for spec in specs]
    rows = []
    for i in range(cfg.k):
        rows.append([i, int(counts.counts[i]), float(truth.probs[i])]
                    + [float(col[i]) for col in columns])
    return header, rows


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trials_csv(path, results: list[TrialResult], distribution: str, k: int) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRIALS_HEADER)
        for r in results:
            writer.writerow([
                distribution, k, _fmt(r.n), r.trial_index, r.estimator_name,
                _fmt(r.kl_risk), _fmt(r.regret_vs_separable),
                _fmt(r.generalized_kl_regret), int(r.failed),
                _fmt(round(r.wall_time * 1e3, 3)),
            ])


def write_aggregate_csv(path, aggregates: list[AggregateRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(AGGREGATE_HEADER)
        for a in aggregates:
            writer.writerow([
                a.distribution, a.k, _fmt(a.n), a.estimator,
                _fmt(a.mean_risk), _fmt(a.se_risk),
                _fmt(a.mean_regret), _fmt(a.se_regret), a.n_failures,
            ])
