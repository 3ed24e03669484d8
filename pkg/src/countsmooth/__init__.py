"""countsmooth: empirical-Bayes probability estimation from symbol counts.

Fits a discrete Poisson-mixture prior to observed counts by nonparametric
maximum likelihood, turns it into probability estimates for seen and unseen
symbols, and benchmarks the result in KL risk/regret against Good-Turing
variants, add-constant rules, and ground-truth-aware oracles.
"""

from .estimators import (
    EstimatorSpec,
    EstimatorUndefinedError,
    GTUndefinedError,
    ProbabilityEstimate,
    add_c,
    conditional_npmle,
    empirical,
    good_turing_original,
    modified_gt,
    modified_gt_profile,
    npmle_estimate,
    parse_estimator_spec,
    pretrained_bayes,
)
from .evaluation import (
    ExperimentConfig,
    TrialResult,
    corpus_experiment,
    generalized_kl,
    kl_divergence,
    make_distribution,
    parse_distribution_spec,
    run_benchmark,
    sample_counts,
)
from .mixture import (
    CountsVector,
    InfeasiblePriorError,
    MixingDistribution,
    PosteriorRule,
    Profile,
    gradient_D,
    load_prior,
    log_likelihood,
    mixture_pmf,
    poisson_log_pmf,
    posterior_mean,
    save_prior,
)
from .oracles import TrueDistribution, natural_oracle, pi_oracle_exact, separable_oracle
from .solver import (
    SolverConfig,
    SolverReport,
    build_grid,
    refit_weights,
    solve_npmle,
    solve_root_example,
)

__version__ = "0.1.0"
