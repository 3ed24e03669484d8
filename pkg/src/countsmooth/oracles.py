"""Ground-truth-aware baseline estimators.

These rules see the true probabilities (up to relabeling) and mark the
performance ceiling the data-driven estimators are benchmarked against:

* separable oracle: per-symbol posterior mean under the empirical
  distribution of the true rates; unnormalized by construction.
* natural oracle: redistributes the true mass of each count class equally.
* permutation-invariant (PI) oracle: exact permanent-weighted posterior,
  tractable only for tiny alphabets and used as a brute-force reference.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .estimators import ProbabilityEstimate
from .mixture import CountsVector, MixingDistribution, PosteriorRule

__all__ = [
    "TrueDistribution",
    "ImpossibleCountError",
    "separable_oracle",
    "natural_oracle",
    "pi_oracle_exact",
]

PI_ORACLE_MAX_K = 10


class ImpossibleCountError(ValueError):
    """A count has probability zero under every true rate."""


@dataclass(frozen=True)
class TrueDistribution:
    """The ground-truth probability vector and the nominal sampling rate n."""

    probs: np.ndarray
    nominal_n: float

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probs must be a nonempty 1-D vector")
        if np.any(probs < 0) or np.any(~np.isfinite(probs)):
            raise ValueError("probs must be finite and nonnegative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs sum to {probs.sum()!r}, expected 1 within 1e-12")
        if not self.nominal_n > 0:
            raise ValueError("nominal_n must be positive")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)

    @property
    def k(self) -> int:
        return int(self.probs.size)

    def rate_mixture(self) -> MixingDistribution:
        """Empirical distribution of the true Poisson rates n * p_i."""
        rates = self.nominal_n * self.probs
        return MixingDistribution.from_unnormalized(rates, np.full(self.k, 1.0 / self.k))


def separable_oracle(truth: TrueDistribution, counts: CountsVector) -> ProbabilityEstimate:
    """Best per-symbol rule: posterior mean under the empirical rate mixture.

    Each symbol's estimate depends only on its own count. The raw values
    theta(N_i) / n need not sum to one, so the returned estimate is
    unnormalized; callers decide whether to renormalize.
    """
    if truth.k != counts.k:
        raise ValueError("truth and counts must cover the same symbols")
    g_k = truth.rate_mixture()
    rule = PosteriorRule.build(g_k, counts.counts, rho=0.0)
    try:
        values = np.array([rule.value(int(y)) for y in counts.counts])
    except ValueError as exc:
        raise ImpossibleCountError(
            "observed a count that no true rate can produce"
        ) from exc
    return ProbabilityEstimate(values / truth.nominal_n, normalized=False)


def natural_oracle(truth: TrueDistribution, counts: CountsVector) -> ProbabilityEstimate:
    """Spread the true total probability of each count class evenly within it."""
    if truth.k != counts.k:
        raise ValueError("truth and counts must cover the same symbols")
    out = np.empty(truth.k)
    for y in np.unique(counts.counts):
        group = counts.counts == y
        out[group] = truth.probs[group].sum() / group.sum()
    return ProbabilityEstimate(out, normalized=True)


def pi_oracle_exact(truth: TrueDistribution, counts: CountsVector) -> ProbabilityEstimate:
    """Exact permutation-invariant oracle by enumerating all k! relabelings.

    Evaluates sum_pi p*_{pi(i)} prod_j p*_{pi(j)}^{N_j} over the full
    symmetric group in log space (0^0 := 1), normalized by the same sum
    without the leading factor. Factorial cost, so k is capped at 10.
    """
    k = truth.k
    if k != counts.k:
        raise ValueError("truth and counts must cover the same symbols")
    if k > PI_ORACLE_MAX_K:
        raise ValueError(f"PI oracle enumeration is limited to k <= {PI_ORACLE_MAX_K}")

    with np.errstate(divide="ignore"):
        log_p = np.log(truth.probs)
    n = counts.counts

    log_terms = []          # log prod_j p_{pi(j)}^{N_j} per permutation
    log_num = [[] for _ in range(k)]
    for perm in itertools.permutations(range(k)):
        contrib = n * log_p[list(perm)]
        # 0^0 := 1, so zero counts contribute nothing even at p = 0.
        contrib = np.where(n == 0, 0.0, contrib)
        log_like = float(contrib.sum())
        if log_like == float("-inf"):
            continue
        log_terms.append(log_like)
        for i in range(k):
            if truth.probs[perm[i]] > 0:
                log_num[i].append(log_p[perm[i]] + log_like)

    if not log_terms:
        raise ValueError("every permutation has zero likelihood for these counts")
    log_denom = logsumexp(np.array(log_terms))
    out = np.array([
        float(np.exp(logsumexp(np.array(terms)) - log_denom)) if terms else 0.0
        for terms in log_num
    ])
    return ProbabilityEstimate(out, normalized=True)
