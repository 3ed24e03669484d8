"""Probability estimators mapping a counts vector to a distribution over symbols.

Covers the classical baselines (empirical frequency, add-constant, the
original and modified Good-Turing rules) and the empirical-Bayes family built
on the NPMLE prior: the plain fit-then-Bayes estimator, a pretrained-prior
variant for out-of-sample use, and a conditional variant that applies the
mixture machinery only below a count threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mixture import (
    CountsVector,
    MixingDistribution,
    PosteriorRule,
    Profile,
    load_prior,
)
from .solver import SolverConfig, SolverReport, solve_npmle

__all__ = [
    "ProbabilityEstimate",
    "EstimatorSpec",
    "EstimatorUndefinedError",
    "GTUndefinedError",
    "empirical",
    "add_c",
    "good_turing_original",
    "modified_gt",
    "modified_gt_profile",
    "npmle_estimate",
    "pretrained_bayes",
    "conditional_npmle",
    "parse_estimator_spec",
]

ORACLE_SPEC_NAMES = ("separable-oracle", "natural-oracle")


class EstimatorUndefinedError(ValueError):
    """The estimator has no defined value on this input (a data pathology)."""


class GTUndefinedError(EstimatorUndefinedError):
    """Every Good-Turing numerator is zero, so the estimator is undefined."""


@dataclass(frozen=True)
class ProbabilityEstimate:
    """Per-symbol probability vector; ``normalized`` means it sums to one."""

    probs: np.ndarray
    normalized: bool = True
    degenerate: bool = False

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if probs.ndim != 1 or probs.size < 1:
            raise ValueError("probs must be a nonempty 1-D vector")
        if np.any(probs < 0) or np.any(~np.isfinite(probs)):
            raise ValueError("probs must be finite and nonnegative")
        if self.normalized and abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError(f"normalized estimate sums to {probs.sum()!r}")
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)


def _normalize(raw: np.ndarray, degenerate_ok: bool = False) -> ProbabilityEstimate:
    z = raw.sum()
    if z <= 0:
        if degenerate_ok:
            k = raw.size
            return ProbabilityEstimate(np.full(k, 1.0 / k), normalized=True, degenerate=True)
        raise GTUndefinedError("all unnormalized masses are zero")
    return ProbabilityEstimate(raw / z, normalized=True)


def empirical(counts: CountsVector) -> ProbabilityEstimate:
    """Plain relative frequencies N_i / N_total."""
    if counts.n_total == 0:
        raise EstimatorUndefinedError("empirical estimate undefined for an all-zero sample")
    return ProbabilityEstimate(counts.counts / counts.n_total, normalized=True)


def add_c(counts: CountsVector, c: float) -> ProbabilityEstimate:
    """Add-constant smoothing (N_i + c) / (N_total + c k).

    c = 1 is the Laplace rule, c = 1/2 Krichevsky-Trofimov.
    """
    if c <= 0:
        raise ValueError("c must be positive")
    return ProbabilityEstimate(
        (counts.counts + c) / (counts.n_total + c * counts.k), normalized=True
    )


def good_turing_original(counts: CountsVector) -> ProbabilityEstimate:
    """Unsmoothed Good-Turing: mass proportional to (N_i + 1) Phi_{N_i+1} / Phi_{N_i}.

    Assigns zero to the most frequent symbols and is undefined outright when
    every numerator vanishes (e.g. a single observed symbol); raises
    :class:`GTUndefinedError` in that case.
    """
    if counts.n_total == 0:
        raise EstimatorUndefinedError("Good-Turing requires a nonempty sample")
    profile = counts.profile()
    n = counts.counts
    phi_next = np.array([profile.entries.get(int(y) + 1, 0) for y in n], dtype=float)
    phi_this = np.array([profile.entries[int(y)] for y in n], dtype=float)
    raw = (n + 1.0) * phi_next / phi_this
    return _normalize(raw)


def _modified_gt_raw(counts: CountsVector, gt_branch: np.ndarray) -> np.ndarray:
    profile = counts.profile()
    n = counts.counts
    n_total = float(counts.n_total)
    phi_next = np.array([profile.entries.get(int(y) + 1, 0) for y in n], dtype=float)
    phi_this = np.array([profile.entries[int(y)] for y in n], dtype=float)
    gt_mass = (n + 1.0) / n_total * (phi_next + 1.0) / phi_this
    emp_mass = n / n_total
    return np.where(gt_branch, gt_mass, emp_mass)


def modified_gt(counts: CountsVector, y0: int) -> ProbabilityEstimate:
    """Good-Turing with +1 smoothing below the count threshold y0, empirical above."""
    if counts.n_total == 0:
        raise EstimatorUndefinedError("modified Good-Turing requires a nonempty sample")
    if y0 < 0:
        raise ValueError("y0 must be nonnegative")
    return _normalize(_modified_gt_raw(counts, counts.counts <= y0))


def modified_gt_profile(counts: CountsVector) -> ProbabilityEstimate:
    """Modified Good-Turing with the adaptive branch rule N_i <= Phi_{N_i+1}.

    Replaces the fixed threshold with the profile itself: symbols rarer than
    the next multiplicity class stay on the Good-Turing branch.
    """
    if counts.n_total == 0:
        raise EstimatorUndefinedError("modified Good-Turing requires a nonempty sample")
    profile = counts.profile()
    phi_next = np.array(
        [profile.entries.get(int(y) + 1, 0) for y in counts.counts], dtype=np.int64
    )
    return _normalize(_modified_gt_raw(counts, counts.counts <= phi_next))


def _bayes_numerators(counts: CountsVector, prior: MixingDistribution,
                      tau: float, rho: float) -> np.ndarray:
    rule = PosteriorRule.build(prior, counts.counts, rho=rho)
    theta = np.array([rule.value(int(y)) for y in counts.counts])
    if tau > 0:
        theta = theta + tau * (counts.counts == 0)
    return theta


def npmle_estimate(
    counts: CountsVector,
    tau: float = 0.0,
    rho: float = 0.0,
    solver_cfg: SolverConfig | None = None,
) -> tuple[ProbabilityEstimate, SolverReport]:
    """Fit the NPMLE prior on the counts and apply its posterior-mean rule.

    The unnormalized mass of symbol i is theta(N_i; rho) + tau 1{N_i = 0},
    then everything is normalized. Defaults tau = rho = 0 make the estimator
    fully tuning-parameter-free; in the degenerate event that all mass is
    zero (a prior concentrated at 0, only possible with tau = 0) the uniform
    distribution is returned with ``degenerate=True`` instead of failing, so
    simulation loops survive the pathology.
    """
    if tau < 0 or rho < 0:
        raise ValueError("tau and rho must be nonnegative")
    report = solve_npmle(counts.profile(), solver_cfg)
    raw = _bayes_numerators(counts, report.solution, tau, rho)
    return _normalize(raw, degenerate_ok=True), report


def pretrained_bayes(
    counts: CountsVector,
    prior: MixingDistribution,
    n_scale: float,
    tau: float = 0.0,
    rho: float = 0.0,
) -> ProbabilityEstimate:
    """Bayes rule under a prior fitted elsewhere, rescaled to this sample size.

    Atom rates scale linearly with the total count, so a prior learned at
    total count ``n_scale`` is mapped onto this sample by multiplying every
    atom by N_total / n_scale before applying the rule. No fitting happens.
    """
    if n_scale <= 0:
        raise ValueError("n_scale must be positive")
    if counts.n_total == 0:
        raise ValueError("pretrained Bayes requires a nonempty sample")
    rescaled = prior.scaled(counts.n_total / n_scale)
    raw = _bayes_numerators(counts, rescaled, tau, rho)
    return _normalize(raw, degenerate_ok=True)


def conditional_npmle(
    counts: CountsVector,
    count_threshold: int,
    tau: float = 0.0,
    rho: float = 0.0,
    solver_cfg: SolverConfig | None = None,
) -> ProbabilityEstimate:
    """NPMLE applied only to counts at or below a threshold.

    High counts carry enough signal for the empirical frequency, and keeping
    them out of the fit avoids gradient polynomials of enormous degree. The
    low-count block S gets p_S * q_i, where q is the NPMLE estimate within S
    and p_S = (sum of S counts) / N_total; the rest keep N_i / N_total.
    """
    if count_threshold < 1:
        raise ValueError("count_threshold must be a positive integer")
    if counts.n_total == 0:
        raise ValueError("conditional NPMLE requires a nonempty sample")
    low = counts.counts <= count_threshold
    if not np.any(low):
        return empirical(counts)
    if np.all(low):
        est, _ = npmle_estimate(counts, tau=tau, rho=rho, solver_cfg=solver_cfg)
        return est

    low_counts = CountsVector(counts.counts[low])
    p_low = low_counts.n_total / counts.n_total
    if low_counts.n_total == 0:
        # No observations inside S at all: all of S's mass estimate is zero.
        q = np.full(low_counts.k, 1.0 / low_counts.k)
    else:
        q = npmle_estimate(low_counts, tau=tau, rho=rho, solver_cfg=solver_cfg)[0].probs
    out = counts.counts / counts.n_total
    out[low] = p_low * q
    return ProbabilityEstimate(out, normalized=True)


@dataclass(frozen=True)
class EstimatorSpec:
    """Parsed estimator description; ``name`` is the label used in outputs."""

    name: str
    kind: str
    params: dict = field(default_factory=dict)

    @property
    def is_oracle(self) -> bool:
        return self.kind == "oracle"

    def evaluate(self, counts: CountsVector) -> ProbabilityEstimate:
        if self.kind == "empirical":
            return empirical(counts)
        if self.kind == "add_c":
            return add_c(counts, self.params["c"])
        if self.kind == "good_turing_original":
            return good_turing_original(counts)
        if self.kind == "modified_gt":
            return modified_gt(counts, self.params["y0"])
        if self.kind == "modified_gt_profile":
            return modified_gt_profile(counts)
        if self.kind == "npmle":
            tau, rho = self._tau_rho(counts)
            est, _ = npmle_estimate(counts, tau=tau, rho=rho,
                                    solver_cfg=self.params.get("solver_cfg"))
            return est
        if self.kind == "pretrained_bayes":
            prior, n_scale = self.params["prior"], self.params["n_scale"]
            tau, rho = self._tau_rho(counts)
            return pretrained_bayes(counts, prior, n_scale, tau=tau, rho=rho)
        if self.kind == "conditional_npmle":
            tau, rho = self._tau_rho(counts)
            return conditional_npmle(counts, self.params["threshold"], tau=tau, rho=rho,
                                     solver_cfg=self.params.get("solver_cfg"))
        if self.kind == "oracle":
            raise TypeError(f"{self.name} needs the true distribution; "
                            "it is evaluated by the benchmark harness")
        raise ValueError(f"unknown estimator kind {self.kind!r}")

    def _tau_rho(self, counts: CountsVector) -> tuple[float, float]:
        if self.params.get("theory"):
            # Theory-mode regularization: tau = 1/k, rho = (n k)^-5.
            k = counts.k
            n = max(counts.n_total, 1)
            return 1.0 / k, float(n * k) ** -5
        return self.params.get("tau", 0.0), self.params.get("rho", 0.0)


def _parse_kv(body: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in body.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            out[item] = "true"
            continue
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_estimator_spec(text: str, solver_cfg: Optional[SolverConfig] = None) -> EstimatorSpec:
    """Parse CLI estimator strings.

    Examples: ``empirical``, ``laplace``, ``kt``, ``add-c:c=0.5``, ``gt``,
    ``mgt:y0=5``, ``mgt-profile``, ``npmle``, ``npmle:tau=1e-4,rho=1e-30``,
    ``npmle:theory``, ``pretrained:prior=prior.json``,
    ``cond-npmle:threshold=20000``, plus the oracle rows ``separable-oracle``
    and ``natural-oracle`` understood by the benchmark harness.
    """
    text = text.strip()
    head, _, body = text.partition(":")
    head = head.strip().lower()
    kv = _parse_kv(body)

    if head in ORACLE_SPEC_NAMES:
        return EstimatorSpec(name=head, kind="oracle", params={"which": head})
    if head == "empirical":
        return EstimatorSpec(name="empirical", kind="empirical")
    if head == "laplace":
        return EstimatorSpec(name="laplace", kind="add_c", params={"c": 1.0})
    if head in ("kt", "krichevsky-trofimov"):
        return EstimatorSpec(name="kt", kind="add_c", params={"c": 0.5})
    if head == "add-c":
        c = float(kv.get("c", "1"))
        return EstimatorSpec(name=f"add-c:c={c:g}", kind="add_c", params={"c": c})
    if head == "gt":
        return EstimatorSpec(name="gt", kind="good_turing_original")
    if head == "mgt":
        if "y0" not in kv:
            # Without a threshold, fall back to the profile-adaptive rule used
            # in the experiments.
            return EstimatorSpec(name="mgt-profile", kind="modified_gt_profile")
        y0 = int(kv["y0"])
        return EstimatorSpec(name=f"mgt:y0={y0}", kind="modified_gt", params={"y0": y0})
    if head == "mgt-profile":
        return EstimatorSpec(name="mgt-profile", kind="modified_gt_profile")
    if head == "npmle":
        params: dict = {"solver_cfg": solver_cfg}
        if kv.pop("theory", None):
            params["theory"] = True
            return EstimatorSpec(name="npmle:theory", kind="npmle", params=params)
        name = "npmle"
        if "tau" in kv:
            params["tau"] = float(kv["tau"])
            name += f":tau={params['tau']:g}"
        if "rho" in kv:
            params["rho"] = float(kv["rho"])
            name += ("," if ":" in name else ":") + f"rho={params['rho']:g}"
        return EstimatorSpec(name=name, kind="npmle", params=params)
    if head == "pretrained":
        if "prior" not in kv:
            raise ValueError("pretrained estimator needs prior=FILE")
        prior, n_scale = load_prior(kv["prior"])
        params = {"prior": prior, "n_scale": n_scale}
        if "tau" in kv:
            params["tau"] = float(kv["tau"])
        if "rho" in kv:
            params["rho"] = float(kv["rho"])
        return EstimatorSpec(name="pretrained", kind="pretrained_bayes", params=params)
    if head == "cond-npmle":
        if "threshold" not in kv:
            raise ValueError("cond-npmle needs threshold=POSITIVE_INT")
        params = {"threshold": int(kv["threshold"]), "solver_cfg": solver_cfg}
        if "tau" in kv:
            params["tau"] = float(kv["tau"])
        if "rho" in kv:
            params["rho"] = float(kv["rho"])
        return EstimatorSpec(
            name=f"cond-npmle:threshold={params['threshold']}",
            kind="conditional_npmle",
            params=params,
        )
    raise ValueError(f"unrecognized estimator spec {text!r}")
